# %% [markdown]
# # Solving an averaged linear system without forming a matrix
#
# The agents want `z*` with `(sum_i H_i) z* = sum_i b_i` but only ever see
# products `H_i v`. Gradient tracking gets there with one product and two
# gossip rounds per iteration.

# %%
import numpy as np

from madsbo.higp import default_gamma, fixed_quad_oracle, higp_run, tracking_radius
from madsbo.netgraph import build_ring

rng = np.random.default_rng(1)
n, q = 8, 6


def spd(lo, hi):
    Q, _ = np.linalg.qr(rng.standard_normal((q, q)))
    return Q @ np.diag(rng.uniform(lo, hi, q)) @ Q.T


H = np.stack([spd(1.0, 2.0) for _ in range(n)])
B = rng.standard_normal((q, n))
z_star = np.linalg.solve(H.sum(axis=0), B.sum(axis=1))

W = build_ring(n, 0.4)
gamma = default_gamma(W, 1.0, 2.0)
res = higp_run(W, fixed_quad_oracle(H, B), gamma, 300, record=True)
print(f"gamma = {gamma:.3f}")
for t in (0, 25, 50, 100, 200, 300):
    print(f"round {t:3d}: max agent error {np.abs(res.z_history[t] - z_star[:, None]).max():.2e}")
print("largest tracking gap:", max(res.tracking_gaps))

# %% [markdown]
# ## Which stepsizes are stable?
#
# The ring has negative mixing eigenvalues, and those modes go unstable well
# before `gamma = 1/L`. The worst mode radius tells us where.

# %%
modes = np.linalg.eigvalsh(W.w)
for g in (0.05, 0.1, 0.2, 0.3, 0.4, 0.5):
    r = max(tracking_radius(m, h, g) for m in modes for h in (1.0, 2.0))
    print(f"gamma = {g:.2f}: worst radius {r:.4f} {'(unstable)' if r >= 1 else ''}")
