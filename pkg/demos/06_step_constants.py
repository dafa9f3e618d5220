# %% [markdown]
# # When the default step constants are too aggressive
#
# With `a0 = b0 = 1` the coupled `(x, r, y)` recursion of one agent with
# `T = 1` has a growing mode once the curvature `lambda = |Bbar|^2` of the
# hypergradient exceeds about 2. A slower upper step or a faster lower
# step fixes it.

# %%
import numpy as np

from madsbo.driver import RunConfig, madsbo_run
from madsbo.problems import scalar_reference


def radius(alpha, beta, lam):
    b = np.sqrt(lam)
    M = np.array([[1.0, -alpha, 0.0],
                  [alpha * beta * lam, 1.0 - alpha, alpha * b * (1.0 - beta)],
                  [beta * b, 0.0, 1.0 - beta]])
    return np.abs(np.linalg.eigvals(M)).max()


K = 2000
for a0, b0 in ((1.0, 1.0), (0.5, 4.0)):
    rs = [radius(a0 / np.sqrt(K), b0 / np.sqrt(K), lam) for lam in (1.0, 2.0, 4.0)]
    print(f"a0 = {a0}, b0 = {b0}: radius at lambda = 1, 2, 4: " + ", ".join(f"{r:.5f}" for r in rs))

# %% [markdown]
# The scalar reference problem has `Bbar = 2`, so `lambda = 4`.

# %%
prob = scalar_reference()
for a0, b0 in ((1.0, 1.0), (0.5, 4.0)):
    res = madsbo_run(RunConfig(K=K, a0=a0, b0=b0, stochastic=False), prob)
    print(f"a0 = {a0}, b0 = {b0}: final |grad Phi|^2 = {res.trace[-1].stationarity:.3e}")
