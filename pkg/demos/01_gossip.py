# %% [markdown]
# # Gossip on a ring
#
# Every agent holds a column of a `d x n` field. One gossip round replaces
# each column by a weighted average of its neighbours, `F @ W.T`.
# The second largest eigenvalue modulus `rho` sets how fast disagreement dies.

# %%
import numpy as np

from madsbo.netgraph import CommCounter, build_complete, build_ring, consensus_error, mix

for n, w in [(4, 0.4), (8, 0.4), (8, 0.2), (16, 0.4)]:
    W = build_ring(n, w)
    print(f"ring({n}, {w}): rho = {W.rho:.4f}, directed edges = {W.directed_edges}")
print("complete(8): rho =", build_complete(8).rho)

# %% [markdown]
# Repeated mixing keeps the average fixed and shrinks the spread by about
# `rho` per round.

# %%
W = build_ring(8, 0.4)
rng = np.random.default_rng(0)
F = rng.standard_normal((3, 8))
mean0 = F.mean(axis=1)
comm = CommCounter()
errs = []
for t in range(60):
    errs.append(consensus_error(F))
    F = mix(W, F, comm)

print("mean drift:", np.abs(F.mean(axis=1) - mean0).max())
rate = np.exp(np.polyfit(np.arange(20, 60), np.log(errs[20:]), 1)[0])
print(f"observed decay of the squared spread per round: {rate:.4f} (rho^2 = {W.rho ** 2:.4f})")
print("scalars sent:", comm.scalars, "=", 60, "rounds x", W.directed_edges, "edges x 3")
