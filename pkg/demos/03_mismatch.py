# %% [markdown]
# # Averaging local hypergradients is not enough
#
# Two scalar agents with lower problems `g_i = (y - B_i x)^2 / 2` and upper
# problems `f_i = (y - a_i)^2 / 2`, with `B = (1, 3)` and `a = (0, 4)`. At
# `x = 1` the global problem is stationary, yet each agent's own
# hypergradient points somewhere else.

# %%
import numpy as np

from madsbo.higp import default_gamma
from madsbo.hypergrad import estimate_hypergradient, local_hypergradients, naive_local_average
from madsbo.netgraph import build_ring
from madsbo.problems import scalar_reference

prob = scalar_reference()
x = np.array([1.0])
print("local hypergradients  :", local_hypergradients(prob, np.array([[1.0, 1.0]])).ravel())
print("their average         :", naive_local_average(prob, x))
print("global hypergradient  :", prob.hypergradient(x))

# %% [markdown]
# The decentralized estimator solves the *averaged* system, so it lands on
# the global value.

# %%
W = build_ring(2, 0.4)
X, Y = prob.tile(x, prob.lower_solution(x))
for N in (5, 20, 80, 300):
    est = estimate_hypergradient(W, prob, X, Y, default_gamma(W, 1.0, 1.0), N)
    print(f"N = {N:3d}: estimate {est.ubar[0]:+.3e}")
