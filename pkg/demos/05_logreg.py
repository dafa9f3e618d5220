# %% [markdown]
# # Learning regularization weights for logistic regression
#
# Each agent trains a logistic model on its own data with a per-coordinate
# ridge penalty `exp(lambda_j)`. The upper level tunes `lambda` for the
# validation loss. Larger `het_rate` spreads the feature scales across
# agents.

# %%
import numpy as np

from madsbo.driver import RunConfig, madsbo_run
from madsbo.problems import make_problem

for r in (0.5, 1.0, 1.5):
    prob = make_problem("logreg", het_rate=r, seed=0, batch=10)
    res = madsbo_run(RunConfig(K=300, a0=3.0, master_seed=0), prob)
    first, last = res.trace[0], res.trace[-1]
    acc = prob.val_accuracy(res.state.Y.mean(axis=1))
    print(f"r = {r}: validation loss {first.upper_loss:.4f} -> {last.upper_loss:.4f} "
          f"({last.upper_loss / first.upper_loss:.2f}x), accuracy {acc:.3f}")
    print("   learned log-penalties:", np.round(res.xbar[:6], 2), "...")
