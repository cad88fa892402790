r"""
Many intercept tests with FDP control
=====================================

Test whether each of ``m`` responses has a nonzero intercept after adjusting for a
few shared covariates, then threshold the bootstrap p-values with
Benjamini-Hochberg.
"""

import numpy as np

from huberboot import MTestConfig, PanelData, bh_threshold, run_mtest, storey_threshold
from huberboot.simulation import NoiseModel, gen_noise

rng = np.random.default_rng(3)
n, s, m = 100, 3, 60
x = rng.standard_normal((n, s))
beta = rng.uniform(-1, 1, (s, m))
mu = np.zeros(m)
mu[:6] = 3 * np.sqrt(2 * np.log(m) / n)
y = mu + x @ beta + gen_noise(NoiseModel("wbl_mix"), (n, m), rng)
panel = PanelData(y, x)

res = run_mtest(panel, MTestConfig(B=300, alpha=0.1, seed=11), null_set=mu == 0)
print("rejected:", np.flatnonzero(res.rejected))
print(f"FDP={res.fdp:.3f} power={res.power:.3f}")

# %%
# BH and Storey's threshold select exactly the same hypotheses.
t = storey_threshold(res.p_values, 0.1)
print("same set:", np.array_equal(res.p_values <= t, bh_threshold(res.p_values, 0.1)[1]))

# %%
# Raising alpha can only add rejections.
for alpha in (0.01, 0.05, 0.1, 0.2):
    k, rej = bh_threshold(res.p_values, alpha)
    print(f"alpha={alpha:<5} k={k:<3} rejections={rej.sum()}")
