r"""
Choosing tau from the data
==========================

Three ways to pick the robustification parameter: solving the censored equation,
the iteratively reweighted least squares loop, and Lepski's method.
"""

import math

import numpy as np

from huberboot import CalibrationConfig, Dataset, LepskiConfig, irls_fit, lepski_select
from huberboot.calibration import huber_proposal2, mom_fourth_moment, solve_censored_equation, truncated_mean

rng = np.random.default_rng(2)

# %%
# Univariate case: the censored equation has a closed form on each interval
# between sorted magnitudes.  With t = 1 it returns the Euclidean norm.
v = rng.standard_t(2.5, 500)
print("t=1:", solve_censored_equation(v, 1.0).tau, "norm:", np.linalg.norm(v))
sol = solve_censored_equation(v, math.log(500))
print(f"t=log n: tau={sol.tau:.3f}  residual={sol.equation_residual:.1e}")
# larger t means a lower truncation level
for t in (math.log(500), 50.0, 200.0):
    print(f"t={t:6.2f} truncated mean {truncated_mean(v + 3, t):.3f}  (plain mean {np.mean(v + 3):.3f})")

mu, tau, ok = huber_proposal2(v + 3, math.log(500))
print(f"joint location/scale: mu={mu:.3f} tau={tau:.3f} converged={ok}")

# %%
# Regression: IRLS alternates the calibration step with a weighted least-squares
# step; at the fixed point the coefficients are a Huber fit at the final tau.
n = 300
X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
y = X @ [0.5, 1.0, -1.0] + rng.lognormal(0, 1.5, n) - np.exp(1.5**2 / 2)
data = Dataset(X, y)
for order in (2, 4):
    res = irls_fit(data, CalibrationConfig(moment_order=order))
    print(f"order {order}: tau={res.tau:.3f} iterations={res.iterations} theta={np.round(res.theta, 3)}")

# %%
# Lepski's method picks the smallest tau whose fit agrees with every larger one.
v_max = (2 * mom_fourth_moment(y - np.median(y), 8)) ** 0.25
lep = lepski_select(data, LepskiConfig(v_min=v_max / 2**6, v_max=v_max, a=2.0))
print(f"Lepski: index {lep.index} of {lep.v_grid.size}, tau={lep.tau:.3f}")
