r"""
Reproducible Monte Carlo experiments
====================================

Run a scaled-down coverage cell and an FDP/power cell from the bundled presets.
Reports are byte-identical for a given seed whatever the number of threads.
"""

from dataclasses import replace

from huberboot.simulation import certify_noise, NoiseModel, preset_specs, run_experiment

# %%
# Every noise model is standardized analytically; the certificate is a Monte Carlo
# check of that standardization.
for label in ("gaussian", "t3.5", "gamma", "wblmix", "parmix", "lognmix", "logn2"):
    ok, mean, var, tol = certify_noise(NoiseModel.parse(label), draws=200_000)
    print(f"{label:<9} mean={mean:+.4f} var={var:.4f} (tol {tol:.3f}) {'ok' if ok else 'FAIL'}")

# %%
# One coverage cell at a small budget.
(cell,) = preset_specs("table1-tnu")
cell = replace(cell, B=200).scaled(0.02)
report = run_experiment(cell, threads=1)
print(report.to_csv())
assert report.to_csv() == run_experiment(cell, threads=4).to_csv()

# %%
# And an FDP/power cell.
(cell,) = preset_specs("table11-wblmix")
cell = replace(cell, B=100, alphas=(0.1,), m=100).scaled(0.003)
print(run_experiment(cell).to_csv())
