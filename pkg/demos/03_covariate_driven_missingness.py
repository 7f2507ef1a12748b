# When a baseline covariate raises both the second endpoint and the chance
# that it goes unrecorded, dropping the missing values biases the S-score.
# Inverse probability weighting of the observed values removes most of it.
#
# Run with:  python3 demos/03_covariate_driven_missingness.py

import numpy as np

from winratio.simulate import MARX_SCENARIO, gen_dataset, run_scenario, true_wr_oracle

ds = gen_dataset(MARX_SCENARIO, 1)
x = ds.covariates[:, 0]
surv = ds.survivor
for level in (0, 1):
    m = surv & (x == level)
    print(f"x1 = {level}: {m.sum():4d} survivors, {100 * np.mean(ds.r2[m] == 0):4.1f}% missing Y2, "
          f"mean observed Y2 {np.nanmean(ds.y2[m & (ds.r2 == 1)]):5.2f}")

truth = true_wr_oracle(MARX_SCENARIO).theta
print(f"\ntrue win ratio {truth:.4f}")

summary = run_scenario(MARX_SCENARIO, ("sscore-if", "adjusted"), n_reps=100, seed=3, truth=truth)
for row in summary.rows:
    print(f"{row.method:<10} mean {row.mean_theta:.3f}  ARB {row.arb_pct:5.2f}%  CP {row.cp_pct:5.1f}%")
