# Walk through one analysis of the bundled example trial.
#
# Run with:  python3 demos/01_analyze_example_trial.py

import numpy as np

from winratio.covadjust import adjusted_if_variance, wr_adjusted
from winratio.data import StudyConfig, apply_sensitivity_transform, example_data_path, read_csv
from winratio.estimators import pocock_estimate, wr_sscore
from winratio.inference import bootstrap, bt_qt_ci, if_variance, if_wald_ci, pocock_ustat_variance, wald_ci

config = StudyConfig(h=90, tau=50)
ds = read_csv(example_data_path(), config, covariates=["x1"])

# A quick look at what the data contain.  Subjects alive at day 90 carry
# time 91; some of them never had the second endpoint measured.
for key, value in ds.summary().items():
    print(f"{key:>22}: {value}")

# The S-score estimate uses every subject: deaths, censored records and
# survivors with a missing second endpoint all enter through the
# product-limit fit of the combined score.
est = wr_sscore(ds)
dec = if_variance(ds)
ci = if_wald_ci(dec)
print(f"\nS-score win ratio  {est.theta:.3f}   95% IF-Wald [{ci.lower:.3f}, {ci.upper:.3f}]")
print(f"  P(win) = {est.p_win:.3f}, P(loss) = {est.p_loss:.3f}")

# The influence values are centred; their spread gives the standard error.
print(f"  mean influence {dec.phi.mean():.1e}, SE {dec.se:.4f}")

# The bootstrap resamples within arms.  A percentile interval from 500
# replicates should look much like the Wald interval.
boot = bootstrap(ds, B=500, seed=1)
qt = bt_qt_ci(boot)
print(f"  bootstrap SE {boot.se:.4f}; percentile interval [{qt.lower:.3f}, {qt.upper:.3f}]")

# The classical pairwise comparison throws away pairs it cannot decide
# (a censored subject against a later death, a survivor without Y2).
pk, tally = pocock_estimate(ds)
se = np.sqrt(pocock_ustat_variance(ds))
pci = wald_ci(pk.theta, se)
print(f"\nPocock win ratio   {pk.theta:.3f}   95% Wald [{pci.lower:.3f}, {pci.upper:.3f}]")
print(f"  {tally.wins} wins, {tally.losses} losses, {tally.ties} undecided of {tally.total} pairs")

# Survivors in this trial lose their second endpoint more often when x1 = 1.
# Weighting the observed values by the inverse of a fitted observation
# probability corrects for that.
adj = wr_adjusted(ds)
aci = if_wald_ci(adjusted_if_variance(ds))
print(f"\nAdjusted win ratio {adj.theta:.3f}   95% IF-Wald [{aci.lower:.3f}, {aci.upper:.3f}]")

# Finally, bracket the effect of censoring: censored treated subjects are
# assumed to survive (best case) or to die shortly after censoring (worst case).
for mode in ("best", "worst"):
    t = wr_sscore(apply_sensitivity_transform(ds, mode)).theta
    print(f"{mode:>5}-case S-score  {t:.3f}")
