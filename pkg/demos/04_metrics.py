"""
EER and min t-DCF
=================

Scores are higher for bonafide.  A threshold rejects bonafide below it and
accepts spoof at or above it.
"""
import numpy as np

from acs_spoof.evaluation import TdcfParams, compute_eer, error_rates, min_tdcf, threshold_grid

bona = np.array([0.9, 0.8, 0.7])
spoof = np.array([0.1, 0.2, 0.75])

taus = threshold_grid(bona, spoof)
frr, far = error_rates(bona, spoof, taus)
for t, r, a in zip(taus, frr, far):
    print(f"tau {t:6.3f}  FRR {r:.3f}  FAR {a:.3f}")

eer, tau = compute_eer(bona, spoof)
print(f"EER {eer:.4f} at threshold {tau:.3f}")

# min t-DCF with the default cost model and a placeholder ASV operating point
print("min t-DCF:", round(min_tdcf(bona, spoof), 4))
print("min t-DCF, perfect CM:", min_tdcf([0.9, 0.8], [0.1, 0.2]))

# both metrics improve as the score distributions move apart
rng = np.random.default_rng(0)
for gap in (0.5, 1.5, 3.0):
    b, sp = rng.normal(gap, 1.0, 500), rng.normal(0.0, 1.0, 500)
    print(f"gap {gap}: EER {compute_eer(b, sp)[0]:.3f}  min t-DCF {min_tdcf(b, sp):.4f}  "
          f"(c_fa_spoof=50: {min_tdcf(b, sp, TdcfParams(c_fa_spoof=50.0)):.4f})")
