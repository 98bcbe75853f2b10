"""Hybrid density operator against the Kalman-Bucy filter.

The force is kept classical on a grid while the oscillator stays quantum.
For Gaussian dynamics the hybrid filter should reproduce the Kalman estimate.
"""

import warnings

import numpy as np

from cqht.scenarios import ScenarioConfig, hybrid_kalman_comparison

warnings.simplefilter("ignore")
cfg = ScenarioConfig("force-detect", C=1.0, T=10.0, hybrid_dim=50, hybrid_cells=40)
out = hybrid_kalman_comparison(cfg, n_tau=3.0)
print(f"filter time constant {out['tau']:.3f}")
print(f"relative error in mu: {out['rel_error_mu']:.2e}, in x: {out['rel_error_x']:.2e}")
idx = np.linspace(0, out["t"].size - 1, 6).astype(int)
for k in idx:
    print(f"t={out['t'][k]:5.2f}  kalman {out['mu_kalman'][k]: .4f}  hybrid {out['mu_hybrid'][k]: .4f}")
