"""Is the oscillator's energy quantized?

An energy measurement separates the quantum ladder from a continuous
classical energy.  The expected log-likelihood ratio under the quantum truth
is a relative entropy, hence grows from zero.
"""

import warnings

from cqht.scenarios import ScenarioConfig, run_energy_quantization

warnings.simplefilter("ignore")
cfg = ScenarioConfig("energy-quant", n_trials=20, dim=30, grid_cells=48, T=3.0, T_grid=(1.0, 2.0), seed=2)
res = run_energy_quantization(cfg)
s = res.summary()
for t, m, se in zip(s["checkpoints"], s["mean_log_lambda"], s["se_log_lambda"]):
    print(f"T={t:.1f}  E[log Lambda] = {m:.4f} +/- {se:.4f}")
print("diagnostics:", s["diagnostics"])
