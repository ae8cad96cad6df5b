"""A small Monte-Carlo study of AR and BAR on the sparse default design.

Uses 40 trials so it finishes in a few seconds; the CLI ``simulate`` command
runs the same harness at full size and writes the tables to CSV.
"""

import numpy as np

from hetar import NoiseKind, SimulationSpec, compute_c0, run_trials, summarize
from hetar.simulation import collect, shrinkage_ratios

for tag in ("normal", "laplace", "t"):
    print(f"c0 for {tag:7s} noise: {compute_c0(NoiseKind(tag)):+.4f}")

spec = SimulationSpec(n=400, trials=40, estimators=(0, 2, 5, 10, "bar"), master_seed=7)
results = run_trials(spec, workers=4)

print(f"\n{'estimator':>9}  {'MSE a(nz)':>10}  {'med|a0|':>10}  {'FN a %':>7}  {'FP a %':>7}  {'FN b %':>7}  {'FP b %':>7}")
for m in summarize(results, spec):
    print(f"{m.estimator:>9}  {m.mse_nonsparse_alpha:10.3e}  {m.median_abs_sparse_alpha:10.3e}"
          f"  {m.fn_alpha:7.2f}  {m.fp_alpha:7.2f}  {m.fn_beta:7.2f}  {m.fp_beta:7.2f}")

# Ratio of zero-block norms between consecutive AR iterates.
paths = np.array([r.alpha_path for r in results if r.alpha_path is not None])
ratios = shrinkage_ratios(paths, np.flatnonzero(np.asarray(spec.alpha0) == 0))
print("\nmedian ||alpha_zero^(k+1)|| / ||alpha_zero^(k)||:",
      " ".join(f"k={k}:{v:.3f}" for k, v in enumerate(np.median(ratios, axis=0)[:6])))

# The first zero coefficient piles up at 0 as k grows.
for label in ("k=0", "k=2", "k=10"):
    A, _ = collect(results, label)
    print(f"{label:>5}: share of |alpha_11| < 1e-3 = {np.mean(np.abs(A[:, 10]) < 1e-3):.2f}")
