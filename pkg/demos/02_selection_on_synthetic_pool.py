"""Pick training subsets by committee disagreement and compare with random picks.

The synthetic backend stands in for a segmentation network: each model learns a
difficulty level from its training subset and errs more on cases whose
difficulty is far from it.
"""

import numpy as np

from eigenrank import SyntheticBackend, compare_to_random, generate_dataset, run_selection

cases = generate_dataset(100, seed=7)
backend = SyntheticBackend(cases)
pool = backend.pool()
difficulty = {c.id: c.difficulty for c in cases}

report = run_selection(pool, k=3, iterations=7, backend=backend, seed=7)
for i, subset in enumerate(report.subsets, 1):
    print(f"S{i}: " + ", ".join(f"{c} (d={difficulty[c]:.2f})" for c in subset))
print(f"pool difficulty spread {np.std(list(difficulty.values())):.3f}, "
      f"selected spread {np.std([difficulty[c] for c in report.selected]):.3f}")

print("\n t  eigenrank mean/stdev   random mean/stdev   (method-specific holdout)")
for row in compare_to_random(pool, 3, 7, backend, seeds=[7]):
    if row.protocol == "specific":
        print(f"{row.t:>2}  {row.eigenrank_mean:.3f} / {row.eigenrank_stdev:.3f}"
              f"        {row.random_mean:.3f} / {row.random_stdev:.3f}")
