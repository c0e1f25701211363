"""Flag cases a fixed model is likely to get wrong, then peel them off in batches.

A probe model is trained on 15 cases. The remaining 85 are screened; each
round removes the 3 cases the committee disagrees on most, and we watch the
probe's true Dice on what was removed versus what stays.
"""

import numpy as np

from eigenrank import SyntheticBackend, generate_dataset, rank_failures_fixed, run_failure_elimination

backend = SyntheticBackend(generate_dataset(100, seed=3))
pool = backend.pool()
order = list(np.random.default_rng(3).permutation(pool.ids))
probe = backend.train(order[:15], seed=3)
screen = pool.subset(order[15:])

report = run_failure_elimination(screen, 3, 7, backend, probe, seed=3)
print(f"all {len(screen)} cases: mean {report.pool_mean:.3f} stdev {report.pool_stdev:.3f}")
print("iter  eliminated mean   remaining mean/stdev  (n)")
for r in report.rounds:
    print(f"{r.iteration:>4}  {r.eliminated_mean:>15.3f}   {r.remaining_mean:.3f} / {r.remaining_stdev:.3f}  ({r.remaining_count})")

committee = [backend.train(order[i:i + 5], seed=i) for i in range(0, 20, 5)]
print("\nfixed committee, five most contentious cases:")
for cid, lam in rank_failures_fixed(committee, screen, backend)[:5]:
    print(f"  {cid}  lambda_max {lam:.3f}  probe Dice {report.probe_scores[cid]:.3f}")
