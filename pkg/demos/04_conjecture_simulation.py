"""Does the top eigenvalue dominate the entropy sum as the committee grows?

Feasible Dice matrices with every entry in [1 - eps, 1] are sampled and the
ratio lambda_1 log lambda_1 / sum lambda log lambda is averaged per size.
"""

from eigenrank import SimulationConfig, run_conjecture_simulation

for eps in (0.05, 0.1, 0.3):
    rows = run_conjecture_simulation(SimulationConfig((3, 5, 10, 20, 50), eps, trials=200, seed=0))
    print(f"eps={eps}: " + "  ".join(f"t={r.t}:{r.mean_ratio:.4f}" for r in rows))
