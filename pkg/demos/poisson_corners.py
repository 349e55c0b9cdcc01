"""Poisson on the unit square with Dirichlet/Neumann sides: GLSS against the
trimmed-distance legacy structure.

    python demos/poisson_corners.py [epochs]

The legacy structure gives each Robin side its own distance function, whose
gradient blows up at the corners it shares with a Dirichlet side. Expect the
legacy error to sit an order of magnitude above GLSS.
"""
import sys

import torch

from hardbc.bench import runner
from hardbc.bench.problems import load_problem

torch.set_num_threads(1)
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else None

pb = load_problem("poisson")
cfg = runner.train_config(pb, epochs=epochs)
results = [runner.run_single(pb, m, cfg=cfg) for m in ("glss", "op", "legacy-sukumar")]
print(runner.summary(results))
g, leg = results[0].errors["u"], results[2].errors["u"]
print(f"legacy / glss error ratio: {leg / g:.1f}")
