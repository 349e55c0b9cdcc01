"""Darcy flow on the L-shape for a few sampled (alpha, beta), every structure mode.

    python demos/darcy_pairs.py [pairs] [epochs]

One 101x101 run takes one to two minutes on a single core, so the default
(3 pairs, 4 modes, 1000 epochs) needs about 15 minutes.
"""
import sys

import torch

from hardbc.bench import runner
from hardbc.bench.problems import darcy

torch.set_num_threads(1)
pairs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else None

base = darcy()
cfg = runner.train_config(base, epochs=epochs)
for prob in runner.parameter_sets(base, pairs, seed=0):
    res = [runner.run_single(prob, m, cfg=cfg) for m in ("glss", "op", "semi-weak", "weak")]
    print(runner.summary(res), flush=True)
