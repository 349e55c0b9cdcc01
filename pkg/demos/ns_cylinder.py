"""Steady channel flow past a cylinder (Re 20), OP or GLSS structure.

    python demos/ns_cylinder.py [mode] [epochs] [out_dir]

Runs the full schedule by default (4000 epochs on 221x42, roughly 15-25 minutes
on one core) and prints the pressure drop and force coefficients next to the
reference values. Fields and heatmaps go to ``out_dir``.
"""
import sys

from hardbc.bench import runner
from hardbc.bench.problems import navier_stokes

mode = sys.argv[1] if len(sys.argv) > 1 else "op"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else None
out = sys.argv[3] if len(sys.argv) > 3 else f"ns_{mode}_out"

pb = navier_stokes()
res = runner.run(pb, mode, out, epochs=epochs, log_every=250)[0]
print(runner.summary([res]))
ref = pb.diagnostics["reference"]
for k in ("delta_p", "c_D", "c_L"):
    print(f"{k:8s} {res.diagnostics[k]: .4f}   reference {ref[k]}")
