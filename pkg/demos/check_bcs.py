"""Fill every slot of the exact structures with random cubics and check the BCs.

    python demos/check_bcs.py

Dirichlet rows should come back at rounding level; Robin rows are
differentiated along inward rays and their residual should shrink at order 2.
"""
from hardbc.bench import runner
from hardbc.bench.problems import load_problem

for name in ("poisson", "darcy", "ns"):
    for rep in runner.verify(load_problem(name), ("glss", "op"), trials=10):
        print(f"{name}: {'pass' if rep.passed() else 'FAIL'}")
        print("\n".join(rep.lines()))
