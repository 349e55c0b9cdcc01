"""Command line entry point: ``hardbc <poisson|darcy|ns|verify-bc> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .structure import MODES

log = logging.getLogger("hardbc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hardbc", description="Train PINN-like solvers with boundary conditions "
                                "built into the solution structure, or check that they hold.")
    p.add_argument("command", choices=["poisson", "darcy", "ns", "verify-bc"])
    p.add_argument("--mode", help=f"one of {', '.join(MODES)} "
                   "(default glss; verify-bc takes a comma list, default glss,op)")
    p.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, help="Darcy: number of sampled (alpha, beta) pairs")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--spec", help="problem-spec JSON (default: the shipped spec for the command)")
    p.add_argument("--trials", type=int, default=25, help="verify-bc: random slot fillings")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--checkpoint", action="store_true", help="save the trained parameters")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _verify(args, load_problem) -> int:
    from .bench import runner

    modes = [m.strip() for m in (args.mode or "glss,op").split(",")]
    bad = [m for m in modes if m not in MODES]
    if bad:
        print(f"hardbc: unknown mode {bad[0]!r}; choose from {', '.join(MODES)}", file=sys.stderr)
        return 2
    specs = [args.spec] if args.spec else ["poisson", "darcy", "ns"]
    rows = []
    ok = True
    for name in specs:
        prob = load_problem(name)
        grid = [tuple(args.grid)] if args.grid else None
        for rep in runner.verify(prob, modes, trials=args.trials, seed=args.seed, resolutions=grid):
            passed = rep.passed()
            ok &= passed
            print(f"[{'PASS' if passed else 'FAIL'}] {prob.name} {rep.mode}")
            for line in rep.lines():
                print("    " + line)
            orders = rep.robin_orders()
            rows.append({"problem": prob.name, "mode": rep.mode, "dirichlet_max": rep.dirichlet_max(),
                         "robin_min_order": min(orders.values()) if orders else "", "passed": passed})
    Path(args.out).mkdir(parents=True, exist_ok=True)
    runner.write_results(Path(args.out) / "results.csv", rows)
    return 0 if ok else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .bench import runner
    from .bench.problems import SpecError, load_problem
    from .structure import ConfigurationError, IllPosedBoundaryError
    from .train import TrainingError

    try:
        if args.command == "verify-bc":
            return _verify(args, load_problem)
        args.mode = args.mode or "glss"
        if args.mode not in MODES:
            print(f"hardbc: unknown mode {args.mode!r}; choose from {', '.join(MODES)}", file=sys.stderr)
            return 2
        prob = load_problem(args.spec or args.command)
        if prob.kind != args.command:
            print(f"hardbc: spec describes a {prob.kind} problem, not {args.command}", file=sys.stderr)
            return 2
        results = runner.run(prob, args.mode, args.out, tuple(args.grid) if args.grid else None, args.epochs,
                             args.lr, args.seed, args.pairs, plots=not args.no_plots, log_every=args.log_every,
                             checkpoint=args.checkpoint)
    except (SpecError, ConfigurationError, IllPosedBoundaryError, TrainingError, OSError) as err:
        print(f"hardbc: {err}", file=sys.stderr)
        return 1
    print(runner.summary(results))
    print(f"results written to {args.out}")
    return 1 if any(r.aborted for r in results) else 0


if __name__ == "__main__":
    sys.exit(main())
