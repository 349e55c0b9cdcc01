"""Run a problem with one structure mode and write the result files."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

from .. import geometry as geo
from .. import structure as S
from ..structure import verify as V
from ..grid import Grid
from ..train import TrainConfig, predict, save_checkpoint, train
from .problems import ProblemSpec, sample_parameters
from .residuals import compute_diagnostics, l2_error, make_residual, read_reference_csv


@dataclass
class RunResult:
    problem: str
    mode: str
    params: dict
    errors: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    final_loss: float = float("nan")
    epochs: int = 0
    aborted: bool = False
    wall_time: float = 0.0
    fields: dict = field(default_factory=dict)
    report: object = None
    grid: object = None
    ansatz: object = None
    structure_hash: str = ""

    def row(self) -> dict:
        out = {"problem": self.problem, "mode": self.mode}
        out.update({f"param_{k}": v for k, v in self.params.items()})
        out.update({f"err_l2_{k}": v for k, v in self.errors.items()})
        out.update(self.diagnostics)
        out.update({"final_loss": self.final_loss, "epochs": self.epochs, "aborted": self.aborted,
                    "wall_time": round(self.wall_time, 3)})
        return out


def build_structure(problem: ProblemSpec, mode: str):
    opts = dict(problem.structure_options.get(mode, {}))
    return S.build(problem.domain, mode, problem.expr_params, list(problem.components), **opts)


def train_config(problem: ProblemSpec, epochs=None, lr=None, seed: int = 0, log_every: int = 0) -> TrainConfig:
    t = problem.training
    return TrainConfig(epochs=int(epochs or t.get("epochs", 1000)), lr=float(lr or t.get("lr", 0.0025)),
                       milestone=int(t.get("milestone", 200)), seed=seed, log_every=log_every)


def _cylinder(problem: ProblemSpec):
    for s in problem.domain.segments:
        if isinstance(s.geom, geo.Circle):
            return s.geom
    raise ValueError("flow diagnostics need a circular obstacle in the domain")


def flow_diagnostics(problem: ProblemSpec, grid: Grid, comps) -> dict:
    """Pressure drop and force coefficients, plus relative errors against the reference values."""
    d = problem.diagnostics
    circ = _cylinder(problem)
    diag = compute_diagnostics(*comps[:3], grid, problem.nu, center=(circ.center.x, circ.center.y),
                               radius=circ.radius, front=tuple(d.get("front", (0.15, 0.2))),
                               back=tuple(d.get("back", (0.25, 0.2))), mean_velocity=d.get("mean_velocity", 0.2),
                               diameter=d.get("diameter", 2 * circ.radius))
    out = {"delta_p": diag.delta_p, "c_D": diag.c_D, "c_L": diag.c_L}
    for k, v in diag.errors(d.get("reference", {})).items():
        out[f"rel_err_{k}"] = v
    return out


def run_single(problem: ProblemSpec, mode: str, grid_shape=None, cfg: TrainConfig | None = None,
               reference_csv: str | None = None) -> RunResult:
    """Train one structure for one parameter instance and evaluate it."""
    nx, ny = grid_shape or problem.grid
    grid = Grid(problem.domain, nx, ny)
    ss = build_structure(problem, mode)
    cfg = cfg or train_config(problem)
    modulo = problem.kind == "poisson"
    ref = problem.reference_fields(grid.x, grid.y)
    csv_path = reference_csv or problem.reference_csv
    if ref is None and csv_path and Path(csv_path).exists():
        ref = read_reference_csv(csv_path, grid, problem.components)
    t0 = time.perf_counter()
    a, report = train(ss, grid, make_residual(problem), cfg, reference=ref, params=problem.expr_params,
                      modulo_constant=modulo)
    comps = predict(ss, grid, a)
    res = RunResult(problem.name or problem.kind, mode, dict(problem.params), epochs=len(report.rows),
                    aborted=report.aborted, report=report)
    res.final_loss = report.final.get("loss_total", float("nan"))
    res.fields = dict(zip(problem.components, comps))
    if ref is not None:
        for c in problem.components:
            if c in ref:
                res.errors[c] = l2_error(res.fields[c], ref[c], grid, modulo_constant=modulo)
    if problem.kind == "ns":
        res.diagnostics = flow_diagnostics(problem, grid, comps)
    res.wall_time = time.perf_counter() - t0
    res.grid = grid
    res.ansatz = a
    res.structure_hash = ss.hash()
    return res


def parameter_sets(problem: ProblemSpec, pairs: int | None, seed: int = 0) -> list:
    """Problems to run: one per sampled ``(alpha, beta)`` for Darcy, else the problem itself."""
    if problem.kind != "darcy" or not pairs:
        return [problem]
    lo = float(problem.sampling.get("low", 1.0))
    hi = float(problem.sampling.get("high", 4.0))
    return [problem.with_params(alpha=a, beta=b) for a, b in sample_parameters(pairs, seed, lo, hi)]


def write_results(path, rows: list) -> None:
    keys: list = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def run(problem: ProblemSpec, mode: str, out_dir, grid_shape=None, epochs=None, lr=None, seed: int = 0,
        pairs: int | None = None, plots: bool = True, log_every: int = 0, checkpoint: bool = False) -> list:
    """Run ``mode`` on every parameter set and write results, losses, fields and heatmaps to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = train_config(problem, epochs, lr, seed, log_every)
    results = []
    loss_rows = []
    sets = parameter_sets(problem, pairs, seed)
    for k, prob in enumerate(sets):
        res = run_single(prob, mode, grid_shape, cfg)
        results.append(res)
        for row in res.report.rows:
            loss_rows.append({"run": k, **dict(zip(res.report.columns, row))})
        tag = "" if len(sets) == 1 else f"_{k}"
        for c, v in res.fields.items():
            res.grid.to_csv(out / f"field_{c}{tag}.csv", {c: v})
            if plots:
                from .render import heatmap

                heatmap(res.grid, v, out / f"field_{c}{tag}.png", title=f"{prob.name} {mode} {c}")
        if checkpoint:
            save_checkpoint(out / f"checkpoint{tag}", res.ansatz, res.structure_hash, {"mode": mode})
    write_results(out / "results.csv", [r.row() for r in results])
    write_results(out / "losses.csv", loss_rows)
    return results


def verify(problem: ProblemSpec, modes=("glss", "op"), trials: int = 25, seed: int = 0, resolutions=None):
    """BC exactness reports for the exact structures of a problem.

    Robin rows are checked along inward rays with steps ``L/1000, L/2000, L/4000``
    (``L`` the shorter box side), away from segment ends by ``0.1 L``.
    """
    x0, x1, y0, y1 = problem.domain.box
    L = min(x1 - x0, y1 - y0)
    steps = [L / 1000, L / 2000, L / 4000]
    resolutions = resolutions or [problem.grid]
    reports = []
    for mode in modes:
        ss = build_structure(problem, mode)
        reports.append(V.verify_bc(ss, resolutions, trials=trials, seed=seed, margin=0.1 * L,
                                   params=problem.expr_params, robin="ray", steps=steps))
    return reports


def summary(results: list) -> str:
    lines = []
    for r in results:
        p = " ".join(f"{k}={v:.4g}" for k, v in r.params.items())
        e = " ".join(f"l2_{k}={v:.3e}" for k, v in r.errors.items())
        d = " ".join(f"{k}={v:.4g}" for k, v in r.diagnostics.items())
        lines.append(f"{r.problem} {r.mode} {p} {e} {d} loss={r.final_loss:.3e} "
                     f"time={r.wall_time:.1f}s{' ABORTED' if r.aborted else ''}".replace("  ", " "))
    return "\n".join(lines)


__all__ = ["RunResult", "run", "run_single", "verify", "parameter_sets", "flow_diagnostics", "summary",
           "build_structure", "train_config", "write_results"]
