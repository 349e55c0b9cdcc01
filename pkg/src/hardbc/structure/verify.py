"""Numerical checks that a structure satisfies its boundary conditions.

Every slot is filled with a random cubic polynomial in box-normalized
coordinates. Dirichlet rows are compared exactly at on-segment nodes. Robin
rows are checked with a one-sided second-order normal derivative, so their
residual is a truncation error that must shrink like ``h^2`` under refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import expr as ex
from .. import geometry as geo
from ..grid import Grid
from .fields import GridEvaluator, evaluate_points, transfinite_weights

# exponents of the 10 monomials of a cubic in two variables
_CUBIC = [(i, j) for i in range(4) for j in range(4 - i)]


def random_slot_provider(ss, seed: int, box=None, degree_terms=_CUBIC):
    """Callable ``(x, y) -> {slot: values}`` with random cubic slots.

    Coefficients are ``U[-1, 1]`` and depend only on ``seed`` and the slot
    position, so the same functions are used on every grid.
    """
    box = box or ss.domain.box
    x0, x1, y0, y1 = box
    rng = np.random.default_rng(seed)
    coeffs = {name: rng.uniform(-1.0, 1.0, size=len(degree_terms)) for name in ss.slots}

    def provider(x, y):
        xn = 2.0 * (np.asarray(x, dtype=float) - x0) / (x1 - x0) - 1.0
        yn = 2.0 * (np.asarray(y, dtype=float) - y0) / (y1 - y0) - 1.0
        return {name: sum(c * xn**i * yn**j for c, (i, j) in zip(cs, degree_terms)) for name, cs in coeffs.items()}

    return provider


@dataclass
class BCCheck:
    segment: str
    row: int
    kind: str
    h: float
    residual: float
    count: int


@dataclass
class BCReport:
    """Maximum boundary residuals per segment row, trial maximum per resolution."""

    mode: str
    checks: list = field(default_factory=list)

    def dirichlet_max(self) -> float:
        vals = [c.residual for c in self.checks if c.kind == "dirichlet"]
        return max(vals) if vals else 0.0

    def robin_series(self) -> dict:
        """``(segment, row) -> [(h, residual), ...]`` sorted by decreasing ``h``."""
        out: dict = {}
        for c in self.checks:
            if c.kind == "robin":
                out.setdefault((c.segment, c.row), []).append((c.h, c.residual))
        return {k: sorted(v, reverse=True) for k, v in out.items()}

    def robin_orders(self, floor: float = 1e-11) -> dict:
        """Observed convergence order between successive resolutions.

        Rows whose residual is already below ``floor`` on the coarsest grid are
        exact up to rounding and get order ``inf``.
        """
        orders = {}
        for key, series in self.robin_series().items():
            if series[0][1] <= floor:
                orders[key] = [math.inf] * (len(series) - 1)
                continue
            o = []
            for (h0, r0), (h1, r1) in zip(series, series[1:]):
                o.append(math.inf if r1 <= floor else math.log(r0 / r1) / math.log(h0 / h1))
            orders[key] = o
        return orders

    def passed(self, dirichlet_tol: float = 1e-10, min_order: float = 1.9) -> bool:
        if self.dirichlet_max() > dirichlet_tol:
            return False
        return all(min(o) >= min_order for o in self.robin_orders().values() if o)

    def lines(self) -> list:
        out = [f"[{self.mode}] max Dirichlet residual {self.dirichlet_max():.3e}"]
        for (seg, row), series in self.robin_series().items():
            orders = self.robin_orders()[(seg, row)]
            res = ", ".join(f"h={h:.4g}: {r:.3e}" for h, r in series)
            out.append(f"[{self.mode}] Robin {seg}/{row}: {res}; orders " + ", ".join(f"{o:.2f}" for o in orders))
        return out


def _env(params, x, y):
    return dict({k: float(v) for k, v in (params or {}).items() if k in ex.VARIABLES}, x=x, y=y)


def _eval(e, params, x, y):
    return np.broadcast_to(np.asarray(ex.evaluate(e, _env(params, x, y)), dtype=float), np.shape(x))


def _away_from_ends(geom, pts, margin: float) -> np.ndarray:
    """Points farther than ``margin`` from both endpoints; a negative margin is
    read as a fraction of the segment length."""
    if not isinstance(geom, geo.Line):
        return np.ones(len(pts), dtype=bool)
    if margin < 0:
        margin = -margin * geom.length
    da = np.hypot(pts[:, 0] - geom.a.x, pts[:, 1] - geom.a.y)
    db = np.hypot(pts[:, 0] - geom.b.x, pts[:, 1] - geom.b.y)
    return (da > margin) & (db > margin)


def _grid_normal_ok(grid: Grid, i: int) -> bool:
    g = grid.domain.segments[i].geom
    return isinstance(g, geo.Line) and g.axis is not None


def verify_bc(ss, resolutions, trials: int = 5, seed: int = 0, margin: float | None = None,
              params: dict | None = None, circle_points: int = 64, robin: str = "grid",
              steps=None, ray_points: int = 64) -> BCReport:
    """Dirichlet and Robin residuals of ``ss`` for random slot fillings.

    ``resolutions`` is a list of ``(nx, ny)``. Dirichlet rows are checked at
    on-segment grid nodes (circles at sample points).

    Robin rows are only checked farther than ``margin`` from segment endpoints
    (default: a tenth of the shorter box side; a negative value is a fraction
    of each segment's length). With ``robin="grid"`` the normal derivative is
    taken from grid values, so slot gradients inside the structure are grid
    differences too. With ``robin="ray"`` the structure is evaluated pointwise
    at ``p + k h nu`` (``k = 0, 1, 2``) for fixed boundary points ``p`` and each
    step ``h`` in ``steps`` (default: the grid spacings), which isolates the
    structure from the grid discretization. Circles always use rays.
    """
    if robin not in ("grid", "ray"):
        raise ValueError(f"robin must be 'grid' or 'ray', got {robin!r}")
    dom = ss.domain
    params = ss.info.get("params", {}) if params is None else params
    if margin is None:
        x0, x1, y0, y1 = dom.box
        margin = 0.1 * min(x1 - x0, y1 - y0)
    report = BCReport(ss.mode)
    providers = [random_slot_provider(ss, seed + t) for t in range(trials)]
    weak_rows = {(t.segment, t.row) for t in ss.bc_terms}
    rows = [(i, j, r) for i, seg in enumerate(dom.segments) for j, r in enumerate(seg.rows)
            if r.kind != "free" and (i, j) not in weak_rows]

    def record(worst, key, res):
        if res is not None and (key not in worst or res[0] > worst[key][0]):
            worst[key] = res

    grid_h = []
    for nx, ny in resolutions:
        grid = Grid(dom, nx, ny)
        grid_h.append(grid.h)
        ev = GridEvaluator(ss, grid)
        worst: dict = {}
        for prov in providers:
            U = np.array([np.asarray(v, dtype=float) for v in ev.evaluate(prov)])
            for i, j, r in rows:
                label = _label(dom, i)
                if r.is_dirichlet:
                    record(worst, (label, j, r.kind), _dirichlet_residual(ss, grid, U, i, r, params, prov, circle_points))
                elif robin == "grid" and _grid_normal_ok(grid, i):
                    record(worst, (label, j, r.kind), _robin_grid(grid, U, i, r, params, margin))
                elif robin == "grid":
                    record(worst, (label, j, r.kind),
                           _robin_ray(ss, dom, i, r, params, margin, prov, grid.h, circle_points, grid.tol))
        for (label, j, kind), (val, cnt) in worst.items():
            report.checks.append(BCCheck(label, j, kind, grid_h[-1], val, cnt))

    if robin == "ray":
        tol = 1e-12 * dom.diagonal
        for h in (steps if steps is not None else grid_h):
            worst = {}
            for prov in providers:
                for i, j, r in rows:
                    if r.is_robin:
                        record(worst, (_label(dom, i), j, r.kind),
                               _robin_ray(ss, dom, i, r, params, margin, prov, h, ray_points, tol))
            for (label, j, kind), (val, cnt) in worst.items():
                report.checks.append(BCCheck(label, j, kind, float(h), val, cnt))
    return report


def _label(dom, i):
    return dom.segments[i].name or str(i + 1)


def _dirichlet_residual(ss, grid, U, i, r, params, prov, circle_points):
    geom = grid.domain.segments[i].geom
    b = np.array(r.basis)
    if isinstance(geom, geo.Line):
        nodes = grid.segment_nodes(i)
        if nodes.size == 0:
            return None
        val = b @ U[:, nodes] - _eval(r.g, params, grid.x[nodes], grid.y[nodes])
        return float(np.max(np.abs(val))), nodes.size
    pts = geom.sample(circle_points)
    vals = np.array(evaluate_points(ss.components, pts[:, 0], pts[:, 1], prov, grid.tol))
    val = b @ vals - _eval(r.g, params, pts[:, 0], pts[:, 1])
    return float(np.max(np.abs(val))), len(pts)


def _robin_grid(grid, U, i, r, params, margin):
    """``d(b.u)/dn + c.u - h`` (outward ``n``) at on-segment nodes of an axis-aligned line."""
    geom = grid.domain.segments[i].geom
    b = np.array(r.basis)
    nodes, dn = grid.normal_derivative(b @ U, i)
    pts = np.column_stack([grid.x[nodes], grid.y[nodes]])
    keep = _away_from_ends(geom, pts, margin)
    nodes, dn = nodes[keep], dn[keep]
    if nodes.size == 0:
        return None
    x, y = grid.x[nodes], grid.y[nodes]
    cu = sum(_eval(cm, params, x, y) * U[m, nodes] for m, cm in enumerate(r.c))
    res = dn + cu - _eval(r.h, params, x, y)
    return float(np.max(np.abs(res))), len(x)


def _robin_ray(ss, dom, i, r, params, margin, prov, h, n_points, tol):
    """Robin residual from pointwise values along inward normal rays of length ``2h``."""
    geom = dom.segments[i].geom
    b = np.array(r.basis)
    pts = geom.sample(n_points)
    pts = pts[_away_from_ends(geom, pts, margin)]
    if len(pts) == 0:
        return None
    x, y = pts[:, 0], pts[:, 1]
    nx_, ny_ = geom.inward_normal(x, y)
    vals = [np.array(evaluate_points(ss.components, x + k * h * nx_, y + k * h * ny_, prov, tol)) for k in range(3)]
    bu = [b @ v for v in vals]
    dn = -(-1.5 * bu[0] + 2.0 * bu[1] - 0.5 * bu[2]) / h
    cu = sum(_eval(cm, params, x, y) * vals[0][m] for m, cm in enumerate(r.c))
    res = dn + cu - _eval(r.h, params, x, y)
    return float(np.max(np.abs(res))), len(x)


# ---------------------------------------------------------------------------
# weight properties


@dataclass
class WeightReport:
    h: float
    partition_error: float
    min_weight: float
    max_weight: float
    normal_derivative: dict


def weight_properties(dom, nx: int, ny: int, margin: float | None = None) -> WeightReport:
    """Partition of unity on all non-intersection nodes and the maximum
    one-sided normal derivative of every weight on segments with ``mu = 2``."""
    grid = Grid(dom, nx, ny)
    geoms = [s.geom for s in dom.segments]
    mus = [s.mu for s in dom.segments]
    prio = [s.n_dirichlet for s in dom.segments]
    W = np.array(transfinite_weights(geoms, mus, grid.x, grid.y, grid.tol, prio))
    keep = grid.domain_mask & (grid.kind != geo.AT_INTERSECTION)
    total = W[:, keep].sum(axis=0)
    if margin is None:
        x0, x1, y0, y1 = dom.box
        margin = 0.1 * min(x1 - x0, y1 - y0)
    deriv = {}
    for i, seg in enumerate(dom.segments):
        if seg.mu != 2 or not _grid_normal_ok(grid, i):
            continue
        worst = 0.0
        for k in range(len(dom.segments)):
            nodes, dn = grid.normal_derivative(W[k], i)
            pts = np.column_stack([grid.x[nodes], grid.y[nodes]])
            sel = _away_from_ends(seg.geom, pts, margin)
            if np.any(sel):
                worst = max(worst, float(np.max(np.abs(dn[sel]))))
        deriv[seg.name or str(i + 1)] = worst
    return WeightReport(grid.h, float(np.max(np.abs(total - 1.0))), float(W[:, keep].min()),
                        float(W[:, keep].max()), deriv)
