"""Finite-difference PDE residuals, error metrics and flow diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._backend import as_numpy, is_torch, to_torch
from ..grid import Grid


def _like(arr: np.ndarray, ref):
    return to_torch(arr) if is_torch(ref) else arr


class _Cache:
    """Coefficient vectors on a grid, converted once per backend."""

    def __init__(self):
        self.np: dict = {}
        self.t: dict = {}

    def get(self, key, make, ref):
        if key not in self.np:
            self.np[key] = make()
        if is_torch(ref):
            if key not in self.t:
                self.t[key] = to_torch(self.np[key])
            return self.t[key]
        return self.np[key]


def residual_poisson(u, grid: Grid, f=None):
    """``-lap_h u - f`` with ``f = 2 pi^2 cos(pi x) cos(pi y)`` unless given."""
    if f is None:
        f = 2 * math.pi**2 * np.cos(math.pi * grid.x) * np.cos(math.pi * grid.y)
    return -grid.fd_laplace(u) - _like(np.asarray(f, dtype=float), u)


def darcy_source(x, y, alpha: float, beta: float):
    return -0.5 * np.sin(2 * beta * y) * (alpha**2 * np.cos(2 * alpha * x) + beta**2 * np.cos(2 * alpha * x) - beta**2)


def residual_darcy(u, grid: Grid, alpha: float, beta: float, a=None, f=None):
    """``-div_h(a grad_h u) - f`` with ``a = sin(alpha x) sin(beta y)``."""
    if a is None:
        a = np.sin(alpha * grid.x) * np.sin(beta * grid.y)
    if f is None:
        f = darcy_source(grid.x, grid.y, alpha, beta)
    a = _like(np.asarray(a, dtype=float), u)
    ux, uy = grid.fd_grad(u)
    return -grid.fd_div(a * ux, a * uy) - _like(np.asarray(f, dtype=float), u)


def residual_ns(u, v, p, grid: Grid, nu: float):
    """Steady incompressible momentum and continuity residuals.

    ``p`` is the scaled pressure; the physical pressure is ``sqrt(nu) * p``.
    """
    s = math.sqrt(nu)
    ux, uy = grid.fd_grad(u)
    vx, vy = grid.fd_grad(v)
    px, py = grid.fd_grad(p)
    rx = u * ux + v * uy + s * px - nu * grid.fd_laplace(u)
    ry = u * vx + v * vy + s * py - nu * grid.fd_laplace(v)
    return rx, ry, ux + vy


def make_residual(problem):
    """Residual callable ``(components, grid) -> [r, ...]`` for a problem spec."""
    cache = _Cache()
    params = problem.expr_params
    if problem.kind == "poisson":
        def res(comps, grid):
            f = cache.get(("f", id(grid)), lambda: problem.coefficient("f", grid.x, grid.y), comps[0])
            return [residual_poisson(comps[0], grid, f)]
    elif problem.kind == "darcy":
        def res(comps, grid):
            a = cache.get(("a", id(grid)), lambda: problem.coefficient("a", grid.x, grid.y), comps[0])
            f = cache.get(("f", id(grid)), lambda: problem.coefficient("f", grid.x, grid.y), comps[0])
            return [residual_darcy(comps[0], grid, params["alpha"], params["beta"], a, f)]
    elif problem.kind == "ns":
        nu = problem.nu

        def res(comps, grid):
            return list(residual_ns(comps[0], comps[1], comps[2], grid, nu))
    else:
        raise ValueError(f"unknown problem kind {problem.kind!r}")
    return res


# ---------------------------------------------------------------------------
# errors


def l2_error(pred, ref, grid: Grid | None = None, mask=None, modulo_constant: bool = False) -> float:
    """Relative discrete l2 error ``|pred - ref| / |ref|`` over the domain nodes."""
    pred = np.asarray(as_numpy(pred), dtype=float)
    ref = np.asarray(as_numpy(ref), dtype=float)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if mask is None and grid is not None:
        mask = grid.domain_mask
    if mask is not None:
        pred, ref = pred[mask], ref[mask]
    if modulo_constant:
        pred = pred - pred.mean()
        ref = ref - ref.mean()
    den = float(np.linalg.norm(ref))
    if den == 0.0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(pred - ref) / den)


# ---------------------------------------------------------------------------
# flow diagnostics


@dataclass
class FlowDiagnostics:
    delta_p: float
    c_D: float
    c_L: float

    def errors(self, ref: dict) -> dict:
        return {k: abs(getattr(self, k) - v) / abs(v) for k, v in ref.items()}


class ProbeOutsideError(ValueError):
    pass


def _sample(grid: Grid, f, px, py, usable):
    """Bilinear values, falling back to a local least-squares plane when a
    surrounding node is unusable (outside the domain)."""
    px = np.atleast_1d(np.asarray(px, dtype=float))
    py = np.atleast_1d(np.asarray(py, dtype=float))
    out = grid.bilinear(f, px, py)
    for k in range(px.size):
        nodes = grid.stencil_nodes(px[k], py[k])
        if np.all(usable[nodes]):
            continue
        i0, j0 = divmod(int(grid.nearest_node(px[k], py[k])), grid.ny)
        cand = [grid.flat(i, j) for i in range(i0 - 2, i0 + 3) for j in range(j0 - 2, j0 + 3)
                if 0 <= i < grid.nx and 0 <= j < grid.ny]
        cand = np.array([c for c in cand if usable[c]])
        if cand.size < 3:
            raise ProbeOutsideError(f"no usable nodes near ({px[k]}, {py[k]})")
        A = np.column_stack([np.ones(cand.size), grid.x[cand] - px[k], grid.y[cand] - py[k]])
        coef, *_ = np.linalg.lstsq(A, np.asarray(f)[cand], rcond=None)
        out[k] = coef[0]
    return out


def compute_diagnostics(u, v, p, grid: Grid, nu: float, center=(0.2, 0.2), radius: float = 0.05,
                        front=(0.15, 0.2), back=(0.25, 0.2), mean_velocity: float = 0.2,
                        diameter: float = 0.1, n_points: int = 360) -> FlowDiagnostics:
    """Pressure drop between two probes and drag/lift coefficients of the cylinder.

    Forces come from the line integral of the stress over the cylinder with
    gradients from grid differences sampled on ``n_points`` circle points:
    ``F_D = int (nu dv_t/dn n_y - P n_x) dS`` and
    ``F_L = -int (nu dv_t/dn n_x + P n_y) dS`` where ``n`` points out of the
    cylinder into the fluid, ``v_t`` is the velocity along ``t = (n_y, -n_x)`` and ``P`` the
    physical pressure. Coefficients are ``2 F / (U^2 D)``.
    """
    u, v, p = (np.asarray(as_numpy(a), dtype=float) for a in (u, v, p))
    usable = grid.domain_mask
    P = math.sqrt(nu) * p
    for name, (x, y) in (("front", front), ("back", back)):
        nodes = grid.stencil_nodes(x, y)
        if not np.any(usable[nodes]):
            raise ProbeOutsideError(f"{name} probe ({x}, {y}) is outside the domain")
    pf = _sample(grid, P, [front[0]], [front[1]], usable)[0]
    pb = _sample(grid, P, [back[0]], [back[1]], usable)[0]

    ux, uy = grid.fd_grad(u)
    vx, vy = grid.fd_grad(v)
    theta = 2 * np.pi * np.arange(n_points) / n_points
    cx, cy = center
    X = cx + radius * np.cos(theta)
    Y = cy + radius * np.sin(theta)
    nx_, ny_ = np.cos(theta), np.sin(theta)
    s = lambda f: _sample(grid, f, X, Y, usable)  # noqa: E731
    Ux, Uy, Vx, Vy, Ps = s(ux), s(uy), s(vx), s(vy), s(P)
    tx, ty = ny_, -nx_
    # d(v . t)/dn with n and t constant along the normal line
    dvt_dn = (Ux * nx_ + Uy * ny_) * tx + (Vx * nx_ + Vy * ny_) * ty
    dS = 2 * np.pi * radius / n_points
    FD = float(np.sum(nu * dvt_dn * ny_ - Ps * nx_) * dS)
    FL = float(-np.sum(nu * dvt_dn * nx_ + Ps * ny_) * dS)
    scale = 2.0 / (mean_velocity**2 * diameter)
    return FlowDiagnostics(float(pf - pb), scale * FD, scale * FL)


def read_reference_csv(path, grid: Grid, components=("u", "v", "p")) -> dict:
    """Reference fields from a CSV with columns ``x, y`` and one per component,
    interpolated linearly onto the grid's domain nodes (nearest value off the hull)."""
    from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

    data = np.genfromtxt(path, delimiter=",", names=True)
    pts = np.column_stack([data["x"], data["y"]])
    out = {}
    for c in components:
        vals = data[c]
        lin = LinearNDInterpolator(pts, vals)(grid.x, grid.y)
        miss = ~np.isfinite(lin)
        if np.any(miss):
            lin[miss] = NearestNDInterpolator(pts, vals)(grid.x[miss], grid.y[miss])
        out[c] = lin
    return out
