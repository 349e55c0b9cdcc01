"""Uniform grids over a domain's bounding box and mask-aware finite differences.

Nodes are stored flat with ``index = i * ny + j`` where ``i`` runs along x and
``j`` along y (``indexing='ij'``). Every derivative operator is a sparse matrix
so it applies equally to numpy vectors and, through a cached sparse tensor, to
torch tensors with exact backpropagation.

Stencils are second order: centered where both neighbours are usable, three
point one-sided for first derivatives and four point one-sided for second
derivatives otherwise. Nodes where neither fits are *flagged* and must be kept
out of losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from ._backend import is_torch, to_torch


class GridAlignmentError(ValueError):
    pass


class StencilError(ValueError):
    pass


_FIRST_C = ((-1, -0.5), (1, 0.5))
_FIRST_F = ((0, -1.5), (1, 2.0), (2, -0.5))
_SECOND_C = ((-1, 1.0), (0, -2.0), (1, 1.0))
_SECOND_F = ((0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0))


@dataclass
class FDOperator:
    """Sparse linear operator on grid vectors, with the nodes it could not serve."""

    matrix: sp.csr_matrix
    flagged: np.ndarray
    _torch: object = None

    def __call__(self, f):
        if is_torch(f):
            import torch

            if self._torch is None:
                coo = self.matrix.tocoo()
                idx = np.vstack([coo.row, coo.col]).astype(np.int64)
                self._torch = torch.sparse_coo_tensor(
                    torch.as_tensor(idx), torch.as_tensor(coo.data, dtype=torch.float64), coo.shape,
                    check_invariants=False,
                ).coalesce()
            if f.dim() == 1:
                return torch.sparse.mm(self._torch, f.unsqueeze(1)).squeeze(1)
            return torch.sparse.mm(self._torch, f)
        return self.matrix @ np.asarray(f, dtype=float)

    def __add__(self, other: "FDOperator") -> "FDOperator":
        return FDOperator((self.matrix + other.matrix).tocsr(), self.flagged | other.flagged)


class Grid:
    """Uniform ``nx`` by ``ny`` grid on the bounding box of ``domain``.

    Grid coordinates that fall within a millionth of a spacing of an axis-aligned
    boundary line are snapped onto it, so on-segment nodes have distance exactly
    zero. Axis-aligned lines that do not meet a grid line are rejected.
    """

    def __init__(self, domain: geo.DomainSpec, nx: int, ny: int, tol: float | None = None):
        if nx < 4 or ny < 4:
            raise ValueError("grids need at least 4 nodes per direction")
        self.domain = domain
        self.nx, self.ny = int(nx), int(ny)
        x0, x1, y0, y1 = domain.box
        self.box = domain.box
        self.hx = (x1 - x0) / (self.nx - 1)
        self.hy = (y1 - y0) / (self.ny - 1)
        self.x1d = x0 + self.hx * np.arange(self.nx)
        self.y1d = y0 + self.hy * np.arange(self.ny)
        self.x1d[-1], self.y1d[-1] = x1, y1
        self._snap()
        X, Y = np.meshgrid(self.x1d, self.y1d, indexing="ij")
        self.x = X.ravel()
        self.y = Y.ravel()
        self.tol = 1e-12 * domain.diagonal if tol is None else tol
        self.kind, self.index = geo.classify_points(domain, self.x, self.y, self.tol)
        self._ops: dict = {}

    def _snap(self):
        for seg in self.domain.segments:
            g = seg.geom
            if not isinstance(g, geo.Line) or g.axis is None:
                continue
            coords, origin, h, label = (
                (self.x1d, self.box[0], self.hx, "x") if g.axis == 0 else (self.y1d, self.box[2], self.hy, "y"))
            c = g.a.x if g.axis == 0 else g.a.y
            k = int(round((c - origin) / h))
            if not 0 <= k < len(coords) or abs(origin + k * h - c) > 1e-6 * h:
                raise GridAlignmentError(
                    f"segment {seg.name or '?'} at {label} = {c} does not fall on a grid line; "
                    f"choose a resolution with {label}-spacing dividing the offset")
            coords[k] = c

    # -- basic properties -------------------------------------------------

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def h(self) -> float:
        return min(self.hx, self.hy)

    @property
    def inside(self) -> np.ndarray:
        return self.kind == geo.INSIDE

    @property
    def domain_mask(self) -> np.ndarray:
        return self.kind != geo.OUTSIDE

    @property
    def outside(self) -> np.ndarray:
        return self.kind == geo.OUTSIDE

    def segment_nodes(self, i: int) -> np.ndarray:
        """Flat indices of nodes lying on segment ``i`` (intersection points excluded)."""
        return np.flatnonzero((self.kind == geo.ON_SEGMENT) & (self.index == i))

    def intersection_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.kind == geo.AT_INTERSECTION)

    def flat(self, i: int, j: int) -> int:
        return i * self.ny + j

    def reshape(self, f) -> np.ndarray:
        return np.asarray(f).reshape(self.nx, self.ny)

    def nearest_node(self, x: float, y: float) -> int:
        i = int(np.argmin(np.abs(self.x1d - x)))
        j = int(np.argmin(np.abs(self.y1d - y)))
        return self.flat(i, j)

    def describe(self) -> str:
        counts = {geo.KIND_NAMES[k]: int(np.sum(self.kind == k)) for k in geo.KIND_NAMES}
        return f"Grid {self.nx}x{self.ny}, h=({self.hx:.4g}, {self.hy:.4g}), {counts}"

    # -- finite difference operators --------------------------------------

    def _usable(self, mask: str) -> np.ndarray:
        if mask == "box":
            return np.ones(self.shape, dtype=bool)
        if mask == "domain":
            return self.reshape(self.domain_mask)
        raise ValueError(f"unknown mask {mask!r}")

    def operator(self, axis: int, order: int, mask: str = "domain") -> FDOperator:
        """Derivative operator of ``order`` (1 or 2) along ``axis`` (0 = x, 1 = y)."""
        key = (axis, order, mask)
        if key in self._ops:
            return self._ops[key]
        usable = self._usable(mask)
        nx, ny = self.shape
        n_axis = nx if axis == 0 else ny
        h = self.hx if axis == 0 else self.hy
        I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        pos = I if axis == 0 else J

        def avail(k):
            p = pos + k
            ok = (p >= 0) & (p < n_axis)
            out = np.zeros(self.shape, dtype=bool)
            ii = I + k if axis == 0 else I
            jj = J if axis == 0 else J + k
            out[ok] = usable[ii[ok], jj[ok]]
            return out

        av = {k: avail(k) for k in range(-3, 4)}
        centered_st, one_st, scale = (_FIRST_C, _FIRST_F, 1.0 / h) if order == 1 else (_SECOND_C, _SECOND_F, 1.0 / h**2)
        need = len(one_st) - 1
        c_ok = usable & av[-1] & av[1]
        f_ok = usable & ~c_ok & np.logical_and.reduce([av[k] for k in range(1, need + 1)])
        b_ok = usable & ~c_ok & ~f_ok & np.logical_and.reduce([av[-k] for k in range(1, need + 1)])
        flagged = ~(c_ok | f_ok | b_ok)

        rows, cols, vals = [], [], []
        for ok, stencil, sign in ((c_ok, centered_st, 1), (f_ok, one_st, 1), (b_ok, one_st, -1)):
            src = np.flatnonzero(ok.ravel())
            if src.size == 0:
                continue
            for off, w in stencil:
                k = sign * off
                step = k * ny if axis == 0 else k
                rows.append(src)
                cols.append(src + step)
                # backward first-derivative stencils flip sign, second-derivative ones do not
                coef = w * scale * (sign if order == 1 else 1)
                vals.append(np.full(src.size, coef))
        if rows:
            M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n))
        else:
            M = sp.csr_matrix((self.n, self.n))
        op = FDOperator(M, flagged.ravel())
        self._ops[key] = op
        return op

    def dx(self, mask: str = "domain") -> FDOperator:
        return self.operator(0, 1, mask)

    def dy(self, mask: str = "domain") -> FDOperator:
        return self.operator(1, 1, mask)

    def laplace_operator(self, mask: str = "domain") -> FDOperator:
        key = ("lap", mask)
        if key not in self._ops:
            self._ops[key] = self.operator(0, 2, mask) + self.operator(1, 2, mask)
        return self._ops[key]

    def flagged(self, mask: str = "domain", order: int = 2) -> np.ndarray:
        """Nodes lacking a valid stencil for derivatives up to ``order``."""
        out = np.zeros(self.n, dtype=bool)
        for axis in (0, 1):
            for o in range(1, order + 1):
                out |= self.operator(axis, o, mask).flagged
        return out

    def loss_nodes(self, order: int = 2) -> np.ndarray:
        """Inside nodes with usable stencils; the only nodes PDE losses may read."""
        return self.inside & ~self.flagged("domain", order)

    def fd_grad(self, f, mask: str = "domain"):
        return self.dx(mask)(f), self.dy(mask)(f)

    def fd_laplace(self, f, mask: str = "domain"):
        return self.laplace_operator(mask)(f)

    def fd_div(self, fx, fy, mask: str = "domain"):
        return self.dx(mask)(fx) + self.dy(mask)(fy)

    # -- boundary derivatives and sampling -------------------------------

    def normal_derivative(self, f, seg: int, points: np.ndarray | None = None):
        """Outward normal derivative of ``f`` on segment ``seg``.

        For lines on grid lines the on-segment nodes are used with a three point
        one-sided stencil along the inward normal. Other segments (circles,
        slanted lines) are sampled at ``points`` (default: 64 points on the
        segment) with quadratic interpolation at distances 0, h, 2h along the
        inward normal. Returns ``(locations, values)`` where locations are node
        indices or an ``(m, 2)`` point array.
        """
        f = np.asarray(f, dtype=float)
        geom = self.domain.segments[seg].geom
        if isinstance(geom, geo.Line) and geom.axis is not None and points is None:
            nodes = self.segment_nodes(seg)
            nx_, ny_ = geom.normal
            step = int(round(nx_)) * self.ny + int(round(ny_))
            h = self.hx if geom.axis == 0 else self.hy
            i, j = np.divmod(nodes, self.ny)
            di, dj = int(round(nx_)), int(round(ny_))
            ok = (i + 2 * di >= 0) & (i + 2 * di < self.nx) & (j + 2 * dj >= 0) & (j + 2 * dj < self.ny)
            if not np.all(ok):
                raise StencilError(f"segment {seg}: normal ray leaves the grid")
            ray = np.stack([nodes, nodes + step, nodes + 2 * step])
            if np.any(self.outside[ray[1:]]):
                raise StencilError(f"segment {seg}: insufficient interior nodes along the normal")
            d_inward = (-1.5 * f[ray[0]] + 2.0 * f[ray[1]] - 0.5 * f[ray[2]]) / h
            return nodes, -d_inward
        if points is None:
            points = geom.sample(64)
        points = np.asarray(points, dtype=float)
        nx_, ny_ = geom.inward_normal(points[:, 0], points[:, 1])
        h = self.h
        vals = [_quadratic_matrix(self, points[:, 0] + k * h * nx_, points[:, 1] + k * h * ny_) @ f
                for k in range(3)]
        d_inward = (-1.5 * vals[0] + 2.0 * vals[1] - 0.5 * vals[2]) / h
        return points, -d_inward

    def bilinear(self, f, px, py) -> np.ndarray:
        """Bilinear interpolation of the grid vector ``f`` at points (px, py)."""
        F = self.reshape(np.asarray(f, dtype=float))
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        i = np.clip(np.searchsorted(self.x1d, px, side="right") - 1, 0, self.nx - 2)
        j = np.clip(np.searchsorted(self.y1d, py, side="right") - 1, 0, self.ny - 2)
        tx = (px - self.x1d[i]) / (self.x1d[i + 1] - self.x1d[i])
        ty = (py - self.y1d[j]) / (self.y1d[j + 1] - self.y1d[j])
        return ((1 - tx) * (1 - ty) * F[i, j] + tx * (1 - ty) * F[i + 1, j]
                + (1 - tx) * ty * F[i, j + 1] + tx * ty * F[i + 1, j + 1])

    def boundary_operators(self, seg: int, n_points: int = 128) -> "BoundaryOperators":
        """Sparse value and outward-normal-derivative operators for segment ``seg``.

        Axis-aligned lines use their on-segment nodes and a one-sided three point
        stencil; other segments use quadratic interpolation at ``n_points`` samples
        and at steps ``h`` and ``2h`` along the inward normal.
        """
        key = ("boundary", seg, n_points)
        if key not in self._ops:
            self._ops[key] = _boundary_operators(self, seg, n_points)
        return self._ops[key]

    def stencil_nodes(self, px: float, py: float) -> np.ndarray:
        """Flat indices of the four nodes surrounding a point."""
        i = int(np.clip(np.searchsorted(self.x1d, px, side="right") - 1, 0, self.nx - 2))
        j = int(np.clip(np.searchsorted(self.y1d, py, side="right") - 1, 0, self.ny - 2))
        return np.array([self.flat(i, j), self.flat(i + 1, j), self.flat(i, j + 1), self.flat(i + 1, j + 1)])

    # -- export ------------------------------------------------------------

    def to_csv(self, path, values: dict, include_outside: bool = False) -> None:
        """Write columns ``x, y, kind`` plus one column per named field."""
        keep = np.ones(self.n, dtype=bool) if include_outside else self.domain_mask
        names = list(values)
        cols = [self.x[keep], self.y[keep], self.kind[keep].astype(float)]
        cols += [np.asarray(values[k], dtype=float)[keep] for k in names]
        header = ",".join(["x", "y", "kind"] + names)
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.10g")


def eval_structure(ss, slots, grid: Grid):
    """Evaluate every component of a solution structure on ``grid``.

    ``slots`` is either a mapping from slot name to grid vector or a callable
    ``(x, y) -> mapping`` (analytic slot fields).
    """
    from .structure.fields import GridEvaluator

    return GridEvaluator(ss, grid).evaluate(slots)


@dataclass
class BoundaryOperators:
    """Sparse maps from grid vectors to boundary values and outward normal derivatives."""

    points: np.ndarray
    value: FDOperator
    normal: FDOperator


def _boundary_operators(grid: Grid, seg: int, n_points: int = 128) -> BoundaryOperators:
    geom = grid.domain.segments[seg].geom
    n = grid.n
    if isinstance(geom, geo.Line) and geom.axis is not None:
        nodes = grid.segment_nodes(seg)
        di, dj = int(round(geom.normal[0])), int(round(geom.normal[1]))
        step = di * grid.ny + dj
        h = grid.hx if geom.axis == 0 else grid.hy
        m = nodes.size
        rows = np.arange(m)
        V = sp.csr_matrix((np.ones(m), (rows, nodes)), shape=(m, n))
        cols = np.concatenate([nodes, nodes + step, nodes + 2 * step])
        vals = np.concatenate([np.full(m, 1.5 / h), np.full(m, -2.0 / h), np.full(m, 0.5 / h)])
        N = sp.csr_matrix((vals, (np.tile(rows, 3), cols)), shape=(m, n))
        pts = np.column_stack([grid.x[nodes], grid.y[nodes]])
    else:
        pts = geom.sample(n_points)
        nx_, ny_ = geom.inward_normal(pts[:, 0], pts[:, 1])
        h = grid.h
        mats = [_quadratic_matrix(grid, pts[:, 0] + k * h * nx_, pts[:, 1] + k * h * ny_) for k in range(3)]
        V = mats[0]
        N = ((1.5 * mats[0] - 2.0 * mats[1] + 0.5 * mats[2]) / h).tocsr()
    none = np.zeros(len(pts), dtype=bool)
    return BoundaryOperators(pts, FDOperator(V.tocsr(), none), FDOperator(N.tocsr(), none))


def _lagrange3(coords, p):
    """Indices and weights of three-point Lagrange interpolation along one axis."""
    n = len(coords)
    c = np.clip(np.rint((p - coords[0]) / (coords[1] - coords[0])).astype(np.int64), 1, n - 2)
    idx = np.stack([c - 1, c, c + 1])
    xs = coords[idx]
    w = np.empty_like(xs)
    for k in range(3):
        a, b = [m for m in range(3) if m != k]
        w[k] = (p - xs[a]) * (p - xs[b]) / ((xs[k] - xs[a]) * (xs[k] - xs[b]))
    return idx, w


def _quadratic_matrix(grid: Grid, px, py) -> sp.csr_matrix:
    """Tensor-product quadratic interpolation: third-order values, so one-sided
    normal differences built on it stay second order."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    m = len(px)
    ii, wx = _lagrange3(grid.x1d, px)
    jj, wy = _lagrange3(grid.y1d, py)
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            rows.append(np.arange(m))
            cols.append(ii[a] * grid.ny + jj[b])
            vals.append(wx[a] * wy[b])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, grid.n))
