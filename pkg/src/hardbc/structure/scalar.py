"""Solution structures for scalar problems.

``u = sum_i w_i u_i + psi * prod_i phi_i ** mu_i`` where the local structures
``u_i`` satisfy the boundary condition of segment ``i``:

* generalized local structures (GLSS) with shared intersection-point slots,
* orthogonal projections (OP) evaluating one boundary-value field on each
  Robin segment's line,
* the older construction that uses one distance function for both roles and
  ignores intersections (kept to demonstrate its corner artifacts).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import geometry as geo
from . import fields as F
from .core import (
    ConfigurationError,
    SlotRegistry,
    SolutionStructure,
    distance_product,
    efield,
    endpoint_distances,
    point_blend,
    point_label,
    robin_glss,
    robin_op,
    seg_label,
    transfinite,
)


def _require_scalar(dom: geo.DomainSpec):
    if dom.n_components != 1:
        raise ConfigurationError("scalar builders need single-component segments; use the system builders")
    for s in dom.segments:
        if s.rows[0].kind == "free":
            raise ConfigurationError("scalar segments must carry a Dirichlet or Robin condition")


def local_dirichlet(dom: geo.DomainSpec, i: int, registry: SlotRegistry, params: dict | None = None) -> F.Field:
    """``g_i``, plus ``phibar_i * psitilde_i`` when the distance has a vanishing gradient."""
    seg = dom.segments[i]
    if not seg.is_dirichlet:
        raise ConfigurationError(f"segment {seg_label(dom, i)} is not a Dirichlet segment")
    g = efield(seg.g, params or {})
    if seg.vanishing_gradient:
        extra = registry.new(f"psitilde_{seg_label(dom, i)}")
        return F.add(g, F.mul(F.PhiBar(seg.geom, seg_label(dom, i)), extra))
    return g


def local_robin_glss(dom: geo.DomainSpec, i: int, psi_i: F.Field, params: dict | None = None,
                     legacy: bool = False) -> F.Field:
    """``psi_i - phibar (grad phibar . grad psi_i) + phibar (c psi_i - h)``."""
    seg = dom.segments[i]
    c = efield(seg.c, params or {})
    h = efield(seg.h, params or {})
    return robin_glss(psi_i, seg.geom, F.mul(c, psi_i), h, legacy, seg_label(dom, i))


def resolve_intersections_scalar(dom: geo.DomainSpec, registry: SlotRegistry, params: dict | None = None,
                                 always_include_bar: bool = False) -> dict:
    """Boundary-value fields ``psi_i`` for every Robin segment.

    A Robin segment meeting others at points ``A, B`` gets
    ``psi_i = (phi_B u_A + phi_A u_B) / (phi_A + phi_B) [+ phi_A phi_B psibar_i]``
    where ``u_P`` is the neighbour's Dirichlet data or a slot ``psi_P`` shared
    by all Robin segments through ``P``. The ``psibar_i`` term is added only when
    every neighbour is Dirichlet, unless ``always_include_bar`` is set.
    An isolated Robin segment gets a plain slot ``psi_i``.
    """
    params = params or {}
    point_values: dict = {}

    def u_at(k: int, i: int) -> tuple[F.Field, bool]:
        P = dom.intersections[k]
        neigh = [j for j in P.segments if j != i]
        dirichlet = [j for j in neigh if dom.segments[j].is_dirichlet]
        if dirichlet:
            return efield(dom.segments[dirichlet[0]].g, params), True
        if k not in point_values:
            point_values[k] = registry.new(f"psi_{point_label(dom, k)}")
        return point_values[k], False

    # create intersection slots first, in point order, for a stable slot table
    robin = [i for i, s in enumerate(dom.segments) if not s.is_dirichlet]
    for k, P in enumerate(dom.intersections):
        for i in P.segments:
            if i in robin:
                u_at(k, i)

    out = {}
    for i in robin:
        pts = [k for k, P in enumerate(dom.intersections) if i in P.segments]
        if not pts:
            out[i] = registry.new(f"psi_{seg_label(dom, i)}")
            continue
        vals = [u_at(k, i) for k in pts]
        P = [dom.intersections[k] for k in pts]
        weights = point_blend(P, dom.segments[i].geom)
        psi = F.add(*(F.mul(w, v) for w, (v, _) in zip(weights, vals)))
        if always_include_bar or all(is_d for _, is_d in vals):
            bar = registry.new(f"psibar_{seg_label(dom, i)}")
            psi = F.add(psi, F.mul(*endpoint_distances(dom.segments[i].geom, P), bar))
        out[i] = psi
    return out


def _assemble(dom, registry, remainder, local, mode, params, info=None) -> SolutionStructure:
    u = F.add(transfinite(dom, local), F.mul(remainder, distance_product(dom)))
    ss = SolutionStructure([u], ["u"], list(registry.names), mode, dom, [], dict(info or {}))
    ss.info.setdefault("params", dict(params or {}))
    ss.check_slots()
    return ss


def build_scalar_glss(dom: geo.DomainSpec, params: dict | None = None,
                      always_include_bar: bool = False) -> SolutionStructure:
    """Generalized local solution structure for a scalar problem."""
    _require_scalar(dom)
    reg = SlotRegistry()
    remainder = reg.new("psi")
    psis = resolve_intersections_scalar(dom, reg, params, always_include_bar)
    local = []
    for i, seg in enumerate(dom.segments):
        if seg.is_dirichlet:
            local.append(local_dirichlet(dom, i, reg, params))
        else:
            local.append(local_robin_glss(dom, i, psis[i], params))
    return _assemble(dom, reg, remainder, local, "glss", params, {"always_include_bar": always_include_bar})


@dataclass(frozen=True)
class TrimmedLine(geo.Line):
    """Straight segment with the trimmed R-function distance.

    With ``f`` the signed distance to the supporting line and
    ``t = ((L/2)^2 - |x - c|^2) / L`` the trimming disc,
    ``phi = sqrt(f^2 + ((sqrt(t^2 + f^4) - t) / 2)^2)``. It vanishes exactly on
    the segment and is normalized away from its ends, where its derivatives
    are unbounded.
    """

    def _parts(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        L = self.length
        cx, cy = (self.a.x + self.b.x) / 2, (self.a.y + self.b.y) / 2
        f = self.phi_bar(x, y)
        t = ((L / 2) ** 2 - (x - cx) ** 2 - (y - cy) ** 2) / L
        r = np.sqrt(t * t + f**4)
        q = (r - t) / 2
        return x, y, L, cx, cy, f, t, r, q

    def phi(self, x, y):
        *_, f, t, r, q = self._parts(x, y)
        return np.sqrt(f * f + q * q)

    def phi_grad(self, x, y):
        x, y, L, cx, cy, f, t, r, q = self._parts(x, y)
        nx, ny = self.normal
        tx, ty = -2 * (x - cx) / L, -2 * (y - cy) / L
        rs = np.where(r > 0, r, 1.0)
        rx = np.where(r > 0, (t * tx + 2 * f**3 * nx) / rs, 0.0)
        ry = np.where(r > 0, (t * ty + 2 * f**3 * ny) / rs, 0.0)
        d = np.sqrt(f * f + q * q)
        ds = np.where(d > 0, d, 1.0)
        gx = np.where(d > 0, (f * nx + q * (rx - tx) / 2) / ds, nx)
        gy = np.where(d > 0, (f * ny + q * (ry - ty) / 2) / ds, ny)
        return gx, gy

    def to_dict(self) -> dict:
        return dict(super().to_dict(), distance="trimmed")


def _trimmed(dom: geo.DomainSpec) -> geo.DomainSpec:
    segs = []
    for s in dom.segments:
        g = s.geom
        if isinstance(g, geo.Line):
            g = TrimmedLine(g.a, g.b, g.flip)
        segs.append(replace(s, geom=g))
    return replace(dom, segments=tuple(segs))


def build_legacy_sukumar(dom: geo.DomainSpec, params: dict | None = None) -> SolutionStructure:
    """Older local structures: one approximate distance per segment serves as
    both the distance and the normalized function, and intersections are ignored.

    Straight segments use the trimmed R-function distance, whose Laplacian is
    unbounded at the segment ends, and every Robin segment owns an independent
    slot, so the blend is also discontinuous at corners between Robin segments.
    Provided for comparison only.
    """
    _require_scalar(dom)
    dom = _trimmed(dom)
    reg = SlotRegistry()
    remainder = reg.new("psi")
    local = []
    for i, seg in enumerate(dom.segments):
        if seg.is_dirichlet:
            local.append(efield(seg.g, params or {}))
        else:
            psi_i = reg.new(f"psi_{seg_label(dom, i)}")
            local.append(local_robin_glss(dom, i, psi_i, params, legacy=True))
    return _assemble(dom, reg, remainder, local, "legacy-sukumar", params)


def boundary_value_op(dom: geo.DomainSpec, registry: SlotRegistry, params: dict | None = None,
                      slot_name: str = "psitilde") -> F.Field:
    """``g + psitilde * prod_{Dirichlet} phi_k`` with ``g`` blending all Dirichlet data."""
    dirichlet = [i for i, s in enumerate(dom.segments) if s.is_dirichlet]
    tilde = registry.new(slot_name)
    if not dirichlet:
        return tilde
    g = transfinite(dom, [efield(dom.segments[i].g, params or {}) for i in dirichlet], dirichlet,
                    mus=[1] * len(dom.segments))
    return F.add(g, F.mul(tilde, distance_product(dom, dirichlet, [1] * len(dom.segments))))


def build_scalar_op(dom: geo.DomainSpec, params: dict | None = None) -> SolutionStructure:
    """Orthogonal-projection structure: all Robin segments share one boundary-value field."""
    _require_scalar(dom)
    for i, s in enumerate(dom.segments):
        if not s.is_dirichlet and not isinstance(s.geom, geo.Line):
            raise ConfigurationError(
                f"segment {seg_label(dom, i)}: orthogonal projections need straight Robin segments")
    reg = SlotRegistry()
    remainder = reg.new("psi")
    bar = boundary_value_op(dom, reg, params)
    local = []
    for i, seg in enumerate(dom.segments):
        if seg.is_dirichlet:
            local.append(local_dirichlet(dom, i, reg, params))
        else:
            c = efield(seg.c, params or {})
            h = efield(seg.h, params or {})
            deriv = F.sub(F.mul(c, bar), h)
            local.append(robin_op(bar, seg.geom, deriv, seg_label(dom, i)))
    ss = _assemble(dom, reg, remainder, local, "op", params)
    ss.info["boundary_value"] = bar
    return ss
