"""Solution structures for systems, ``u : Omega -> R^n``.

Boundary rows are posed against per-segment orthonormal bases ``b_i^(j)``:
Dirichlet ``b . u = g``, Robin ``d(b . u)/dn + c . u = h`` or free. The global
structure is ``u = sum_i w_i sum_j b_i^(j) u_i^(j) + [psi^(1..n)] prod phi_i^mu_i``.

Besides the exact GLSS and OP constructions this module builds the two
penalty-based baselines: semi-weak (Dirichlet exact, Robin rows as loss terms)
and weak (every row as a loss term).
"""

from __future__ import annotations

import numpy as np

from .. import expr as ex
from .. import geometry as geo
from . import fields as F
from .core import (
    BCTerm,
    ConfigurationError,
    IllPosedBoundaryError,
    SlotRegistry,
    SolutionStructure,
    bind,
    component_suffix,
    default_component_names,
    distance_product,
    efield,
    phis,
    endpoint_distances,
    point_blend,
    point_label,
    robin_glss,
    robin_op,
    seg_label,
    shared_basis,
    transfinite,
)


def _names(dom, component_names):
    n = dom.n_components
    names = list(component_names) if component_names else default_component_names(n)
    if len(names) != n:
        raise ConfigurationError(f"expected {n} component names, got {len(names)}")
    return names


def _coupling_coeffs(row: geo.BCRow, seg: geo.SegmentSpec, params) -> list:
    """``c . b_k`` for every non-Dirichlet row ``k`` of the segment, as expressions."""
    out = []
    for k, other in enumerate(seg.rows):
        if other.is_dirichlet:
            continue
        e = ex.ZERO
        for cm, bm in zip(row.c, other.basis):
            if bm != 0.0:
                e = ex.add(e, ex.mul(bind(cm, params), ex.Num(bm)))
        out.append((k, e))
    return out


def _components(dom, local_rows, mus=None) -> list:
    """Per component ``m``: ``sum_i w_i sum_j b_i^(j)[m] u_i^(j)``."""
    n = dom.n_components
    comps = []
    for m in range(n):
        terms = []
        for i, seg in enumerate(dom.segments):
            terms.append(F.add(*(F.mul(r.basis[m], local_rows[i][j]) for j, r in enumerate(seg.rows)
                                 if r.basis[m] != 0.0)))
        comps.append(transfinite(dom, terms, mus=mus))
    return comps


class _Intersection:
    """Data of one intersection point after the Dirichlet linear solve."""

    def __init__(self, u: list, slot_part: np.ndarray):
        self.u = u
        self.slot_part = slot_part


def _orthonormal_complement(B: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases (columns) of span(rows of B) and of its complement."""
    if B.size == 0:
        return np.zeros((n, 0)), np.eye(n)
    Q, R = np.linalg.qr(B.T, mode="complete")
    k = B.shape[0]
    # deterministic signs: positive diagonal of R on the span, largest entry positive on the complement
    for c in range(k):
        if R[c, c] < 0:
            Q[:, c] *= -1
    for c in range(k, n):
        j = int(np.argmax(np.abs(Q[:, c])))
        if Q[j, c] < 0:
            Q[:, c] *= -1
    Q[np.abs(Q) < 1e-15] = 0.0
    return Q[:, :k], Q[:, k:]


def resolve_intersections_system(dom: geo.DomainSpec, registry: SlotRegistry, names: list,
                                 params: dict | None = None, check_tol: float = 1e-9) -> dict:
    """Vector values ``u_P`` at intersection points that touch a non-Dirichlet row.

    Independent Dirichlet rows meeting at ``P`` are collected with a rank test.
    With ``Q`` an orthonormal basis of their span, the coefficients
    ``g_P = (B Q)^-1 g`` fix the Dirichlet part; the orthogonal complement gets
    fresh slots ``psi_P``. Dependent rows must agree with the collected ones at
    ``P``, otherwise the boundary data is contradictory.
    """
    params = params or {}
    n = dom.n_components
    ip = []
    for i, seg in enumerate(dom.segments):
        if seg.all_dirichlet:
            continue
        for k, P in enumerate(dom.intersections):
            if i in P.segments and k not in ip:
                ip.append(k)
    ip.sort()

    out = {}
    for k in ip:
        P = dom.intersections[k]
        rows_b, rows_g, skipped = [], [], []
        for i in P.segments:
            for r in dom.segments[i].rows:
                if not r.is_dirichlet:
                    continue
                cand = np.array(rows_b + [list(r.basis)])
                if np.linalg.matrix_rank(cand, tol=1e-10) > len(rows_b):
                    rows_b.append(list(r.basis))
                    rows_g.append(bind(r.g, params))
                else:
                    skipped.append((np.array(r.basis), bind(r.g, params), i))
        B = np.array(rows_b, dtype=float).reshape(len(rows_b), n)
        Q, Qc = _orthonormal_complement(B, n)
        u = [F.ZERO] * n
        if rows_b:
            A = B @ Q
            Ainv = np.linalg.inv(A)
            g_fields = [F.expr_field(g) for g in rows_g]
            gP = [F.add(*(F.mul(float(Ainv[a, l]), g_fields[l]) for l in range(len(rows_b))
                          if Ainv[a, l] != 0.0)) for a in range(len(rows_b))]
            for m in range(n):
                u[m] = F.add(*(F.mul(float(Q[m, a]), gP[a]) for a in range(len(rows_b)) if Q[m, a] != 0.0))
            # consistency of dependent rows at P
            x, y = P.point.x, P.point.y
            gvals = np.array([float(ex.evaluate(g, {"x": x, "y": y})) for g in rows_g])
            uP = Q @ (Ainv @ gvals)
            for b, g, i in skipped:
                val = float(ex.evaluate(g, {"x": x, "y": y}))
                if abs(b @ uP - val) > check_tol * max(1.0, abs(val)):
                    raise IllPosedBoundaryError(
                        f"Dirichlet data on segment {seg_label(dom, i)} contradicts other conditions at "
                        f"point {point_label(dom, k)}: {b @ uP:.6g} != {val:.6g}")
        for c in range(Qc.shape[1]):
            vec = Qc[:, c]
            slot = registry.new(f"psi_{point_label(dom, k)}{component_suffix(vec, names, n) or ''}")
            for m in range(n):
                if vec[m] != 0.0:
                    u[m] = F.add(u[m], F.mul(float(vec[m]), slot))
        out[k] = _Intersection(u, Qc)
    return out


def build_system_glss(dom: geo.DomainSpec, n_components: int | None = None, params: dict | None = None,
                      component_names=None, always_include_bar: bool = False) -> SolutionStructure:
    """Generalized local structures for a system.

    Non-Dirichlet rows on a segment with intersection points use
    ``psi_i^(j) = b . blend(u_A, u_B) [+ phi_A phi_B psibar_i^(j)]``; the extra
    term is added when ``b`` sees no slot in ``u_A`` or ``u_B`` (or always, with
    ``always_include_bar``).
    """
    if n_components is not None and n_components != dom.n_components:
        raise ConfigurationError(f"domain has {dom.n_components} components, not {n_components}")
    params = params or {}
    n = dom.n_components
    names = _names(dom, component_names)
    reg = SlotRegistry()
    remainders = [reg.new(f"psi{component_suffix(np.eye(n)[m], names, n)}") for m in range(n)]
    points = resolve_intersections_system(dom, reg, names, params)

    local = []
    for i, seg in enumerate(dom.segments):
        label = seg_label(dom, i)
        pts = [k for k, P in enumerate(dom.intersections) if i in P.segments]
        psi_rows: dict = {}
        for j, r in enumerate(seg.rows):
            if r.is_dirichlet:
                continue
            b = np.array(r.basis)
            suffix = component_suffix(b, names, n)
            if pts:
                P = [dom.intersections[k] for k in pts]
                weights = point_blend(P, seg.geom)
                blend = F.add(*(F.mul(w, F.dot(b, points[k].u)) for w, k in zip(weights, pts)))
                sees_slot = any(np.any(np.abs(b @ points[k].slot_part) > 1e-12) for k in pts)
                if always_include_bar or not sees_slot:
                    bar = reg.new(f"psibar_{label}{suffix}")
                    blend = F.add(blend, F.mul(*endpoint_distances(seg.geom, P), bar))
                psi_rows[j] = blend
            else:
                psi_rows[j] = reg.new(f"psi_{label}{suffix}")

        rows = []
        for j, r in enumerate(seg.rows):
            if r.is_dirichlet:
                g = efield(r.g, params)
                if seg.vanishing_gradient or seg.mu == 2:
                    extra = reg.new(f"psitilde_{label}{component_suffix(r.basis, names, n)}")
                    g = F.add(g, F.mul(F.PhiBar(seg.geom, label), extra))
                rows.append(g)
            elif r.is_robin:
                coupling = F.add(*(F.mul(F.expr_field(e), psi_rows[k]) for k, e in _coupling_coeffs(r, seg, params)))
                rows.append(robin_glss(psi_rows[j], seg.geom, coupling, efield(r.h, params), False, label))
            else:
                rows.append(psi_rows[j])
        local.append(rows)

    comps = _components(dom, local)
    remainder = distance_product(dom)
    comps = [F.add(c, F.mul(remainders[m], remainder)) for m, c in enumerate(comps)]
    ss = SolutionStructure(comps, names, list(reg.names), "glss", dom, [],
                           {"params": dict(params), "always_include_bar": always_include_bar})
    ss.check_slots()
    return ss


def _boundary_values_op(dom, reg, names, params, B) -> list:
    """``psibar^(j) = g^(j) + psitilde^(j) prod_{i: row j Dirichlet} phi_i`` per basis vector."""
    n = dom.n_components
    M = len(dom.segments)
    bars = []
    for j in range(n):
        tilde = reg.new(f"psitilde{component_suffix(B[j], names, n)}")
        dir_idx = [i for i, s in enumerate(dom.segments) if s.rows[j].is_dirichlet]
        if not dir_idx:
            bars.append(tilde)
            continue
        g = transfinite(dom, [efield(dom.segments[i].rows[j].g, params) for i in dir_idx], dir_idx,
                        mus=[1] * M)
        bars.append(F.add(g, F.mul(tilde, distance_product(dom, dir_idx, [1] * M))))
    return bars


def build_system_op(dom: geo.DomainSpec, n_components: int | None = None, params: dict | None = None,
                    component_names=None, remainder_segments: dict | None = None) -> SolutionStructure:
    """Orthogonal-projection structure for a system with one basis shared by all segments.

    ``remainder_segments`` optionally replaces the remainder distance product of
    a component by ``prod phi_i`` over the named segments. This is only safe for
    components whose boundary rows are all free, such as a pressure that enters
    the boundary conditions through Robin couplings alone.
    """
    if n_components is not None and n_components != dom.n_components:
        raise ConfigurationError(f"domain has {dom.n_components} components, not {n_components}")
    params = params or {}
    n = dom.n_components
    names = _names(dom, component_names)
    B = shared_basis(dom)
    for i, s in enumerate(dom.segments):
        if any(r.is_robin for r in s.rows) and not isinstance(s.geom, geo.Line):
            raise ConfigurationError(
                f"segment {seg_label(dom, i)}: orthogonal projections need straight segments for Robin rows")
    reg = SlotRegistry()
    remainders = [reg.new(f"psi{component_suffix(np.eye(n)[m], names, n)}") for m in range(n)]
    bars = _boundary_values_op(dom, reg, names, params, B)

    local = []
    for i, seg in enumerate(dom.segments):
        label = seg_label(dom, i)
        rows = []
        for j, r in enumerate(seg.rows):
            if r.is_dirichlet:
                g = efield(r.g, params)
                if seg.vanishing_gradient or seg.mu == 2:
                    extra = reg.new(f"psitilde_{label}{component_suffix(r.basis, names, n)}")
                    g = F.add(g, F.mul(F.PhiBar(seg.geom, label), extra))
                rows.append(g)
            elif r.is_robin:
                f = F.sub(F.add(*(F.mul(F.expr_field(e), bars[k]) for k, e in _coupling_coeffs(r, seg, params))),
                          efield(r.h, params))
                rows.append(robin_op(bars[j], seg.geom, f, label))
            else:
                rows.append(bars[j])
        local.append(rows)

    # with a shared basis: u = sum_j b^(j) sum_i w_i u_i^(j)
    per_row = []
    for j in range(n):
        per_row.append(transfinite(dom, [local[i][j] for i in range(len(dom.segments))]))
    comps = []
    default_rem = distance_product(dom)
    for m in range(n):
        rem = default_rem
        if remainder_segments and names[m] in remainder_segments:
            idx = [dom.segment_index(s) if isinstance(s, str) else int(s) for s in remainder_segments[names[m]]]
            _check_remainder_override(dom, idx, m, B, names)
            rem = F.mul(*phis(dom, [1] * len(dom.segments), idx))
        blended = F.add(*(F.mul(float(B[j, m]), per_row[j]) for j in range(n) if B[j, m] != 0.0))
        comps.append(F.add(blended, F.mul(remainders[m], rem)))
    ss = SolutionStructure(comps, names, list(reg.names), "op", dom, [],
                           {"params": dict(params), "remainder_segments": dict(remainder_segments or {}),
                            "boundary_values": bars})
    ss.check_slots()
    return ss


def _check_remainder_override(dom, idx, m, B, names):
    for i, seg in enumerate(dom.segments):
        for j, r in enumerate(seg.rows):
            if B[j, m] != 0.0 and r.kind != "free":
                raise ConfigurationError(
                    f"component {names[m]} has a {r.kind} row on segment {seg_label(dom, i)}; "
                    "its remainder cannot be replaced")
    if not idx:
        raise ConfigurationError("remainder override needs at least one segment")


def build_semi_weak(dom: geo.DomainSpec, n_components: int | None = None, params: dict | None = None,
                    component_names=None) -> SolutionStructure:
    """Dirichlet rows exact through blended data, Robin rows as loss terms.

    Per basis vector ``j``: ``u^(j) = g^(j) + psi^(j) prod_{Dirichlet on j} phi_i``
    (or just ``psi^(j)`` without Dirichlet rows).
    """
    params = params or {}
    n = dom.n_components
    names = _names(dom, component_names)
    B = shared_basis(dom)
    M = len(dom.segments)
    reg = SlotRegistry()
    per_row = []
    for j in range(n):
        slot = reg.new(f"psi{component_suffix(np.eye(n)[j] if n > 1 else [1.0], names, n)}")
        dir_idx = [i for i, s in enumerate(dom.segments) if s.rows[j].is_dirichlet]
        if not dir_idx:
            per_row.append(slot)
            continue
        g = transfinite(dom, [efield(dom.segments[i].rows[j].g, params) for i in dir_idx], dir_idx, mus=[1] * M)
        per_row.append(F.add(g, F.mul(slot, distance_product(dom, dir_idx, [1] * M))))
    comps = [F.add(*(F.mul(float(B[j, m]), per_row[j]) for j in range(n) if B[j, m] != 0.0)) for m in range(n)]
    terms = [_term(dom, i, j, params) for i, s in enumerate(dom.segments) for j, r in enumerate(s.rows) if r.is_robin]
    ss = SolutionStructure(comps, names, list(reg.names), "semi-weak", dom, terms, {"params": dict(params)})
    ss.check_slots()
    return ss


def build_weak(dom: geo.DomainSpec, n_components: int | None = None, params: dict | None = None,
               component_names=None) -> SolutionStructure:
    """``u = psi``; every Dirichlet and Robin row becomes a loss term."""
    params = params or {}
    n = dom.n_components
    names = _names(dom, component_names)
    reg = SlotRegistry()
    comps = [reg.new(f"psi{component_suffix(np.eye(n)[m], names, n)}") for m in range(n)]
    terms = [_term(dom, i, j, params) for i, s in enumerate(dom.segments) for j, r in enumerate(s.rows)
             if r.kind != "free"]
    ss = SolutionStructure(list(comps), names, list(reg.names), "weak", dom, terms, {"params": dict(params)})
    ss.check_slots()
    return ss


def _term(dom, i, j, params) -> BCTerm:
    r = dom.segments[i].rows[j]
    return BCTerm(i, j, r.kind, r.basis, bind(r.g, params), tuple(bind(c, params) for c in r.c), bind(r.h, params))
