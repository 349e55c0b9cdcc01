"""Solution structure container and shared building blocks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .. import expr as ex
from .. import geometry as geo
from . import fields as F

MODES = ("glss", "op", "semi-weak", "weak", "legacy-sukumar")


class ConfigurationError(ValueError):
    pass


class IllPosedBoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class BCTerm:
    """A boundary row that is enforced through a loss term instead of by construction."""

    segment: int
    row: int
    kind: str
    basis: tuple
    g: ex.Expr = ex.ZERO
    c: tuple = ()
    h: ex.Expr = ex.ZERO


@dataclass
class SolutionStructure:
    """Fields mapping slot functions to the solution components.

    ``components[m]`` is the field of solution component ``m``. ``slots`` lists
    the unknown functions in ansatz output order.
    """

    components: list
    component_names: list
    slots: list
    mode: str
    domain: geo.DomainSpec
    bc_terms: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def slot_table(self) -> dict:
        return {name: k for k, name in enumerate(self.slots)}

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def roots(self) -> dict:
        return dict(zip(self.component_names, self.components))

    def dump(self) -> dict:
        return {
            "mode": self.mode,
            "components": list(self.component_names),
            "slots": list(self.slots),
            "bc_terms": [{"segment": t.segment, "row": t.row, "kind": t.kind} for t in self.bc_terms],
            "dag": F.dump(self.roots()),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.dump(), **kw)

    def hash(self) -> str:
        return F.structure_hash(self.roots(), {"mode": self.mode, "slots": list(self.slots)})

    def check_slots(self) -> None:
        used = set()
        for c in self.components:
            used.update(c.slot_names())
        missing = used - set(self.slots)
        if missing:
            raise ConfigurationError(f"slots used but not registered: {sorted(missing)}")


class SlotRegistry:
    """Hands out uniquely named slot nodes in creation order."""

    def __init__(self):
        self.names: list[str] = []
        self.nodes: dict = {}

    def new(self, name: str) -> F.Slot:
        if name in self.nodes:
            raise ConfigurationError(f"slot name {name!r} used twice; rename segments or points")
        node = F.Slot(name)
        self.names.append(name)
        self.nodes[name] = node
        return node


def seg_label(dom: geo.DomainSpec, i: int) -> str:
    return dom.segments[i].name or str(i + 1)


def point_label(dom: geo.DomainSpec, k: int) -> str:
    return dom.intersections[k].name or f"P{k}"


def bind(e: ex.Expr, params: dict) -> ex.Expr:
    """Substitute problem parameters so only ``x`` and ``y`` remain."""
    e = ex.as_expr(e)
    if params:
        e = ex.substitute(e, params)
    extra = e.free_variables - {"x", "y"}
    if extra:
        raise ConfigurationError(f"expression {e} needs values for {sorted(extra)}")
    return e


def efield(e: ex.Expr, params: dict) -> F.Field:
    return F.expr_field(bind(e, params))


def phis(dom: geo.DomainSpec, mus=None, indices=None) -> list:
    """``phi_i ** mu_i`` nodes for the chosen segments."""
    idx = range(len(dom.segments)) if indices is None else indices
    out = []
    for i in idx:
        mu = dom.segments[i].mu if mus is None else mus[i]
        out.append(F.Phi(dom.segments[i].geom, mu, seg_label(dom, i)))
    return out


def product_scale(dom: geo.DomainSpec, indices=None, mus=None, n: int = 65) -> float:
    """Largest value of ``prod phi_i^mu_i`` over an ``n x n`` sample of the domain."""
    x0, x1, y0, y1 = dom.box
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n), indexing="ij")
    x, y = X.ravel(), Y.ravel()
    kind, _ = geo.classify_points(dom, x, y)
    inside = kind == geo.INSIDE
    idx = range(len(dom.segments)) if indices is None else indices
    prod = np.ones(int(inside.sum()))
    for i in idx:
        mu = dom.segments[i].mu if mus is None else mus[i]
        prod *= dom.segments[i].geom.phi(x[inside], y[inside]) ** mu
    top = float(prod.max()) if prod.size else 0.0
    return top if top > 0 else 1.0


def distance_product(dom: geo.DomainSpec, indices=None, mus=None, normalize: bool = True) -> F.Field:
    """``prod phi_i^mu_i``, divided by its largest domain value unless ``normalize`` is off.

    Without the constant the product is of order 1e-4 on the L-shape and the
    remainder slot would need outputs of order 1e4 to contribute.
    """
    factors = phis(dom, mus, indices)
    if normalize:
        factors.append(F.Const(round(1.0 / product_scale(dom, indices, mus), 12)))
    return F.mul(*factors)


def transfinite(dom: geo.DomainSpec, terms, indices=None, mus=None, priority=None) -> F.Field:
    """Blend ``terms`` (one per segment in ``indices``) over those segments.

    When every term is the same node the blend is that node (the weights sum to
    one), which keeps structures small.
    """
    idx = list(range(len(dom.segments)) if indices is None else indices)
    terms = list(terms)
    if not idx:
        raise ConfigurationError("transfinite blend over no segments")
    if all(t is terms[0] for t in terms):
        return terms[0]
    if all(F.is_const(t, 0.0) for t in terms):
        return F.ZERO
    geoms = [dom.segments[i].geom for i in idx]
    mu = [dom.segments[i].mu if mus is None else mus[i] for i in idx]
    if priority is None:
        priority = [dom.segments[i].n_dirichlet for i in idx]
    names = [seg_label(dom, i) for i in idx]
    return F.Transfinite(geoms, mu, terms, priority, names)


# Point distances enter squared: the blend is then smooth at the points
# themselves, while plain distances put a cone singularity into psi_i.
POINT_POWER = 2


def point_distance(P) -> F.Field:
    return F.PhiPoint(P.point, P.name, POINT_POWER)


def _along(geom, P, Q) -> F.Field:
    """Signed distance from ``P`` measured along the segment towards ``Q``."""
    L = geom.length
    tx, ty = (Q.point.x - P.point.x) / L, (Q.point.y - P.point.y) / L
    e = ex.parse(f"(x - ({P.point.x!r}))*({tx!r}) + (y - ({P.point.y!r}))*({ty!r})")
    return F.expr_field(e)


def endpoint_distances(geom, points) -> list:
    """Distance functions to the intersection points of one segment, for the blend.

    A straight segment whose two points are its ends gets the coordinates
    along the segment: the blend is then plain linear interpolation, smooth
    everywhere and free in its slope at both ends. Otherwise squared point
    distances are used.
    """
    if isinstance(geom, geo.Line) and len(points) == 2:
        ends = {(geom.a.x, geom.a.y), (geom.b.x, geom.b.y)}
        if {(P.point.x, P.point.y) for P in points} == ends:
            A, B = points
            return [_along(geom, A, B), _along(geom, B, A)]
    return [point_distance(P) for P in points]


def point_blend(points, geom=None) -> list:
    """Weights ``prod_{Q != P} phi_Q / sum_R prod_{Q != R} phi_Q`` over intersection points."""
    nodes = endpoint_distances(geom, points) if geom is not None else [point_distance(P) for P in points]
    if len(nodes) == 1:
        return [F.ONE]
    numer = [F.mul(*[n for k, n in enumerate(nodes) if k != m]) for m in range(len(nodes))]
    den = F.add(*numer)
    return [F.div(nm, den) for nm in numer]


def robin_glss(psi: F.Field, geom, coupling: F.Field, h: F.Field, legacy: bool = False, name: str = "") -> F.Field:
    """``psi - phibar grad(phibar) . grad(psi) + phibar (coupling - h)``.

    ``coupling`` is ``c psi`` in the scalar case. In legacy mode the plain
    distance and its gradient stand in for the normalized function.
    """
    if legacy:
        pb = F.Phi(geom, 1, name)
        gx, gy = F.PhiGrad(geom, 0, name), F.PhiGrad(geom, 1, name)
    else:
        pb = F.PhiBar(geom, name)
        gx, gy = F.PhiBarGrad(geom, 0, name), F.PhiBarGrad(geom, 1, name)
    normal_grad = F.add(F.mul(gx, F.Gradient(psi, 0)), F.mul(gy, F.Gradient(psi, 1)))
    return F.add(psi, F.neg(F.mul(pb, normal_grad)), F.mul(pb, F.sub(coupling, h)))


def robin_op(boundary_value: F.Field, geom, derivative: F.Field, name: str = "") -> F.Field:
    """``B(N(x)) + phibar(x) D(N(x))`` with ``N`` the projection onto the segment's line."""
    if not isinstance(geom, geo.Line):
        raise ConfigurationError(f"segment {name}: orthogonal projection needs a straight segment, not {type(geom).__name__}")
    return F.add(F.Compose(boundary_value, geom, name), F.mul(F.PhiBar(geom, name), F.Compose(derivative, geom, name)))


def shared_basis(dom: geo.DomainSpec) -> np.ndarray:
    """The common basis (rows) if every segment uses the same one, else raise."""
    B0 = np.array([r.basis for r in dom.segments[0].rows])
    for s in dom.segments[1:]:
        B = np.array([r.basis for r in s.rows])
        if not np.array_equal(B, B0):
            raise ConfigurationError("this mode requires identical basis vectors on every segment")
    return B0


def component_suffix(vec, names, n: int) -> str:
    """``^u`` style suffix for slots tied to a basis vector; empty for scalars."""
    if n == 1:
        return ""
    v = np.asarray(vec, dtype=float)
    k = int(np.argmax(np.abs(v)))
    if np.isclose(abs(v[k]), 1.0) and np.allclose(np.delete(v, k), 0.0):
        return f"^{names[k]}"
    return "^(" + ",".join(f"{c:g}" for c in v) + ")"


def default_component_names(n: int) -> list:
    if n == 1:
        return ["u"]
    return [f"u{k + 1}" for k in range(n)]
