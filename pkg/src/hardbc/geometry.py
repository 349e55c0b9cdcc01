"""Boundary segments, distance fields and point classification.

Two scalar fields are attached to every segment:

* ``phi`` is the Euclidean distance to the segment's point set. It vanishes
  exactly on the segment and is positive elsewhere, but it is only C0 where the
  closest point switches from the interior of the segment to an endpoint.
* ``phi_bar`` is a smooth normalized function: zero on the segment with unit
  derivative along the inward normal. For a line it is the signed distance to
  the supporting line, for a circle the signed radial distance.

All field functions are vectorized over numpy arrays of x and y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import Expr, as_expr, ZERO

INSIDE, ON_SEGMENT, AT_INTERSECTION, OUTSIDE = 0, 1, 2, 3
KIND_NAMES = {INSIDE: "inside", ON_SEGMENT: "on-segment", AT_INTERSECTION: "intersection", OUTSIDE: "outside"}


class GeometryError(ValueError):
    pass


class AmbiguousGeometryError(GeometryError):
    pass


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    @classmethod
    def of(cls, p) -> "Point2":
        if isinstance(p, Point2):
            return p
        x, y = p
        return cls(float(x), float(y))


# ---------------------------------------------------------------------------
# segment geometry


class SegmentGeom:
    """Geometry of one C1 boundary piece."""

    def phi(self, x, y):
        raise NotImplementedError

    def phi_bar(self, x, y):
        raise NotImplementedError

    def phi_bar_grad(self, x, y):
        raise NotImplementedError

    def phi_grad(self, x, y):
        raise NotImplementedError

    def sample(self, n: int) -> np.ndarray:
        """``n`` points spread over the segment, shape ``(n, 2)``."""
        raise NotImplementedError

    def inward_normal(self, x, y):
        return self.phi_bar_grad(x, y)


@dataclass(frozen=True)
class Line(SegmentGeom):
    """Straight segment from ``a`` to ``b``.

    The domain lies to the left of the direction ``a -> b``, so an outer
    boundary listed counter-clockwise gets inward normals. Pass ``flip=True``
    to put the domain on the right instead.
    """

    a: Point2
    b: Point2
    flip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "a", Point2.of(self.a))
        object.__setattr__(self, "b", Point2.of(self.b))
        if self.a == self.b:
            raise GeometryError("line endpoints must be distinct")

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    @property
    def tangent(self) -> tuple[float, float]:
        L = self.length
        return ((self.b.x - self.a.x) / L, (self.b.y - self.a.y) / L)

    @property
    def normal(self) -> tuple[float, float]:
        """Constant inward unit normal."""
        tx, ty = self.tangent
        nx, ny = -ty, tx
        if self.flip:
            nx, ny = -nx, -ny
        return (nx + 0.0, ny + 0.0)

    @property
    def axis(self) -> int | None:
        """0 for a vertical line (x = const), 1 for horizontal, else None."""
        if self.a.x == self.b.x:
            return 0
        if self.a.y == self.b.y:
            return 1
        return None

    def _closest_t(self, x, y):
        ax, ay = self.a
        dx, dy = self.b.x - ax, self.b.y - ay
        t = ((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy)
        return np.clip(t, 0.0, 1.0)

    def phi(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ax = self.axis
        if ax == 0:
            lo, hi = sorted((self.a.y, self.b.y))
            dy = np.maximum(np.maximum(lo - y, y - hi), 0.0)
            return np.hypot(x - self.a.x, dy)
        if ax == 1:
            lo, hi = sorted((self.a.x, self.b.x))
            dx = np.maximum(np.maximum(lo - x, x - hi), 0.0)
            return np.hypot(dx, y - self.a.y)
        t = self._closest_t(x, y)
        qx = self.a.x + t * (self.b.x - self.a.x)
        qy = self.a.y + t * (self.b.y - self.a.y)
        return np.hypot(x - qx, y - qy)

    def phi_grad(self, x, y):
        """Gradient of ``phi``; the inward normal is used on the segment itself."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = self._closest_t(x, y)
        qx = self.a.x + t * (self.b.x - self.a.x)
        qy = self.a.y + t * (self.b.y - self.a.y)
        d = np.hypot(x - qx, y - qy)
        nx, ny = self.normal
        safe = np.where(d > 0, d, 1.0)
        gx = np.where(d > 0, (x - qx) / safe, nx)
        gy = np.where(d > 0, (y - qy) / safe, ny)
        return gx, gy

    def phi_bar(self, x, y):
        nx, ny = self.normal
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if nx == 0.0:
            return ny * (y - self.a.y)
        if ny == 0.0:
            return nx * (x - self.a.x)
        return nx * (x - self.a.x) + ny * (y - self.a.y)

    def phi_bar_grad(self, x, y):
        nx, ny = self.normal
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.full(shape, nx), np.full(shape, ny)

    def project(self, x, y):
        """Orthogonal projection onto the supporting line."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ax = self.axis
        if ax == 0:
            return np.full(np.broadcast(x, y).shape, self.a.x), np.broadcast_to(y, np.broadcast(x, y).shape).copy()
        if ax == 1:
            return np.broadcast_to(x, np.broadcast(x, y).shape).copy(), np.full(np.broadcast(x, y).shape, self.a.y)
        d = self.phi_bar(x, y)
        nx, ny = self.normal
        return x - d * nx, y - d * ny

    def sample(self, n: int) -> np.ndarray:
        t = (np.arange(n) + 0.5) / n
        return np.column_stack([self.a.x + t * (self.b.x - self.a.x), self.a.y + t * (self.b.y - self.a.y)])

    def to_dict(self) -> dict:
        d = {"type": "line", "a": [self.a.x, self.a.y], "b": [self.b.x, self.b.y]}
        if self.flip:
            d["flip"] = True
        return d


@dataclass(frozen=True)
class Circle(SegmentGeom):
    """Full circle; ``domain_side`` says whether the domain is outside (a hole) or inside."""

    center: Point2
    radius: float
    domain_side: str = "outside"

    def __post_init__(self):
        object.__setattr__(self, "center", Point2.of(self.center))
        if not self.radius > 0:
            raise GeometryError("circle radius must be strictly positive")
        if self.domain_side not in ("inside", "outside"):
            raise GeometryError(f"domain_side must be 'inside' or 'outside', got {self.domain_side!r}")

    @property
    def _sign(self) -> float:
        return 1.0 if self.domain_side == "outside" else -1.0

    def _r(self, x, y):
        return np.hypot(np.asarray(x, dtype=float) - self.center.x, np.asarray(y, dtype=float) - self.center.y)

    def phi(self, x, y):
        return np.abs(self._r(x, y) - self.radius)

    def phi_bar(self, x, y):
        return self._sign * (self._r(x, y) - self.radius)

    def phi_bar_grad(self, x, y):
        """Radial unit vector towards the domain. Zero at the center, where it is undefined."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = self._r(x, y)
        safe = np.where(r > 0, r, 1.0)
        gx = np.where(r > 0, self._sign * (x - self.center.x) / safe, 0.0)
        gy = np.where(r > 0, self._sign * (y - self.center.y) / safe, 0.0)
        return gx, gy

    def phi_grad(self, x, y):
        gx, gy = self.phi_bar_grad(x, y)
        s = np.sign(self.phi_bar(x, y))
        s = np.where(s == 0, 1.0, s)
        return s * gx, s * gy

    def sample(self, n: int) -> np.ndarray:
        t = 2 * np.pi * np.arange(n) / n
        return np.column_stack([self.center.x + self.radius * np.cos(t), self.center.y + self.radius * np.sin(t)])

    def to_dict(self) -> dict:
        return {"type": "circle", "center": [self.center.x, self.center.y], "radius": self.radius,
                "domain_side": self.domain_side}


def geom_from_dict(d: dict) -> SegmentGeom:
    kind = d.get("type")
    if kind == "line":
        return Line(Point2.of(d["a"]), Point2.of(d["b"]), bool(d.get("flip", False)))
    if kind == "circle":
        return Circle(Point2.of(d["center"]), float(d["radius"]), d.get("domain_side", "outside"))
    raise GeometryError(f"unknown segment type {kind!r}")


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True)
class BCRow:
    """One boundary condition row with respect to a basis vector.

    ``kind`` is ``"dirichlet"`` (``b . u = g``), ``"robin"``
    (``d(b . u)/dn + c . u = h``) or ``"free"`` (no condition).
    """

    kind: str
    basis: tuple
    g: Expr = ZERO
    c: tuple = ()
    h: Expr = ZERO

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin", "free"):
            raise GeometryError(f"unknown boundary condition kind {self.kind!r}")
        basis = tuple(float(v) for v in self.basis)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "g", as_expr(self.g))
        object.__setattr__(self, "h", as_expr(self.h))
        c = tuple(as_expr(v) for v in self.c) if self.c else tuple(ZERO for _ in basis)
        if len(c) != len(basis):
            raise GeometryError("Robin coefficient vector must match the number of components")
        object.__setattr__(self, "c", c)

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == "dirichlet"

    @property
    def is_robin(self) -> bool:
        return self.kind == "robin"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "basis": list(self.basis)}
        if self.kind == "dirichlet":
            d["g"] = str(self.g)
        elif self.kind == "robin":
            d["c"] = [str(v) for v in self.c]
            d["h"] = str(self.h)
        return d


@dataclass(frozen=True)
class SegmentSpec:
    """A boundary segment with its boundary-condition rows.

    Scalar problems have a single row with basis ``(1,)``. ``mu`` is 1 for
    segments without Robin rows and 2 otherwise.
    """

    geom: SegmentGeom
    rows: tuple
    name: str = ""
    vanishing_gradient: bool = False

    def __post_init__(self):
        rows = tuple(self.rows)
        object.__setattr__(self, "rows", rows)
        if not rows:
            raise GeometryError("a segment needs at least one boundary row")
        n = len(rows[0].basis)
        if any(len(r.basis) != n for r in rows):
            raise GeometryError(f"segment {self.name!r}: basis vectors of different lengths")
        if len(rows) != n:
            raise GeometryError(f"segment {self.name!r}: expected {n} rows for an {n}-component basis")
        B = np.array([r.basis for r in rows])
        if not np.allclose(B @ B.T, np.eye(n), atol=1e-12):
            raise GeometryError(f"segment {self.name!r}: basis vectors must be orthonormal")
        # Robin coefficients must act on the non-Dirichlet part of the basis
        dirichlet = [np.array(r.basis) for r in rows if r.is_dirichlet]
        for r in rows:
            if r.is_robin and any(_c_along(r.c, d, self.geom) for d in dirichlet):
                raise GeometryError(
                    f"segment {self.name!r}: Robin coefficient has a component along a Dirichlet basis vector")

    @property
    def n_components(self) -> int:
        return len(self.rows)

    @property
    def mu(self) -> int:
        return 2 if any(r.is_robin for r in self.rows) else 1

    @property
    def has_dirichlet(self) -> bool:
        return any(r.is_dirichlet for r in self.rows)

    @property
    def all_dirichlet(self) -> bool:
        return all(r.is_dirichlet for r in self.rows)

    @property
    def n_dirichlet(self) -> int:
        return sum(r.is_dirichlet for r in self.rows)

    @property
    def is_dirichlet(self) -> bool:
        """Scalar convenience."""
        return self.rows[0].is_dirichlet

    @property
    def g(self) -> Expr:
        return self.rows[0].g

    @property
    def c(self) -> Expr:
        return self.rows[0].c[0]

    @property
    def h(self) -> Expr:
        return self.rows[0].h

    def phi(self, x, y):
        return self.geom.phi(x, y)

    def phi_bar(self, x, y):
        return self.geom.phi_bar(x, y)

    @classmethod
    def dirichlet(cls, geom: SegmentGeom, g, name: str = "", vanishing_gradient: bool = False) -> "SegmentSpec":
        return cls(geom, (BCRow("dirichlet", (1.0,), g=g),), name, vanishing_gradient)

    @classmethod
    def robin(cls, geom: SegmentGeom, c, h, name: str = "") -> "SegmentSpec":
        return cls(geom, (BCRow("robin", (1.0,), c=(c,), h=h),), name)

    @classmethod
    def neumann(cls, geom: SegmentGeom, h, name: str = "") -> "SegmentSpec":
        return cls.robin(geom, 0.0, h, name)

    def to_dict(self) -> dict:
        d = {"name": self.name, "geom": self.geom.to_dict(), "rows": [r.to_dict() for r in self.rows]}
        if self.vanishing_gradient:
            d["vanishing_gradient"] = True
        return d


def _c_along(c: tuple, d: np.ndarray, geom: SegmentGeom) -> bool:
    """True if the coefficient vector has a component along ``d`` somewhere on the segment.

    Coefficients that depend on problem parameters cannot be checked here and
    are accepted.
    """
    if any(not e.free_variables <= {"x", "y"} for e in c):
        return False
    pts = geom.sample(7)
    vals = np.array([np.broadcast_to(np.asarray(e(x=pts[:, 0], y=pts[:, 1]), dtype=float), (7,)) for e in c])
    return bool(np.max(np.abs(d @ vals)) > 1e-12)


@dataclass(frozen=True)
class IntersectionPoint:
    point: Point2
    segments: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "point", Point2.of(self.point))
        object.__setattr__(self, "segments", tuple(int(s) for s in self.segments))
        if len(self.segments) < 2:
            raise GeometryError("an intersection point joins at least two segments")


@dataclass(frozen=True)
class DomainSpec:
    """Bounding box, boundary segments and declared intersection points."""

    box: tuple
    segments: tuple
    intersections: tuple = ()
    name: str = ""

    def __post_init__(self):
        box = tuple(float(v) for v in self.box)
        if len(box) != 4 or not (box[0] < box[1] and box[2] < box[3]):
            raise GeometryError(f"bounding box must be (x0, x1, y0, y1) with x0 < x1, y0 < y1, got {box}")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "intersections", tuple(self.intersections))
        n = {s.n_components for s in self.segments}
        if len(n) > 1:
            raise GeometryError("all segments must have the same number of components")
        M = len(self.segments)
        for P in self.intersections:
            for i in P.segments:
                if not 0 <= i < M:
                    raise GeometryError(f"intersection {P.name!r} references unknown segment {i}")
                if self.segments[i].geom.phi(P.point.x, P.point.y) > 1e-12 * self.diagonal:
                    raise GeometryError(f"intersection {P.name!r} does not lie on segment {i}")

    @property
    def n_components(self) -> int:
        return self.segments[0].n_components

    @property
    def diagonal(self) -> float:
        x0, x1, y0, y1 = self.box
        return math.hypot(x1 - x0, y1 - y0)

    def points_of(self, i: int) -> list:
        """Intersection points incident to segment ``i``, in declaration order."""
        return [P for P in self.intersections if i in P.segments]

    def neighbors(self, i: int, P: IntersectionPoint) -> list:
        return [j for j in P.segments if j != i]

    def segment_index(self, name: str) -> int:
        for i, s in enumerate(self.segments):
            if s.name == name:
                return i
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "box": list(self.box),
            "segments": [s.to_dict() for s in self.segments],
            "intersections": [{"name": P.name, "point": [P.point.x, P.point.y], "segments": list(P.segments)}
                              for P in self.intersections],
        }


# ---------------------------------------------------------------------------
# point-wise API


def phi(seg, p) -> float:
    geom = seg.geom if isinstance(seg, SegmentSpec) else seg
    p = Point2.of(p)
    return float(geom.phi(p.x, p.y))


def phi_bar(seg, p) -> tuple[float, tuple[float, float]]:
    """Value and gradient of the normalized function at ``p``."""
    geom = seg.geom if isinstance(seg, SegmentSpec) else seg
    p = Point2.of(p)
    if isinstance(geom, Circle) and p.x == geom.center.x and p.y == geom.center.y:
        raise GeometryError("normalized function of a circle is singular at its center")
    gx, gy = geom.phi_bar_grad(p.x, p.y)
    return float(geom.phi_bar(p.x, p.y)), (float(gx), float(gy))


def phi_point(P, p) -> float:
    P = Point2.of(P)
    p = Point2.of(p)
    return math.hypot(p.x - P.x, p.y - P.y)


def phi_point_field(P: Point2, x, y):
    return np.hypot(np.asarray(x, dtype=float) - P.x, np.asarray(y, dtype=float) - P.y)


def normalizer(p, seg):
    """Orthogonal projection of ``p`` onto the line supporting ``seg``."""
    geom = seg.geom if isinstance(seg, SegmentSpec) else seg
    if not isinstance(geom, Line):
        raise GeometryError("the normalizer is only defined for straight segments")
    p = Point2.of(p)
    px, py = geom.project(p.x, p.y)
    return Point2(float(px), float(py))


# ---------------------------------------------------------------------------
# classification


def _inside_polygon(lines: Sequence[Line], x, y) -> np.ndarray:
    """Even-odd ray casting against the closed loop(s) formed by ``lines``."""
    inside = np.zeros(np.shape(x), dtype=bool)
    for L in lines:
        ax, ay, bx, by = L.a.x, L.a.y, L.b.x, L.b.y
        crosses = (ay > y) != (by > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (y - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (x < xint)
    return inside


def inside_domain(dom: DomainSpec, x, y) -> np.ndarray:
    """Strict interior test ignoring the boundary itself (callers check segments first)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lines = [s.geom for s in dom.segments if isinstance(s.geom, Line)]
    result = _inside_polygon(lines, x, y) if lines else np.ones(x.shape, dtype=bool)
    for s in dom.segments:
        if isinstance(s.geom, Circle):
            result &= s.geom.phi_bar(x, y) > 0
    return result


def classify_points(dom: DomainSpec, x, y, tol: float | None = None):
    """Vectorized classification.

    Returns ``(kind, index)`` integer arrays. ``index`` is the segment index for
    on-segment points, the intersection index for intersection points and -1
    otherwise.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if tol is None:
        tol = 1e-12 * dom.diagonal
    kind = np.full(x.shape, OUTSIDE, dtype=np.int8)
    index = np.full(x.shape, -1, dtype=np.int64)

    near = np.stack([s.geom.phi(x, y) <= tol for s in dom.segments]) if dom.segments else np.zeros((0,) + x.shape, bool)
    count = near.sum(axis=0)

    at_P = np.zeros(x.shape, dtype=bool)
    for k, P in enumerate(dom.intersections):
        hit = phi_point_field(P.point, x, y) <= tol
        kind[hit] = AT_INTERSECTION
        index[hit] = k
        at_P |= hit

    multi = (count > 1) & ~at_P
    if np.any(multi):
        j = int(np.flatnonzero(multi)[0])
        segs = [i for i in range(len(dom.segments)) if near[i].flat[j]]
        raise AmbiguousGeometryError(
            f"point ({x.flat[j]}, {y.flat[j]}) lies within {tol} of non-adjacent segments {segs}")

    single = (count == 1) & ~at_P
    if np.any(single):
        kind[single] = ON_SEGMENT
        index[single] = np.argmax(near[:, single], axis=0)

    rest = count == 0
    rest &= ~at_P
    if np.any(rest):
        ins = inside_domain(dom, x[rest], y[rest])
        kind[np.flatnonzero(rest)[ins]] = INSIDE
    return kind, index


@dataclass(frozen=True)
class Classification:
    kind: int
    index: int = -1

    def __str__(self) -> str:
        if self.kind == ON_SEGMENT:
            return f"OnSegment({self.index})"
        if self.kind == AT_INTERSECTION:
            return f"AtIntersection({self.index})"
        return KIND_NAMES[self.kind].capitalize()


def classify(dom: DomainSpec, p, tol: float | None = None) -> Classification:
    p = Point2.of(p)
    kind, index = classify_points(dom, np.array([p.x]), np.array([p.y]), tol)
    return Classification(int(kind[0]), int(index[0]))


def polygon_domain(vertices, segments_bc, names=None, point_names=None, box=None, holes=(), name="") -> DomainSpec:
    """Build a domain from a counter-clockwise polygon.

    ``segments_bc[k]`` is a callable ``(geom, name) -> SegmentSpec`` or a list
    of ``BCRow`` for the edge from vertex ``k`` to ``k+1``. Each vertex becomes an
    intersection point joining its two edges. ``holes`` are extra
    ``SegmentSpec`` objects (for example circles) without intersections.
    """
    verts = [Point2.of(v) for v in vertices]
    M = len(verts)
    segs = []
    for k in range(M):
        geom = Line(verts[k], verts[(k + 1) % M])
        segname = names[k] if names else f"G{k + 1}"
        bc = segments_bc[k]
        segs.append(bc(geom, segname) if callable(bc) else SegmentSpec(geom, tuple(bc), segname))
    inters = []
    for k in range(M):
        pname = point_names[k] if point_names else f"P{k}"
        inters.append(IntersectionPoint(verts[k], ((k - 1) % M, k), pname))
    segs.extend(holes)
    if box is None:
        xs = [v.x for v in verts]
        ys = [v.y for v in verts]
        box = (min(xs), max(xs), min(ys), max(ys))
    return DomainSpec(box, tuple(segs), tuple(inters), name)
