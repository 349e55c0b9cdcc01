import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardbc import geometry as geo
from hardbc.geometry import BCRow, Circle, Line, SegmentSpec

coord = st.floats(-3.0, 3.0, allow_nan=False)


def fig_l_shape():
    """L-shape with corners A..F at the figure's coordinates (notch top right)."""
    verts = [(0, 0), (4, 0), (4, 2), (2, 2), (2, 4), (0, 4)]
    bcs = [lambda g, n: SegmentSpec.dirichlet(g, 0.0, n)] * 2 + [lambda g, n: SegmentSpec.neumann(g, 0.0, n)] * 4
    return geo.polygon_domain(verts, bcs, names=["2", "3", "4", "5", "6", "1"],
                              point_names=["A", "B", "C", "D", "E", "F"])


# ---------------------------------------------------------------- distances


def test_line_distance_perpendicular_and_endpoint():
    L = Line((0, 0), (1, 0))
    assert geo.phi(L, (0.5, 0.5)) == 0.5
    assert geo.phi(L, (2, 0)) == 1.0


def test_circle_distance():
    C = Circle((1, 1), 0.25)
    assert geo.phi(C, (1.5, 1)) == pytest.approx(0.25, abs=1e-15)


def test_line_normalized_function():
    v, g = geo.phi_bar(Line((0, 0), (1, 0)), (0.3, 0.2))
    assert v == pytest.approx(0.2)
    assert g == (0.0, 1.0)


def test_circle_normalized_function():
    v, g = geo.phi_bar(Circle((1, 1), 0.25), (1.5, 1))
    assert v == pytest.approx(0.25)
    assert g == pytest.approx((1.0, 0.0))


def test_circle_normalized_singular_at_center():
    with pytest.raises(geo.GeometryError):
        geo.phi_bar(Circle((1, 1), 0.25), (1, 1))


def test_point_distance():
    assert geo.phi_point((0, 0), (3, 4)) == 5.0
    assert geo.phi_point((1.5, 2.5), (1.5, 2.5)) == 0.0
    assert geo.phi_point((4, 0), (4, 2)) == 2.0


def test_degenerate_geometry_rejected():
    with pytest.raises(geo.GeometryError):
        Line((1, 1), (1, 1))
    with pytest.raises(geo.GeometryError):
        Circle((0, 0), 0.0)


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord, st.floats(0, 1))
def test_line_phi_zero_on_segment_and_normalized(ax, ay, bx, by, t):
    if math.hypot(bx - ax, by - ay) < 1e-3:
        return
    L = Line((ax, ay), (bx, by))
    px, py = ax + t * (bx - ax), ay + t * (by - ay)
    assert L.phi(px, py) <= 1e-12
    v, (gx, gy) = geo.phi_bar(L, (px, py))
    assert abs(v) <= 1e-12
    # unit inward normal derivative
    nx, ny = L.normal
    assert gx * nx + gy * ny == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord, coord, coord)
def test_line_phi_bounds_phibar(ax, ay, bx, by, px, py):
    if math.hypot(bx - ax, by - ay) < 1e-3:
        return
    L = Line((ax, ay), (bx, by))
    assert L.phi(px, py) >= abs(L.phi_bar(px, py)) - 1e-12


@settings(max_examples=100, deadline=None)
@given(coord, coord, st.floats(0.1, 2.0), st.floats(0, 2 * math.pi))
def test_circle_on_boundary(cx, cy, r, th):
    C = Circle((cx, cy), r)
    px, py = cx + r * math.cos(th), cy + r * math.sin(th)
    assert C.phi(px, py) <= 1e-12
    assert abs(C.phi_bar(px, py)) <= 1e-12


# ---------------------------------------------------------------- normalizer


def test_normalizer_projects():
    L = Line((0, 0), (1, 0))
    assert geo.normalizer((0.3, 0.2), L) == geo.Point2(0.3, 0.0)
    assert geo.normalizer((0.7, 0.0), L) == geo.Point2(0.7, 0.0)


def test_normalizer_idempotent():
    rng = np.random.default_rng(3)
    L = Line((0.2, -1.0), (1.3, 0.4))
    for p in rng.uniform(-2, 2, size=(100, 2)):
        q = geo.normalizer(p, L)
        assert geo.normalizer(q, L).x == pytest.approx(q.x, abs=1e-14)
        assert geo.normalizer(q, L).y == pytest.approx(q.y, abs=1e-14)


def test_normalizer_needs_line():
    with pytest.raises(geo.GeometryError):
        geo.normalizer((0, 0), Circle((1, 1), 0.5))


# ---------------------------------------------------------------- classification


def test_l_shape_classification():
    dom = fig_l_shape()
    assert geo.classify(dom, (1, 1)).kind == geo.INSIDE
    c = geo.classify(dom, (2, 2))
    assert c.kind == geo.AT_INTERSECTION and dom.intersections[c.index].name == "D"
    # the notch is the top-right quarter of the figure
    assert geo.classify(dom, (3, 3)).kind == geo.OUTSIDE
    assert geo.classify(dom, (1, 3)).kind == geo.INSIDE
    c = geo.classify(dom, (3, 0))
    assert c.kind == geo.ON_SEGMENT and dom.segments[c.index].name == "2"


def test_polygon_domain_accepts_rows():
    rows = [BCRow("dirichlet", (1.0,), g="0")]
    dom = geo.polygon_domain([(0, 0), (1, 0), (1, 1), (0, 1)], [rows] * 4)
    assert len(dom.segments) == 4 and len(dom.intersections) == 4
    assert dom.segments[0].is_dirichlet


def test_circle_hole_classification():
    sq = [lambda g, n: SegmentSpec.dirichlet(g, 0.0, n)] * 4
    hole = SegmentSpec.dirichlet(Circle((0.5, 0.5), 0.1), 0.0, "S")
    dom = geo.polygon_domain([(0, 0), (1, 0), (1, 1), (0, 1)], sq, holes=(hole,))
    assert geo.classify(dom, (0.5, 0.5)).kind == geo.OUTSIDE
    assert geo.classify(dom, (0.2, 0.2)).kind == geo.INSIDE
    assert geo.classify(dom, (0.6, 0.5)).kind == geo.ON_SEGMENT


# ---------------------------------------------------------------- specs


def test_segment_mu():
    L = Line((0, 0), (1, 0))
    assert SegmentSpec.dirichlet(L, 0.0).mu == 1
    assert SegmentSpec.neumann(L, 0.0).mu == 2


def test_segment_rejects_non_orthonormal_basis():
    L = Line((0, 0), (1, 0))
    rows = (BCRow("dirichlet", (1.0, 1.0)), BCRow("dirichlet", (0.0, 1.0)))
    with pytest.raises(geo.GeometryError, match="orthonormal"):
        SegmentSpec(L, rows)


def test_robin_coefficient_along_dirichlet_rejected():
    L = Line((0, 0), (1, 0))
    rows = (BCRow("dirichlet", (1.0, 0.0)), BCRow("robin", (0.0, 1.0), c=("1", "0")))
    with pytest.raises(geo.GeometryError, match="Robin coefficient"):
        SegmentSpec(L, rows)


def test_unknown_bc_kind():
    with pytest.raises(geo.GeometryError):
        BCRow("periodic", (1.0,))


def test_intersection_must_lie_on_segments():
    L1 = SegmentSpec.dirichlet(Line((0, 0), (1, 0)), 0.0)
    L2 = SegmentSpec.dirichlet(Line((1, 0), (1, 1)), 0.0)
    with pytest.raises(geo.GeometryError):
        geo.DomainSpec((0, 1, 0, 1), (L1, L2), (geo.IntersectionPoint((0, 0), (0, 1)),))


def test_geom_dict_round_trip():
    for g in (Line((0, 1), (2, 3)), Circle((0.2, 0.2), 0.05)):
        assert geo.geom_from_dict(g.to_dict()) == g
