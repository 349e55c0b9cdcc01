import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardbc import expr as ex

# ---------------------------------------------------------------- parsing


def test_parse_manufactured_solution_tree():
    e = ex.parse("sin(alpha*x)*cos(beta*y)")
    assert e == ex.BinOp("*", ex.Func("sin", ex.BinOp("*", ex.Var("alpha"), ex.Var("x"))),
                         ex.Func("cos", ex.BinOp("*", ex.Var("beta"), ex.Var("y"))))
    assert e.free_variables == frozenset({"x", "y", "alpha", "beta"})


def test_zero_is_constant():
    assert ex.is_constant(ex.parse("0"), 0.0)


def test_power_is_right_associative():
    assert ex.evaluate(ex.parse("2^3^2"), {}) == 512.0


def test_unary_minus_binds_looser_than_power():
    assert ex.parse("-x^2")(x=3.0) == -9.0


@pytest.mark.parametrize("text,offset", [("2*", 2), ("(x", 2), ("x)", 1), ("3 $ 4", 2)])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ex.ExprSyntaxError) as err:
        ex.parse(text)
    assert err.value.offset == offset


def test_unknown_identifier():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("gamma*x")
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("tan(x)")


# ---------------------------------------------------------------- evaluation


def test_eval_sin_at_zero():
    assert ex.evaluate(ex.parse("sin(alpha*x)"), {"x": 0.0, "alpha": 5.0}) == 0.0


def test_eval_pi():
    assert ex.evaluate(ex.parse("pi"), {}) == 3.141592653589793


def test_eval_darcy_source_by_hand():
    f = ex.parse("-0.5*sin(2*beta*y)*(alpha^2*cos(2*alpha*x) + beta^2*cos(2*alpha*x) - beta^2)")
    a, b, x, y = 2.0, 3.0, 0.5, 0.5
    want = -0.5 * math.sin(2 * b * y) * (a**2 * math.cos(2 * a * x) + b**2 * math.cos(2 * a * x) - b**2)
    assert ex.evaluate(f, {"x": x, "y": y, "alpha": a, "beta": b}) == pytest.approx(want, rel=1e-15)


def test_eval_broadcasts_arrays():
    x = np.linspace(0, 1, 7)
    out = ex.evaluate(ex.parse("x*y + 1"), {"x": x, "y": 2.0})
    np.testing.assert_allclose(out, 2 * x + 1)


def test_eval_non_finite_raises():
    with pytest.raises(ex.ExprEvalError):
        ex.evaluate(ex.parse("1/x"), {"x": 0.0})
    with pytest.raises(ex.ExprEvalError):
        ex.evaluate(ex.parse("0^(-1)"), {})


def test_eval_missing_binding():
    with pytest.raises(ex.ExprEvalError, match="alpha"):
        ex.evaluate(ex.parse("alpha*x"), {"x": 1.0})


# ---------------------------------------------------------------- differentiation


def test_diff_product():
    assert ex.to_string(ex.diff(ex.parse("x*y"), "x")) == "y"


def test_diff_manufactured_solution():
    d = ex.diff(ex.parse("sin(alpha*x)*cos(beta*y)"), "x")
    env = {"x": 0.3, "y": 0.7, "alpha": 2.5, "beta": 1.5}
    assert ex.evaluate(d, env) == pytest.approx(2.5 * math.cos(0.75) * math.cos(1.05), rel=1e-14)


def test_diff_rejects_parameters():
    with pytest.raises(ValueError):
        ex.diff(ex.parse("alpha*x"), "alpha")


def test_substitute_binds_parameters():
    e = ex.substitute(ex.parse("sin(alpha*x)"), {"alpha": 2.0})
    assert e.free_variables == frozenset({"x"})
    assert ex.evaluate(e, {"x": 0.25}) == pytest.approx(math.sin(0.5))


# ---------------------------------------------------------------- properties

_leaves = st.sampled_from(["x", "y", "alpha", "beta", "1", "2.5", "0.5", "pi"])


def _combine(children):
    un = st.tuples(st.sampled_from(["sin", "cos", "exp", "-"]), children).map(
        lambda t: f"-({t[1]})" if t[0] == "-" else f"{t[0]}({t[1]})")
    bi = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]}){t[1]}({t[2]})")
    sq = children.map(lambda c: f"({c})^2")
    return st.one_of(un, bi, sq)


expressions = st.recursive(_leaves, _combine, max_leaves=8)
points = st.tuples(*[st.floats(-1.0, 1.0) for _ in range(4)])


@settings(max_examples=150, deadline=None)
@given(expressions, points)
def test_to_string_round_trip(text, p):
    e = ex.parse(text)
    env = dict(zip(("x", "y", "alpha", "beta"), p))
    again = ex.parse(ex.to_string(e))
    try:
        v = ex.evaluate(e, env)
    except ex.ExprEvalError:
        return
    assert ex.evaluate(again, env) == pytest.approx(v, rel=1e-12, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(expressions, points, st.sampled_from(["x", "y"]))
def test_diff_matches_central_difference(text, p, var):
    e = ex.parse(text)
    env = dict(zip(("x", "y", "alpha", "beta"), p))
    d = ex.diff(e, var)
    h = 1e-5
    try:
        up = ex.evaluate(e, {**env, var: env[var] + h})
        dn = ex.evaluate(e, {**env, var: env[var] - h})
        exact = ex.evaluate(d, env)
    except ex.ExprEvalError:
        return
    fd = (up - dn) / (2 * h)
    assert exact == pytest.approx(fd, rel=1e-5, abs=1e-5 * max(1.0, abs(up), abs(dn)))


@settings(max_examples=100, deadline=None)
@given(expressions)
def test_parse_is_deterministic(text):
    assert ex.parse(text) == ex.parse(text)
