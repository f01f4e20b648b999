import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rescurrents.charts import (
    ChartExpr,
    ExprMatrix,
    ParseError,
    PoleError,
    Poly,
    default_names,
    parse_expr,
    transition,
)
from rescurrents.gaussrat import QI

N = 2
X, Y = ChartExpr.coord(N, 0), ChartExpr.coord(N, 1)
XB, YB = ChartExpr.coord(N, 0, True), ChartExpr.coord(N, 1, True)


@st.composite
def polys(draw, n=N, terms=4, deg=3):
    e = ChartExpr.const(n, 0)
    for _ in range(draw(st.integers(1, terms))):
        c = QI(draw(st.integers(-4, 4)), draw(st.integers(-2, 2)))
        t = ChartExpr.const(n, c)
        for v in range(2 * n):
            k = draw(st.integers(0, deg))
            if k:
                t = t * ChartExpr.coord(n, v % n, v >= n) ** k
        e = e + t
    return e


@st.composite
def rationals(draw):
    num = draw(polys())
    den = draw(polys(terms=2, deg=1)) + ChartExpr.const(N, 7)  # nonzero at small points
    return num / den


def test_basic_partials():
    assert (X * XB).partial("hol", 0) == XB
    assert (X * X).partial("anti", 0).is_zero()


def test_log_potential_curvature_coefficient():
    h = 1 + X * XB + Y * YB
    theta_x = h.partial("hol", 0) / h
    coef = theta_x.partial("anti", 0)
    expected = (1 + Y * YB) / (h * h)
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = rng.normal(size=2) + 1j * rng.normal(size=2)
        assert abs(coef.eval(list(p)) - expected.eval(list(p))) <= 1e-12 * abs(expected.eval(list(p)))


def test_partial_against_finite_differences():
    e = parse_expr("(x^2*conj(y) + 3*y)/(1 + x*conj(x))")
    rng = np.random.default_rng(1)
    for _ in range(5):
        p = rng.normal(size=2) + 1j * rng.normal(size=2)
        h = 1e-6
        for i in range(2):
            dp = np.zeros(2, complex)
            dp[i] = h
            # d/dz = (d/da - i d/db)/2 for z = a + ib
            fa = (e.eval(list(p + dp)) - e.eval(list(p - dp))) / (2 * h)
            fb = (e.eval(list(p + 1j * dp)) - e.eval(list(p - 1j * dp))) / (2 * h)
            assert abs(e.partial("hol", i).eval(list(p)) - (fa - 1j * fb) / 2) < 1e-6
            assert abs(e.partial("anti", i).eval(list(p)) - (fa + 1j * fb) / 2) < 1e-6


def test_eval_examples():
    e = parse_expr("x^2 + conj(y)")
    assert e.eval([2, QI(0, 1)]) == QI(4, -1)
    with pytest.raises(PoleError):
        parse_expr("1/x").eval([0, 1])


def test_reduced_and_unreduced_agree():
    a = parse_expr("(x^2 - y^2)/(x - y)")
    b = X + Y
    rng = np.random.default_rng(2)
    for _ in range(10):
        p = list(rng.normal(size=2) + 1j * rng.normal(size=2))
        assert abs(a.eval(p) - b.eval(p)) < 1e-12 * (1 + abs(b.eval(p)))


@given(rationals(), rationals())
@settings(max_examples=30, deadline=None)
def test_leibniz(a, b):
    for d in ("hol", "anti"):
        for i in range(N):
            lhs = (a * b).partial(d, i)
            rhs = a.partial(d, i) * b + a * b.partial(d, i)
            assert (lhs - rhs).is_zero()


@given(rationals())
@settings(max_examples=30, deadline=None)
def test_mixed_partials_commute(a):
    for i in range(N):
        for j in range(N):
            assert (a.partial("hol", i).partial("anti", j) - a.partial("anti", j).partial("hol", i)).is_zero()


@given(rationals())
@settings(max_examples=30, deadline=None)
def test_conjugation(a):
    assert a.conj().conj() == a
    for i in range(N):
        assert a.partial("hol", i).conj() == a.conj().partial("anti", i)


@given(rationals())
@settings(max_examples=30, deadline=None)
def test_parse_print_round_trip(a):
    text = a.to_str()
    b = parse_expr(text)
    assert b == a
    assert b.to_str() == text


def test_parse_errors_have_position():
    with pytest.raises(ParseError) as exc:
        parse_expr("x + * y")
    assert "column" in str(exc.value) or "position" in str(exc.value)
    with pytest.raises(ParseError):
        parse_expr("w + 1")


def test_names_and_matrix():
    assert default_names(2) == ("x", "y")
    M = ExprMatrix([[X, Y], [0, X]])
    assert M.det() == X * X
    assert M.inverse()[0, 1] == -Y / (X * X)


def test_transition_examples():
    one = ChartExpr.const(1, 1)
    assert transition(one, 0, 1, 1) == one
    z = ChartExpr.coord(1, 0)
    w = ChartExpr.coord(1, 0)
    assert transition(z, 0, 1, 1) == ChartExpr.const(1, 1) / w


@given(rationals())
@settings(max_examples=10, deadline=None)
def test_transition_round_trip(a):
    for to in (1, 2):
        back = transition(transition(a, 0, to, 2), to, 0, 2)
        rng = np.random.default_rng(3)
        for _ in range(3):
            p = list(0.5 + rng.normal(size=2) * 0.2 + 1j * rng.normal(size=2) * 0.2)
            assert abs(back.eval(p) - a.eval(p)) <= 1e-9 * (1 + abs(a.eval(p)))
        assert (back - a).is_zero()


def test_vectorized_evaluation_matches_pointwise():
    e = parse_expr("(x*conj(y) + 2)/(1 + x*conj(x) + y*conj(y))^2")
    rng = np.random.default_rng(4)
    z = rng.normal(size=(2, 7)) + 1j * rng.normal(size=(2, 7))
    v = e.evaluate(z)
    for k in range(7):
        assert abs(v[k] - e.eval(list(z[:, k]))) < 1e-14


def test_poly_basics():
    p = Poly.var(2, 0) * Poly.var(2, 2)
    assert p.partial(0) == Poly.var(2, 2)
