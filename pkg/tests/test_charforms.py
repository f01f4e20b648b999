import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rescurrents.charforms import (
    FormSeries,
    c_to_ch,
    ch_to_c,
    chern_character,
    invert_series,
    level_chern_form,
    log_series,
    newton_exact_check,
    newton_table,
    power_sum,
    roundtrip_exact,
    total_chern,
    wp_eval,
    wp_is_homogeneous,
    wp_str,
)
from rescurrents.gaussrat import QI
from rescurrents.superforms import FormMatrix, FormValue, popcount, wedge

N = 3
TWO = [m for m in range(1 << (2 * N)) if popcount(m) == 2]

qi = st.builds(QI, st.integers(-3, 3), st.integers(-3, 3))


@st.composite
def even_matrix(draw, r):
    data = {}
    for m in draw(st.lists(st.sampled_from(TWO), min_size=1, max_size=3, unique=True)):
        A = np.empty((r, r), dtype=object)
        for idx in np.ndindex(r, r):
            A[idx] = draw(qi)
        data[m] = A
    return FormMatrix(N, r, r, data)


@st.composite
def unit_series(draw):
    comps = [FormValue.scalar(N, QI(1))]
    for l in range(1, N + 1):
        masks = [m for m in range(1 << (2 * N)) if popcount(m) == 2 * l]
        d = draw(st.dictionaries(st.sampled_from(masks), qi, max_size=3))
        comps.append(FormValue(N, d))
    return FormSeries(N, comps)


# Newton tables ------------------------------------------------------------------


def test_small_tables():
    tab = newton_table(3)
    assert wp_str(tab.Q[1]) == "t1"
    assert wp_str(tab.Q[2]) == "t1^2 - 2*t2"
    assert wp_str(tab.Q[3]) == "t1^3 - 3*t1*t2 + 3*t3"


def test_q3_against_brute_force_six_variables():
    q3 = newton_table(3).Q[3]
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = [int(v) for v in rng.integers(-6, 7, 6)]
        e = [sum(math.prod(c) for c in itertools.combinations(x, j)) for j in range(1, 4)]
        assert wp_eval(q3, e) == sum(v**3 for v in x)


def test_weighted_homogeneity():
    tab = newton_table(8)
    for l in range(1, 9):
        assert wp_is_homogeneous(tab.Q[l], l)
        assert not tab.Qt[l] or wp_is_homogeneous(tab.Qt[l], l)
        assert not tab.Qh[l] or wp_is_homogeneous(tab.Qh[l], l)


def test_exact_newton_identities_and_round_trip():
    assert newton_exact_check(8, 8)
    assert roundtrip_exact(8)


def test_table_bounds():
    with pytest.raises(ValueError):
        newton_table(0)
    assert len(newton_table(12).Q) == 13


# level Chern forms ------------------------------------------------------------


def _one_by_one(form: FormValue) -> FormMatrix:
    return FormMatrix(N, 1, 1, {m: np.array([[c]], dtype=object) for m, c in form.data.items()})


def test_zero_curvature():
    s = level_chern_form(FormMatrix(N, 2, 2), factor=1)
    assert s == FormSeries.one(N, 1)


def test_rank_one():
    lam = 2 - 1j
    s = level_chern_form(_one_by_one(FormValue(N, {0b001001: lam})))
    assert np.isclose(complex(s[1].data[0b001001]), 1j / (2 * math.pi) * lam)


def test_rank_two_diagonal():
    A = FormValue(N, {0b001001: QI(1), 0b010010: QI(2)})
    B = FormValue(N, {0b100100: QI(3)})
    M = FormMatrix(N, 2, 2, {m: np.array([[A.data.get(m, QI(0)), QI(0)], [QI(0), B.data.get(m, QI(0))]], dtype=object)
                             for m in set(A.data) | set(B.data)})
    s = level_chern_form(M, factor=1)
    assert s[2] == wedge(A, B)


def test_odd_entries_rejected():
    with pytest.raises(ValueError):
        level_chern_form(FormMatrix(N, 1, 1, {1: np.array([[QI(1)]], dtype=object)}))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3).flatmap(even_matrix))
def test_leibniz_and_newton_routes_agree(M):
    assert level_chern_form(M, factor=1, method="leibniz") == level_chern_form(M, factor=1, method="newton")


# series -----------------------------------------------------------------------


def test_geometric_inverse():
    a = FormValue(N, {0b001001: QI(1), 0b010010: QI(1, 1)})
    s = FormSeries(N, [FormValue.scalar(N, QI(1)), a])
    inv = invert_series(s)
    assert inv[1] == -a
    assert inv[2] == wedge(a, a)
    assert invert_series(FormSeries.one(N, QI(1))) == FormSeries.one(N, QI(1))


@settings(max_examples=30, deadline=None)
@given(unit_series())
def test_inverse_properties(s):
    one = FormSeries.one(N, QI(1))
    assert s * invert_series(s) == one
    assert invert_series(invert_series(s)) == s


def test_non_unit_rejected():
    with pytest.raises(ValueError):
        invert_series(FormSeries(N, [FormValue.scalar(N, QI(2))]))


@settings(max_examples=30, deadline=None)
@given(unit_series())
def test_c_ch_round_trip(s):
    ch = c_to_ch(s)
    assert ch[1] == s[1]
    assert ch[2] == wedge(s[1], s[1]).scale(Fraction(1, 2)) - s[2]
    assert ch_to_c(ch, N) == s


@settings(max_examples=30, deadline=None)
@given(unit_series())
def test_log_identity(s):
    ch = c_to_ch(s)
    ln = log_series(s)
    for l in range(1, N + 1):
        assert ln[l] == ch[l].scale((-1) ** (l - 1) * math.factorial(l - 1))


def test_trivial_series_has_no_character():
    ch = c_to_ch(FormSeries.one(N, QI(1)))
    assert all(c.is_zero() for c in ch[1:])


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 2), min_size=1, max_size=3).flatmap(
    lambda rs: st.tuples(*[even_matrix(r) for r in rs])))
def test_total_chern_character_matches_power_sums(curvs):
    # with factor 1: ch_l = p_l / l!
    tot = total_chern(list(curvs), factor=1)
    ch = c_to_ch(tot)
    for l in range(1, N + 1):
        assert ch[l] == power_sum(list(curvs), l).degree_part(2 * l).scale(Fraction(1, math.factorial(l)))


def test_chern_character_normalization():
    A = FormValue(N, {0b001001: 1.0 + 0j})
    B = FormValue(N, {0b010010: 2.0 + 0j})
    curvs = [_one_by_one(A + B)]
    assert power_sum(curvs, 2) == wedge(A + B, A + B)
    ch2 = chern_character(curvs, 2)
    want = complex(wedge(A + B, A + B).data[0b011011]) * (1j) ** 2 / ((2 * math.pi) ** 2 * 2)
    assert np.isclose(complex(ch2.data[0b011011]), want)
    assert power_sum([FormMatrix(N, 2, 2)], 1).is_zero()


@pytest.mark.parametrize("k,l,m", [(3, 1, 1), (5, 2, 4), (2, 3, 1)])
def test_projective_example_cohomology(k, l, m):
    n = 2
    w = FormValue(n, {0b0101: QI(1), 0b1010: QI(1)})

    def diag(ws):
        r = len(ws)
        data = {}
        for mask, c in w.data.items():
            A = np.empty((r, r), dtype=object)
            for i in range(r):
                for j in range(r):
                    A[i, j] = c * ws[i] if i == j else QI(0)
            data[mask] = A
        return FormMatrix(n, r, r, data)

    tot = total_chern([FormMatrix(n, 1, 1), diag([-k, -(l + m)]), diag([-(k + l)])], factor=1)
    assert tot[1] == w.scale(m)
    assert tot[2] == wedge(w, w).scale(m * m + l * (m - k))
