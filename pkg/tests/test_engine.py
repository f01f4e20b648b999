import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rescurrents.charts import ChartExpr
from rescurrents.engine import (
    CHI_PROFILES,
    BoxDomain,
    Bump,
    ChiProfile,
    CycleComponent,
    CycleSpec,
    EpsSchedule,
    LogRadialDomain,
    NotInvariantError,
    QuadConfig,
    TestForm,
    adaptive_integrate,
    chi_eval,
    extrapolate,
    pair,
    pair_cycle,
    pou_weight_expr,
    pou_weights,
    top_to_volume,
)
from rescurrents.superforms import FormValue

CHI = CHI_PROFILES["default"]


# cutoff profiles --------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(CHI_PROFILES))
def test_chi_endpoints_and_monotone(name):
    p = CHI_PROFILES[name]
    t = np.linspace(0, p.b + 1, 2001)
    v, dv = chi_eval(p, t)
    assert np.all(v[t <= p.a] == 0) and np.all(v[t >= p.b] == 1)
    assert np.all(np.diff(v) >= 0) and np.all(dv >= 0)


@pytest.mark.parametrize("name", sorted(CHI_PROFILES))
def test_chi_derivative_and_second_derivative_continuity(name):
    p = CHI_PROFILES[name]
    h = 1e-6
    t = np.linspace(p.a + 0.01, p.b - 0.01, 50)
    fd = (chi_eval(p, t + h)[0] - chi_eval(p, t - h)[0]) / (2 * h)
    assert np.allclose(chi_eval(p, t)[1], fd, atol=1e-7)
    # chi'' -> 0 at both ends (C^2 gluing with the constant pieces)
    for e in (p.a, p.b):
        for s in (-1, 1):
            x = e + s * 1e-4
            if x < 0:
                continue
            d2 = (chi_eval(p, x + 1e-7)[1] - chi_eval(p, x - 1e-7)[1]) / 2e-7
            assert abs(d2) < 1e-2


def test_chi_rejects_bad_input():
    with pytest.raises(ValueError):
        ChiProfile("x", 2.0, 1.0)
    with pytest.raises(ValueError):
        chi_eval(CHI, -1.0)


def test_schedule_is_geometric():
    eps = EpsSchedule(0.2, 0.5, 4).epsilons()
    assert eps == [0.2, 0.1, 0.05, 0.025]
    with pytest.raises(ValueError):
        EpsSchedule(0.1, 1.5, 3)


# quadrature -------------------------------------------------------------------


def test_gauss_rule_is_exact_for_polynomials():
    cfg = QuadConfig(order=4, tol=1e-14, abs_tol=1e-15, init=1, max_depth=1)
    dom = BoxDomain([0, 0], [1, 2])
    res = adaptive_integrate(lambda X: X[0] ** 7 * X[1] ** 3, dom, cfg)
    assert abs(res.value - (1 / 8) * (2**4 / 4)) < 1e-13


def test_unit_hypercube():
    res = adaptive_integrate(lambda X: np.ones(X.shape[1]), BoxDomain([0] * 4, [1] * 4), QuadConfig(order=2, init=1))
    assert abs(res.value - 1) < 1e-14


def test_adaptive_refinement_on_kink():
    res = adaptive_integrate(lambda X: np.abs(X[0] - 0.3), BoxDomain([0], [1]), QuadConfig(tol=1e-9, abs_tol=1e-12))
    assert abs(res.value - (0.3**2 + 0.7**2) / 2) < 1e-8
    assert res.depth > 2 and not res.overrun


def test_shell_forcing_refines_cells():
    dom = BoxDomain([0], [1])
    cfg = QuadConfig(tol=1, abs_tol=1, shell_depth=3)

    def f(X):
        return np.ones(X.shape[1]), X[0] * 10

    res = adaptive_integrate(f, dom, cfg, shell=(1.0, 2.0))
    assert res.depth >= 3


def test_fubini_study_volume_of_line():
    # (i / 2 pi) dz ^ dzbar / (1 + |z|^2)^2 integrates to 1 over C
    R = 1e4
    dom = LogRadialDomain([(0.0, R)])

    def f(U):
        z, jac = dom.to_points(U)
        dens = (1j / (2 * math.pi)) * top_to_volume(1) / (1 + np.abs(z[0]) ** 2) ** 2
        return dens * jac

    res = adaptive_integrate(f, dom, QuadConfig(tol=1e-12, abs_tol=1e-14))
    assert abs(res.value - (1 - 1 / (1 + R**2))) < 1e-10


def test_top_to_volume():
    assert top_to_volume(1) == -2j
    assert top_to_volume(2) == -((-2j) ** 2)


# projective partition of unity -------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False), min_size=2, max_size=2),
       st.integers(0, 2))
def test_pou_sums_to_one_and_matches_expression(pt, chart):
    w = pou_weights(pt, chart, 2)
    assert abs(w.sum() - 1) < 1e-12
    for j in range(3):
        assert abs(pou_weight_expr(j, chart, 2).eval(pt) - w[j]) < 1e-12


def test_pou_example():
    assert np.allclose(pou_weights([1, 1], 0, 2), [1 / 3] * 3)


# pairing with a model current ----------------------------------------------------


class CauchyKernel:
    """``(1 / 2 pi i) delbar chi(|z|^2 / eps) ^ dz / z`` on C, which tends to the point mass at 0."""

    n = 1
    torus_invariant = True

    def __init__(self, chi=CHI):
        self.chi = chi

    def form(self, z, eps):
        _, dc = chi_eval(self.chi, (np.abs(z[0]) ** 2) / eps)
        # delbar chi = chi' z dzbar / eps; dzbar ^ dz = -dz ^ dzbar
        return FormValue(1, {0b11: -dc / eps / (2j * math.pi)})

    def shell_t(self, z, eps):
        return np.abs(z[0]) ** 2 / eps


def _exact_disc_pairing(eps, chi=CHI):
    """``int chi'(s) (1 - eps s)^3 ds``: a polynomial on ``[a, b]`` (for ``eps b < 1``), so Gauss is exact."""
    x, w = np.polynomial.legendre.leggauss(12)
    s = chi.a + (chi.b - chi.a) * (x + 1) / 2
    v = chi_eval(chi, s)[1] * (1 - eps * s) ** 3
    return float(v @ w * (chi.b - chi.a) / 2)


DISC = TestForm(1, [Bump("disc", 1.0)])
SCHED = EpsSchedule(0.1, 0.5, 6)
CFG = QuadConfig(tol=1e-9, abs_tol=1e-12)


def test_radial_pairing_matches_one_dimensional_oracle():
    est = pair(CauchyKernel(), DISC, SCHED, CFG, CHI)
    for eps, v in zip(est.epsilons, est.pairings):
        assert abs(v - _exact_disc_pairing(eps)) < 1e-7
    # the cubic-in-eps sequence only approximately fits one power law; the error bar must cover it
    assert abs(est.limit - 1) <= est.error < 2e-3
    assert est.alpha is not None and abs(est.alpha - 1) < 0.05


def test_constant_test_form_gives_cutoff_jump():
    test = TestForm(1, [Bump("const")], box=3.0)
    est = pair(CauchyKernel(), test, EpsSchedule(0.1, 0.5, 3), CFG, CHI)
    for v in est.pairings:
        assert abs(v - (1.0 - 0.0)) < 1e-8


def test_box_and_log_radial_routes_agree():
    a = pair(CauchyKernel(), DISC, EpsSchedule(0.1, 0.5, 2), CFG, CHI, domain="logradial")
    b = pair(CauchyKernel(), DISC, EpsSchedule(0.1, 0.5, 2), QuadConfig(tol=1e-7, abs_tol=1e-10), CHI, domain="box")
    for x, y in zip(a.pairings, b.pairings):
        assert abs(x - y) < 1e-5


def test_pairing_is_linear_in_the_test_form():
    a = pair(CauchyKernel(), DISC, EpsSchedule(0.1, 0.5, 2), CFG, CHI)
    b = pair(CauchyKernel(), DISC.scaled(2 - 1j), EpsSchedule(0.1, 0.5, 2), CFG, CHI)
    for x, y in zip(a.pairings, b.pairings):
        assert abs((2 - 1j) * x - y) < 1e-9


def test_support_away_from_the_point_gives_zero():
    test = TestForm(1, [Bump("annulus", rho=2.0, width=1.0)])
    est = pair(CauchyKernel(), test, EpsSchedule(0.1, 0.5, 3), CFG, CHI)
    assert abs(est.limit) < 1e-10


def test_non_invariant_test_form_rejected_on_log_radial():
    test = TestForm(1, [Bump("disc", 1.0, center=0.3)])
    with pytest.raises(NotInvariantError):
        pair(CauchyKernel(), test, EpsSchedule(0.1, 0.5, 1), CFG, CHI, domain="logradial")


def test_worker_count_does_not_change_results():
    a = pair(CauchyKernel(), DISC, EpsSchedule(0.1, 0.5, 2), CFG, CHI)
    b = pair(CauchyKernel(), DISC, EpsSchedule(0.1, 0.5, 2), QuadConfig(tol=1e-9, abs_tol=1e-12, workers=2), CHI)
    assert a.pairings == b.pairings and a.quad_errors == b.quad_errors


def test_exact_test_form_derivative():
    # d of b(|z|^2) for the disc bump: coefficient of dzbar is db/dzbar = -3 (1 - |z|^2)^2 z
    z = np.array([[0.3 + 0.4j]])
    dv = DISC.d().evaluate(z)
    assert np.isclose(dv.data[0b10][0], -3 * (1 - 0.25) ** 2 * z[0, 0])
    assert np.isclose(dv.data[0b01][0], -3 * (1 - 0.25) ** 2 * np.conj(z[0, 0]))
    with pytest.raises(ValueError):
        DISC.d().d()


# cycles -----------------------------------------------------------------------------


def test_point_cycle():
    test = TestForm(2, [Bump("disc", 1.0), Bump("disc", 1.0)])
    cyc = CycleSpec((CycleComponent.point([0.5, 0]), CycleComponent.point([0, 0], multiplicity=2)))
    assert abs(pair_cycle(cyc, test) - ((0.75) ** 3 + 2)) < 1e-14


def test_coordinate_plane_cycle():
    # int_C (1 - |w|^2)^3_+ i dw ^ dwbar = 2 int (1 - r^2)^3 dV = pi / 2
    form = FormValue(2, {0b0101: 1j})
    test = TestForm(2, [Bump("disc", 1.0), Bump("disc", 1.0)], form)
    cyc = CycleSpec((CycleComponent.coordinate_plane(2, {1: 0}, multiplicity=3),))
    assert abs(pair_cycle(cyc, test) - 3 * math.pi / 2) < 1e-9
    # the transverse plane sees no dz_1 ^ dzbar_1 component
    cyc2 = CycleSpec((CycleComponent.coordinate_plane(2, {0: 0}),))
    assert abs(pair_cycle(cyc2, test)) < 1e-14


def test_cycle_multiplicities_validated():
    with pytest.raises(ValueError):
        CycleComponent.point([0, 0], multiplicity=0)
    with pytest.raises(ValueError):
        CycleComponent((ChartExpr.coord(1, 0, True),), 1)


# extrapolation ----------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_extrapolation_recovers_power_law_limit(alpha):
    eps = EpsSchedule(0.1, 0.5, 8).epsilons()
    vals = [3 - 2j + 5 * e**alpha for e in eps]
    lim, err, a, method = extrapolate(eps, vals, [1e-14] * 8, 0.5)
    assert method == "aitken"
    assert abs(lim - (3 - 2j)) < 1e-10 and abs(a - alpha) < 1e-8
    assert err < 1e-8


def test_extrapolation_flat_sequence_uses_last_value():
    eps = EpsSchedule(0.1, 0.5, 4).epsilons()
    lim, err, a, method = extrapolate(eps, [1.0, 1.0, 1.0, 1.0], [1e-9] * 4, 0.5)
    assert method == "last-value" and lim == 1 and a is None and err <= 2e-9
