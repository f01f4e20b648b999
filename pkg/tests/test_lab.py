import math

import numpy as np
import pytest

from conftest import affine_spec
from rescurrents.charts import ChartExpr
from rescurrents.engine import CHI_PROFILES, Bump, CurrentEstimate, EpsSchedule, QuadConfig, TestForm, pair
from rescurrents.lab import (
    PoincareLelongIntegrand,
    Reference,
    RegularizedChernIntegrand,
    ResidueChainIntegrand,
    cauchy_line_value,
    cauchy_point_value,
    make_report,
    residue_action,
)
from rescurrents.superforms import FormValue

CHI = CHI_PROFILES["default"]
SCHED = EpsSchedule(0.1, 0.5, 6)
CFG = QuadConfig(tol=1e-8, abs_tol=1e-11)


def _est(limit, error, overrun=False):
    return CurrentEstimate([0.1], [limit], [0.0], limit, error, None, overrun=overrun)


# reports -------------------------------------------------------------------------


def test_report_pass_rule():
    ref = Reference(1.0, "published")
    assert make_report("s", "t", _est(1.01, 0.001), ref, 0.02).passed is True
    # deviation beyond tolerance plus error bar
    assert make_report("s", "t", _est(1.05, 0.001), ref, 0.02).passed is False
    # deviation covered only by an error bar that is itself larger than the tolerance
    assert make_report("s", "t", _est(1.05, 0.1), ref, 0.02).passed is False
    assert make_report("s", "t", _est(1.0, 0.0, overrun=True), ref, 0.02).passed is False
    # the reference's own error counts towards the bar
    assert make_report("s", "t", _est(1.025, 0.001), Reference(1.0, "oracle", 0.005), 0.02).passed is True


def test_exploratory_and_missing_references_never_decide():
    assert make_report("s", "t", _est(5.0, 0.0), Reference(1.0, "exploratory"), 0.02).passed is None
    assert make_report("s", "t", _est(5.0, 0.0), None, 0.02).passed is None
    r = make_report("s", "t", _est(1.5, 0.0), Reference(1.0, "oracle"), 0.02)
    assert r.deviation == pytest.approx(0.5)


def test_unknown_provenance_rejected():
    with pytest.raises(ValueError):
        Reference(1.0, "guess")


# one-variable model currents ---------------------------------------------------------


DISC = TestForm(1, [Bump("disc", 1.0)])


def test_poincare_lelong_sign():
    # (1/2 pi i) dbar chi(|z|^2/eps) ^ dz/z tends to +delta_0 on functions
    z = ChartExpr.coord(1, 0)
    integ = PoincareLelongIntegrand(1, z, [z], CHI, torus_invariant=True)
    est = pair(integ, DISC, SCHED, CFG, CHI)
    assert abs(est.limit - 1) <= est.error < 2e-3
    assert est.limit.real > 0


def test_residue_of_a_coordinate_function():
    # R^0_1 for phi = z on C acts on psi dz as 2 pi i psi(0)
    spec = affine_spec((1, 1), ["z"], "z", n=1)
    test = TestForm(1, [Bump("disc", 1.0)], FormValue(1, {0b01: 1}))
    est = residue_action(spec, 1, 0, test, schedule=SCHED, config=CFG, torus_invariant=True)
    assert abs(est.limit - 2j * math.pi) <= est.error < 1e-2


def test_koszul_residue_with_positive_source_level_vanishes(koszul):
    # the Koszul complex of (x, y) is exact off the origin: R^1 = 0
    spec, conn = koszul
    # R^1_2 has bidegree (0, 1); conj(y) dx ^ dy ^ dxbar keeps the density torus invariant
    form = FormValue(2, {0b0111: ChartExpr.coord(2, 1, True)})
    test = TestForm(2, [Bump("disc", 1.0), Bump("disc", 1.0)], form)
    integ = ResidueChainIntegrand(spec, conn, CHI, 2, 1, np.ones((2, 1)), torus_invariant=True)
    est = pair(integ, test, EpsSchedule(0.1, 0.5, 5), QuadConfig(tol=1e-6, abs_tol=1e-9), CHI)
    assert abs(est.limit) <= max(est.error, 1e-6)
    assert abs(est.pairings[-1]) < abs(est.pairings[0])


def test_integrand_argument_validation(koszul):
    spec, conn = koszul
    with pytest.raises(ValueError):
        ResidueChainIntegrand(spec, conn, CHI, 1, 1)
    with pytest.raises(ValueError):
        ResidueChainIntegrand(spec, conn, CHI, 2, 0, np.ones((2, 2)))
    with pytest.raises(ValueError):
        RegularizedChernIntegrand(spec, conn, CHI, [0])
    with pytest.raises(ValueError):
        RegularizedChernIntegrand(spec, conn, CHI, [1], kind="td")


# Cauchy-Pompeiu oracles ----------------------------------------------------------------


@pytest.mark.parametrize("radius", [0.5, 1.0, 2.0])
def test_cauchy_line_value_recovers_the_center_value(radius):
    test = TestForm(1, [Bump("disc", radius)])
    v, e = cauchy_line_value(test, 0)
    assert abs(v - 1) < 1e-9 and e < 1e-9


def test_cauchy_point_value_of_a_product():
    test = TestForm(2, [Bump("disc", 1.0), Bump("annulus", rho=1.0, width=1.0)])
    v, e = cauchy_point_value(test)
    assert abs(v - test.bumps[0].at_zero() * test.bumps[1].at_zero()) < 1e-9
