"""Residue-current experiments: regularized Chern forms, residue routes and reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .charforms import chern_character, total_chern
from .charts import ChartExpr
from .engine import (
    CHI_PROFILES,
    ChiProfile,
    CurrentEstimate,
    CycleSpec,
    EpsSchedule,
    LogRadialDomain,
    QuadConfig,
    TestForm,
    adaptive_integrate,
    chi_eval,
    pair,
    pair_cycle_result,
)
from .hermitian import ComplexSpec, ConnectionData, FrameBatch, chern_connections, regularized_curvature
from .superforms import EndoFormValue, FormMatrix, FormValue, super_compose, supertrace

__all__ = [
    "PROVENANCE",
    "Reference",
    "ExperimentReport",
    "RegularizedChernIntegrand",
    "ResidueRouteIntegrand",
    "ResidueChainIntegrand",
    "PoincareLelongIntegrand",
    "residue_action",
    "fundamental_cycle_residue",
    "residue_route_chern",
    "chern_current_experiment",
    "character_current_experiment",
    "make_report",
    "cauchy_point_value",
    "cauchy_line_value",
]

PROVENANCE = ("published", "oracle", "exploratory")


@dataclass(frozen=True)
class Reference:
    value: complex
    provenance: str
    error: float = 0.0

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass
class ExperimentReport:
    scenario: str
    target: str
    measured: CurrentEstimate
    reference: Reference | None
    tolerance: float
    passed: bool | None
    runtime_ms: float | None = None
    notes: dict = field(default_factory=dict)

    @property
    def deviation(self) -> float | None:
        if self.reference is None:
            return None
        return abs(self.measured.limit - self.reference.value)


def make_report(scenario: str, target: str, measured: CurrentEstimate, reference: Reference | None,
                tolerance: float, **notes) -> ExperimentReport:
    """``pass`` iff ``|limit - ref| <= tol + error`` and the error bar itself is within ``tol``.

    Exploratory references never pass or fail.
    """
    if reference is None or reference.provenance == "exploratory":
        return ExperimentReport(scenario, target, measured, reference, tolerance, None, notes=notes)
    err = measured.error + reference.error
    dev = abs(measured.limit - reference.value)
    ok = bool(dev <= tolerance + err and err <= tolerance and not measured.overrun)
    return ExperimentReport(scenario, target, measured, reference, tolerance, ok, notes=notes)


# ---------------------------------------------------------------------------
# cutoff data
# ---------------------------------------------------------------------------


def _cutoff(spec: ComplexSpec, z: np.ndarray, eps: float, chi: ChiProfile):
    """``t = |F|^2/eps``, ``chi(t)``, ``chi'(t)`` and ``d chi_eps`` as a form batch."""
    t = spec.norm2_F.evaluate(z).real / eps
    val, der = chi_eval(chi, np.maximum(t, 0.0))
    n = spec.n
    data = {}
    if np.any(der):
        for i, (d, db) in enumerate(spec.dnorm2_F):
            data[1 << i] = der / eps * d.evaluate(z)
            data[1 << (n + i)] = der / eps * db.evaluate(z)
    return t, val, der, FormValue(n, data)


def _scatter(fv: FormValue, idx: np.ndarray, npts: int) -> FormValue:
    out = {}
    for m, v in fv.data.items():
        a = np.zeros(npts, dtype=complex)
        a[idx] = v
        out[m] = a
    return FormValue(fv.n, out)


def _wedge_all(forms: Sequence[FormValue]) -> FormValue:
    acc = forms[0]
    for f in forms[1:]:
        acc = acc.wedge(f)
    return acc


class _Base:
    torus_invariant = False

    def __init__(self, spec: ComplexSpec, conn: ConnectionData | None, chi: ChiProfile):
        self.spec = spec
        self.conn = conn if conn is not None else chern_connections(spec)
        self.chi = chi
        self.n = spec.n

    def shell_t(self, z, eps):
        return self.spec.norm2_F.evaluate(z).real / eps


class RegularizedChernIntegrand(_Base):
    """``c_{l1}(E, D_hat) ^ ... ^ c_{lm}(E, D_hat)`` (``kind='c'``) or the ch analogue."""

    def __init__(self, spec, conn, chi, degrees: Sequence[int], kind: str = "c", torus_invariant: bool = False):
        super().__init__(spec, conn, chi)
        if not degrees or min(degrees) < 1:
            raise ValueError("degrees must be >= 1")
        if kind not in ("c", "ch"):
            raise ValueError("kind is 'c' or 'ch'")
        self.degrees = tuple(degrees)
        self.kind = kind
        self.torus_invariant = torus_invariant

    def form(self, z, eps) -> FormValue:
        fb = FrameBatch(self.spec, self.conn, z)
        t, val, _, dchi = _cutoff(self.spec, fb.z, eps, self.chi)
        active = t > self.chi.a
        Th = regularized_curvature(fb, val, dchi, active)
        if self.kind == "c":
            series = total_chern(Th, self.spec.ranks)
            parts = [series[l] for l in self.degrees]
        else:
            signed = [B if k % 2 == 0 else -B for k, B in enumerate(Th)]
            parts = [chern_character(signed, l) for l in self.degrees]
        return _wedge_all(parts)


def _chain(fb: FrameBatch, dchi: FormValue, start: int, stop: int, active) -> EndoFormValue:
    """``dbar chi ^ sigma_stop dbar sigma_{stop-1} ... dbar sigma_{start+1}`` (E_start -> E_stop)."""
    n, lv = fb.n, fb.levels
    dbchi = dchi.project(0, 1)
    head = fb.sigma(stop, active).wedge_scalar(dbchi)
    acc = EndoFormValue.single(n, lv, stop, stop - 1, head)
    for j in range(stop - 1, start, -1):
        blk = EndoFormValue.single(n, lv, j, j - 1, fb.dsigma(j, active, "anti"))
        acc = super_compose(acc, blk)
    return acc


def _dphi_product(fb: FrameBatch, start: int, stop: int) -> EndoFormValue:
    """``D phi_{start+1} ... D phi_stop`` (E_stop -> E_start)."""
    n, lv = fb.n, fb.levels
    acc = EndoFormValue.single(n, lv, start, start + 1, fb.M[start + 1])
    for j in range(start + 2, stop + 1):
        acc = super_compose(acc, EndoFormValue.single(n, lv, j - 1, j, fb.M[j]))
    return acc


class ResidueRouteIntegrand(_Base):
    """``c * sum_k (-1)^k tr(D phi_{k+1} ... D phi_{k+p} dbar chi sigma_{k+p} dbar sigma ... )``.

    ``levels`` restricts the sum over ``k`` (default: all).
    """

    def __init__(self, spec, conn, chi, p: int, constant: complex, levels: Sequence[int] | None = None,
                 torus_invariant: bool = False):
        super().__init__(spec, conn, chi)
        self.p = p
        self.constant = constant
        N = spec.N
        self.levels = tuple(range(0, N - p + 1)) if levels is None else tuple(levels)
        self.torus_invariant = torus_invariant

    def form(self, z, eps) -> FormValue:
        z = np.asarray(z, dtype=complex)
        npts = z.shape[1]
        t = self.spec.norm2_F.evaluate(z).real / eps
        idx = np.nonzero((t > self.chi.a) & (t < self.chi.b))[0]
        if idx.size == 0:
            return FormValue(self.n)
        fb = FrameBatch(self.spec, self.conn, z[:, idx])
        _, _, _, dchi = _cutoff(self.spec, fb.z, eps, self.chi)
        acc = FormValue(self.n)
        for k in self.levels:
            term = super_compose(_dphi_product(fb, k, k + self.p), _chain(fb, dchi, k, k + self.p, None))
            tr = supertrace(term)
            acc = acc + tr if k % 2 == 0 else acc - tr
        return _scatter(acc.scale(self.constant), idx, npts)


class ResidueChainIntegrand(_Base):
    """``tr(C . dbar chi ^ sigma_k dbar sigma_{k-1} ... dbar sigma_{l+1})`` for a contraction ``C``."""

    def __init__(self, spec, conn, chi, k: int, l: int, contraction=None, torus_invariant: bool = False):
        super().__init__(spec, conn, chi)
        if not k > l >= 0:
            raise ValueError("need k > l >= 0")
        self.k, self.l = k, l
        C = np.eye(spec.ranks[l], spec.ranks[k]) if contraction is None else np.asarray(contraction, dtype=complex)
        if C.shape != (spec.ranks[l], spec.ranks[k]):
            raise ValueError("contraction must map E_k -> E_l")
        self.C = C
        self.torus_invariant = torus_invariant

    def form(self, z, eps) -> FormValue:
        z = np.asarray(z, dtype=complex)
        npts = z.shape[1]
        t = self.spec.norm2_F.evaluate(z).real / eps
        idx = np.nonzero((t > self.chi.a) & (t < self.chi.b))[0]
        if idx.size == 0:
            return FormValue(self.n)
        fb = FrameBatch(self.spec, self.conn, z[:, idx])
        _, _, _, dchi = _cutoff(self.spec, fb.z, eps, self.chi)
        R = _chain(fb, dchi, self.l, self.k, None).block(self.k, self.l)
        Cm = FormMatrix(self.n, *self.C.shape, {0: np.broadcast_to(self.C[:, :, None], self.C.shape + (idx.size,)).copy()})
        return _scatter(Cm.matmul(R).trace(), idx, npts)


class PoincareLelongIntegrand:
    """``(1/2 pi i) dbar chi(|F|^2/eps) ^ D_L s / s`` for a section ``s`` of a line bundle.

    ``theta`` is the connection 1-form of the line bundle as a list of ChartExpr
    coefficients of ``dz_i`` (default: trivial).
    """

    def __init__(self, n: int, s: ChartExpr, F: Sequence[ChartExpr], chi: ChiProfile, theta=None,
                 F_weight: ChartExpr | None = None, constant: complex = 1 / (2j * math.pi),
                 torus_invariant: bool = False):
        self.n = n
        self.s = s
        self.chi = chi
        nrm = ChartExpr.const(n, 0)
        for f in F:
            nrm = nrm + f * f.conj()
        self.norm2 = nrm * F_weight if F_weight is not None else nrm
        self.dnorm = [(self.norm2.partial("hol", i), self.norm2.partial("anti", i)) for i in range(n)]
        self.log_ds = [s.partial("hol", i) / s + (theta[i] if theta is not None else ChartExpr.const(n, 0))
                       for i in range(n)]
        self.constant = constant
        self.torus_invariant = torus_invariant

    def shell_t(self, z, eps):
        return self.norm2.evaluate(z).real / eps

    def form(self, z, eps) -> FormValue:
        z = np.asarray(z, dtype=complex)
        npts = z.shape[1]
        t = self.norm2.evaluate(z).real / eps
        idx = np.nonzero((t > self.chi.a) & (t < self.chi.b))[0]
        if idx.size == 0:
            return FormValue(self.n)
        zs = z[:, idx]
        _, der = chi_eval(self.chi, t[idx])
        dbchi = FormValue(self.n, {1 << (self.n + i): der / eps * db.evaluate(zs) for i, (_, db) in enumerate(self.dnorm)})
        ls = FormValue(self.n, {1 << i: e.evaluate(zs) for i, e in enumerate(self.log_ds)})
        return _scatter(dbchi.wedge(ls).scale(self.constant), idx, npts)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _defaults(schedule, config, chi):
    return (schedule or EpsSchedule(), config or QuadConfig(), chi or CHI_PROFILES["default"])


def residue_action(spec: ComplexSpec, k: int, l: int, test: TestForm, conn: ConnectionData | None = None,
                   contraction=None, schedule: EpsSchedule | None = None, config: QuadConfig | None = None,
                   chi: ChiProfile | None = None, torus_invariant: bool = False) -> CurrentEstimate:
    """Action of ``R_k^l`` (contracted with ``contraction``) on ``test``."""
    schedule, config, chi = _defaults(schedule, config, chi)
    integ = ResidueChainIntegrand(spec, conn, chi, k, l, contraction, torus_invariant)
    return pair(integ, test, schedule, config, chi)


def fundamental_cycle_residue(spec: ComplexSpec, p: int, test: TestForm, conn: ConnectionData | None = None,
                              schedule: EpsSchedule | None = None, config: QuadConfig | None = None,
                              chi: ChiProfile | None = None, torus_invariant: bool = False) -> CurrentEstimate:
    """``1/((2 pi i)^p p!) sum_k (-1)^k tr(D phi_{k+1} ... D phi_{k+p} R^k_{k+p})`` on ``test``."""
    schedule, config, chi = _defaults(schedule, config, chi)
    c = 1 / ((2j * math.pi) ** p * math.factorial(p))
    integ = ResidueRouteIntegrand(spec, conn, chi, p, c, torus_invariant=torus_invariant)
    return pair(integ, test, schedule, config, chi)


def residue_route_chern(spec: ComplexSpec, p: int, test: TestForm, conn: ConnectionData | None = None,
                        schedule: EpsSchedule | None = None, config: QuadConfig | None = None,
                        chi: ChiProfile | None = None, torus_invariant: bool = False, kind: str = "c") -> CurrentEstimate:
    """``c_p`` (or ``ch_p``) in codimension ``p`` via the residue currents ``R^k_{k+p}``."""
    schedule, config, chi = _defaults(schedule, config, chi)
    if kind == "c":
        c = (-1) ** (p - 1) / ((2j * math.pi) ** p * p)
    else:
        c = 1 / ((2j * math.pi) ** p * math.factorial(p))
    integ = ResidueRouteIntegrand(spec, conn, chi, p, c, torus_invariant=torus_invariant)
    return pair(integ, test, schedule, config, chi)


def _current_experiment(kind, spec, degrees, test, conn, reference, tolerance, schedule, config, chi,
                        torus_invariant, scenario, target):
    schedule, config, chi = _defaults(schedule, config, chi)
    integ = RegularizedChernIntegrand(spec, conn, chi, degrees, kind, torus_invariant)
    est = pair(integ, test, schedule, config, chi)
    return make_report(scenario or spec.name, target or f"{kind}{list(degrees)}", est, reference, tolerance)


def chern_current_experiment(spec: ComplexSpec, degrees: Sequence[int], test: TestForm,
                             conn: ConnectionData | None = None, reference: Reference | None = None,
                             tolerance: float = 0.0, schedule=None, config=None, chi=None,
                             torus_invariant: bool = False, scenario: str = "", target: str = "") -> ExperimentReport:
    return _current_experiment("c", spec, degrees, test, conn, reference, tolerance, schedule, config, chi,
                               torus_invariant, scenario, target)


def character_current_experiment(spec: ComplexSpec, degrees: Sequence[int], test: TestForm,
                                 conn: ConnectionData | None = None, reference: Reference | None = None,
                                 tolerance: float = 0.0, schedule=None, config=None, chi=None,
                                 torus_invariant: bool = False, scenario: str = "", target: str = "") -> ExperimentReport:
    return _current_experiment("ch", spec, degrees, test, conn, reference, tolerance, schedule, config, chi,
                               torus_invariant, scenario, target)


# ---------------------------------------------------------------------------
# Cauchy-Pompeiu oracles
# ---------------------------------------------------------------------------


def cauchy_line_value(test: TestForm, j: int, config: QuadConfig = QuadConfig(tol=1e-11, abs_tol=1e-14)):
    """``psi(z)|_{z_j=0} = -(1/pi) int dbar_j psi / z_j dA(z_j)`` as a function, for radial bumps.

    Returns ``g(w)`` evaluating the right hand side at points whose ``j``-th entry is ignored.
    """
    b = test.bumps[j]
    lo, hi = b.support_radii(test.box)
    dom = LogRadialDomain([(lo, hi)], config.rmin)

    def f(U):
        w, jac = dom.to_points(U)
        _, _, db = b.values(w[0])
        return -(1 / math.pi) * db / w[0] * jac

    res = adaptive_integrate(f, dom, config)
    return res.value, res.error


def cauchy_point_value(test: TestForm, config: QuadConfig = QuadConfig(tol=1e-11, abs_tol=1e-14)):
    """``psi(0)`` of the bump factor via the iterated transform
    ``(1/pi^n) int dbar_1 ... dbar_n psi / (z_1 ... z_n)`` (up to sign ``(-1)^n``)."""
    val, err = 1.0 + 0j, 0.0
    for j in range(test.n):
        v, e = cauchy_line_value(test, j, config)
        err = abs(val) * e + abs(v) * err
        val *= v
    return val, err
