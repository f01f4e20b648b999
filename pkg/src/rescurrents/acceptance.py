"""Acceptance suite: exact tables, pointwise identities and the current experiments.

Each criterion returns a :class:`CriterionResult`; the experiment reports are collected so the
``verify`` command can serialize them.  Shared by the command line and the test-suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

from . import checks
from .charforms import newton_exact_check, roundtrip_exact
from .lab import ExperimentReport
from .scenarios import ScenarioConfig, build_scenario, builtin_config, run_target


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    runtime_s: float
    budget_s: float
    reports: list = field(default_factory=list)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.number}. {self.title}: {self.detail} ({self.runtime_s:.1f} s / {self.budget_s:g} s)"


@dataclass
class SuiteOptions:
    """Overrides applied to every built-in scenario (``section -> {key: value}``)."""

    overrides: dict = field(default_factory=dict)
    chi: str = "default"
    workers: int = 1
    timings: bool = False

    def config(self, name: str, metric: str = "default", chi: str | None = None) -> ScenarioConfig:
        spec = f"{name}:chi={chi or self.chi},metric={metric}"
        cfg = builtin_config(spec)
        for sec, kv in self.overrides.items():
            cfg = cfg.with_overrides(sec, **kv)
        return cfg.with_overrides("quadrature", workers=self.workers)


EXPERIMENTS = {
    4: ("divisor-pl", ("poincare-lelong",)),
    5: ("koszul-xy", ("c1", "c2", "ch2", "c2-routes", "fundamental-cycle")),
    6: ("p2-example", ("c1", "c1-routes", "c2-point", "c1-squared", "c2-global")),
}
# targets of degree at most the codimension, re-run with the other cutoff profile and metric
ROBUST = {
    "divisor-pl": ("poincare-lelong",),
    "koszul-xy": ("c1", "c2", "ch2"),
    "p2-example": ("c1",),
}
SCENARIOS = ("divisor-pl", "koszul-xy", "p2-example")


class Suite:
    """Runs the criteria and keeps the experiment reports (re-used by the robustness check)."""

    def __init__(self, options: SuiteOptions | None = None):
        self.options = options or SuiteOptions()
        self._reports: dict = {}

    # experiments -----------------------------------------------------------

    def reports(self, scenario: str, targets, metric: str = "default", chi: str | None = None) -> list:
        cfg = self.options.config(scenario, metric, chi)
        sc = build_scenario(cfg)
        out = []
        for t in targets:
            key = (scenario, t, metric, chi or self.options.chi)
            if key not in self._reports:
                self._reports[key] = run_target(sc, t, timings=self.options.timings)
            out.append(self._reports[key])
        return out

    def all_reports(self) -> list:
        return list(self._reports.values())

    # criteria --------------------------------------------------------------

    def criterion_1(self) -> CriterionResult:
        t0 = time.perf_counter()
        newton = newton_exact_check(8, 8)
        rt = roundtrip_exact(8)
        dt = time.perf_counter() - t0
        ok = newton and rt and dt < 1.0
        return CriterionResult(1, "Newton tables and c/ch round trip (exact, L=8)", ok,
                               f"power sums {'exact' if newton else 'MISMATCH'}, "
                               f"round trip {'exact' if rt else 'MISMATCH'}", dt, 1.0)

    def criterion_2(self) -> CriterionResult:
        t0 = time.perf_counter()
        worst, where = 0.0, ""
        for name in SCENARIOS:
            sc = build_scenario(self.options.config(name))
            res = {"supertrace": checks.supertrace_sign_residual()}
            res.update(checks.leibniz_residuals(sc.spec, sc.conns[sc.chart]))
            res["curvature"] = checks.curvature_identity_residual(sc.spec, sc.conns[sc.chart])
            res.update(checks.complex_identity_residuals(sc.spec, sc.conns[sc.chart]))
            for k, v in res.items():
                if not v <= worst:
                    worst, where = v, f"{name}/{k}"
        dt = time.perf_counter() - t0
        ok = worst <= 1e-10 and dt < 5.0
        return CriterionResult(2, "super-structure identities at 20 points", ok,
                               f"max residual {worst:.2e} ({where})", dt, 5.0)

    def criterion_3(self) -> CriterionResult:
        t0 = time.perf_counter()
        sc = build_scenario(self.options.config("p2-example"))
        res = checks.whitney_residuals(sc.spec, sc.conns[sc.chart])
        dt = time.perf_counter() - t0
        bounds = {"compatible": 1e-9, "c1_compatible": 1e-9, "c2_compatible": 1e-9, "regularized": 1e-10}
        ok = all(res[k] <= b for k, b in bounds.items()) and dt < 10.0
        detail = ", ".join(f"{k} {res[k]:.1e}" for k in bounds)
        return CriterionResult(3, "compatibility and Whitney vanishing", ok, detail, dt, 10.0)

    def _experiment(self, number: int, title: str, budget: float) -> CriterionResult:
        scenario, targets = EXPERIMENTS[number]
        t0 = time.perf_counter()
        reps = self.reports(scenario, targets)
        dt = time.perf_counter() - t0
        ok = all(r.passed for r in reps) and dt <= budget
        return CriterionResult(number, title, ok, "; ".join(describe(r) for r in reps), dt, budget, reps)

    def criterion_4(self) -> CriterionResult:
        return self._experiment(4, "Poincare-Lelong for s = y", 60.0)

    def criterion_5(self) -> CriterionResult:
        return self._experiment(5, "Koszul complex of (x, y)", 300.0)

    def criterion_6(self) -> CriterionResult:
        return self._experiment(6, "projective example (k, l, m) = (3, 1, 1)", 1200.0)

    def criterion_7(self) -> CriterionResult:
        t0 = time.perf_counter()
        other = "alt" if self.options.chi == "default" else "default"
        lines, reps, ok = [], [], True
        for scenario, targets in ROBUST.items():
            base = self.reports(scenario, targets)
            for label, kw in (("chi", {"chi": other}), ("metric", {"metric": "perturbed"})):
                var = self.reports(scenario, targets, **kw)
                reps += var
                for b, v in zip(base, var):
                    good, dev, err = agree(b, v)
                    ok &= good
                    lines.append(f"{scenario}/{b.target}[{label}] dev {dev:.1e} <= {err:.1e}: {good}")
        dt = time.perf_counter() - t0
        ok = ok and dt <= 1800.0
        return CriterionResult(7, "cutoff and metric independence", ok, "; ".join(lines), dt, 1800.0, reps)

    def criterion_8(self) -> CriterionResult:
        """Re-runs every experiment with another worker count and compares the serialized reports."""
        from .cli import reports_json

        t0 = time.perf_counter()
        self._run_all_experiments()
        opts = SuiteOptions(self.options.overrides, self.options.chi, 2 if self.options.workers == 1 else 1, False)
        twin = Suite(opts)
        first, second = [], []
        for (scenario, target, metric, chi), r in self._reports.items():
            first.append(r)
            second += twin.reports(scenario, (target,), metric, chi)
        a = reports_json(_strip_times(first))
        b = reports_json(second)
        dt = time.perf_counter() - t0
        ok = a == b
        return CriterionResult(8, "determinism across worker counts", ok,
                               f"{len(first)} reports, workers {self.options.workers} vs {opts.workers}: "
                               f"{'identical' if ok else 'DIFFERENT'}", dt, math.inf)

    def _run_all_experiments(self) -> None:
        """Fills the cache with every experiment of criteria 4-7 (no-op for those already run)."""
        other = "alt" if self.options.chi == "default" else "default"
        for scenario, targets in EXPERIMENTS.values():
            self.reports(scenario, targets)
        for scenario, targets in ROBUST.items():
            self.reports(scenario, targets, chi=other)
            self.reports(scenario, targets, metric="perturbed")

    def run(self, numbers=range(1, 9), echo: Callable | None = None) -> list:
        out = []
        for k in numbers:
            res = getattr(self, f"criterion_{k}")()
            if echo:
                echo(res.line())
            out.append(res)
        return out


def _strip_times(reps: list) -> list:
    out = []
    for r in reps:
        c = ExperimentReport(r.scenario, r.target, r.measured, r.reference, r.tolerance, r.passed, None, r.notes)
        out.append(c)
    return out


def agree(a: ExperimentReport, b: ExperimentReport):
    """Two estimates agree when they differ by at most the sum of their error bars, and that
    sum is within the target's tolerance."""
    ea, eb = a.measured.error, b.measured.error
    dev = abs(a.measured.limit - b.measured.limit)
    err = ea + eb
    tol = a.tolerance if a.tolerance else math.inf
    good = bool(dev <= err and err <= tol and not (a.measured.overrun or b.measured.overrun))
    return good, dev, err


def describe(r: ExperimentReport) -> str:
    m = r.measured
    if "error" in r.notes:
        return f"{r.target} ERROR {r.notes['error']}"
    ref = "-" if r.reference is None else _c(r.reference.value)
    flag = {True: "ok", False: "FAIL", None: "n/a"}[r.passed]
    return f"{r.target} {_c(m.limit)} +- {m.error:.1e} vs {ref} [{flag}]"


def _c(z: complex) -> str:
    z = complex(z)
    if abs(z.imag) <= 1e-9 * max(1.0, abs(z.real)):
        return f"{z.real:.6g}"
    if abs(z.real) <= 1e-9 * max(1.0, abs(z.imag)):
        return f"{z.imag:.6g}i"
    return f"{z.real:.6g}{z.imag:+.6g}i"
