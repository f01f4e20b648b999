"""Scenario configuration, complex builders and target execution.

A scenario is INI text with sections ``[scenario]``, ``[complex]``, ``[cutoff]``, ``[schedule]``,
``[quadrature]`` and one ``[target NAME]`` section per experiment.  Matrices are written row by
row with ``;`` between rows and ``,`` between entries.
"""

from __future__ import annotations

import configparser
import io
import math
import re
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property

import numpy as np

from .charts import ChartExpr, ExprMatrix, ParseError, parse_expr
from .gaussrat import QI
from .engine import (
    CHI_PROFILES,
    Bump,
    CurrentEstimate,
    CycleComponent,
    CycleSpec,
    EpsSchedule,
    QuadConfig,
    TestForm,
    pair,
    pair_cycle_result,
    pou_weight_expr,
)
from .hermitian import ComplexSpec, chern_connections
from .lab import (
    ExperimentReport,
    PoincareLelongIntegrand,
    Reference,
    RegularizedChernIntegrand,
    ResidueChainIntegrand,
    ResidueRouteIntegrand,
    cauchy_point_value,
    make_report,
)
from .superforms import FormValue, mask_of

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "parse_config",
    "format_config",
    "load_config",
    "homogeneous_names",
    "chart_names",
    "dehomogenize",
    "projective_complex",
    "fubini_study_form",
    "exp_truncated",
    "parse_number",
    "parse_test",
    "parse_form",
    "evaluate_reference",
    "Scenario",
    "build_scenario",
    "run_target",
    "builtin_config",
    "BUILTIN",
]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config text
# ---------------------------------------------------------------------------

SECTION_ORDER = ("scenario", "complex", "connection", "cutoff", "schedule", "quadrature")


@dataclass
class ScenarioConfig:
    sections: dict  # name -> {key: value}
    targets: dict  # name -> {key: value}

    @property
    def name(self) -> str:
        return self.sections.get("scenario", {}).get("name", "unnamed")

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def with_overrides(self, section: str, **kv) -> "ScenarioConfig":
        secs = {k: dict(v) for k, v in self.sections.items()}
        secs.setdefault(section, {}).update({k: str(v) for k, v in kv.items()})
        return ScenarioConfig(secs, {k: dict(v) for k, v in self.targets.items()})


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    sections, targets = {}, {}
    for s in cp.sections():
        items = {k: " ".join(v.split()) for k, v in cp.items(s)}
        if s.startswith("target "):
            targets[s[7:].strip()] = items
        elif s in SECTION_ORDER:
            sections[s] = items
        else:
            raise ConfigError(f"unknown section [{s}]")
    if "scenario" not in sections or "complex" not in sections:
        raise ConfigError("[scenario] and [complex] sections are required")
    return ScenarioConfig(sections, targets)


def format_config(cfg: ScenarioConfig) -> str:
    out = io.StringIO()
    for s in SECTION_ORDER:
        if s in cfg.sections:
            out.write(f"[{s}]\n")
            for k, v in cfg.sections[s].items():
                out.write(f"{k} = {v}\n")
            out.write("\n")
    for t, items in cfg.targets.items():
        out.write(f"[target {t}]\n")
        for k, v in items.items():
            out.write(f"{k} = {v}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path_or_name: str) -> ScenarioConfig:
    """A config file, or a built-in scenario as ``name:k=3,l=1`` or ``name k=3 l=1``."""
    words = path_or_name.split()
    if words and words[0] in BUILTIN and ":" not in path_or_name:
        path_or_name = words[0] + ":" + ",".join(words[1:])
    if path_or_name.split(":")[0] in BUILTIN:
        return builtin_config(path_or_name)
    with open(path_or_name) as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# projective geometry
# ---------------------------------------------------------------------------


def homogeneous_names(N: int) -> tuple:
    if N == 1:
        return ("t", "x")
    if N == 2:
        return ("t", "x", "y")
    return tuple(f"z{i}" for i in range(N + 1))


def chart_names(N: int, chart: int) -> tuple:
    h = homogeneous_names(N)
    return tuple(h[j] for j in range(N + 1) if j != chart)


def dehomogenize(e: ChartExpr, chart: int) -> ChartExpr:
    """Set the ``chart``-th homogeneous coordinate to 1."""
    N = e.n - 1
    hol, anti = [], []
    a = 0
    for j in range(N + 1):
        if j == chart:
            hol.append(ChartExpr.const(N, 1))
            anti.append(ChartExpr.const(N, 1))
        else:
            hol.append(ChartExpr.coord(N, a))
            anti.append(ChartExpr.coord(N, a, True))
            a += 1
    return e.subs(hol + anti)


def _rho(N: int) -> ChartExpr:
    r = ChartExpr.const(N, 1)
    for a in range(N):
        r = r + ChartExpr.coord(N, a) * ChartExpr.coord(N, a, True)
    return r


def fubini_study_form(N: int) -> list:
    """``omega = (i/2 pi) ddbar log(1 + |u|^2)`` (unit volume on lines) as ``[(1/2 pi, i ddbar log rho)]``."""
    rho = _rho(N)
    data = {}
    for i in range(N):
        for j in range(N):
            num = (rho if i == j else ChartExpr.const(N, 0)) - ChartExpr.coord(N, i, True) * ChartExpr.coord(N, j)
            if num.is_zero():
                continue
            coef = num / (rho * rho) * ChartExpr.const(N, QI(0, 1))
            m, s = mask_of([i + 1], [j + 1], N)
            data[m] = coef if s == 1 else -coef
    return [(1 / (2 * math.pi), FormValue(N, data))]


def _homog_degree(e: ChartExpr) -> int | None:
    if e.is_zero():
        return None
    degs = {sum(ex) for ex in e.num.terms}
    if len(degs) != 1 or e.den:
        raise ConfigError(f"{e} is not a homogeneous polynomial")
    return degs.pop()


def projective_complex(N: int, chart: int, ranks, twists, phi_text, F_text, F_degree: int,
                       conformal: tuple | None = None, name: str = "") -> ComplexSpec:
    """Complex of sums of line bundles O(d) with homogeneous morphisms, in affine chart ``chart``.

    ``twists[k]`` lists the degrees of the summands of ``E_k``; the metric on ``O(d)`` is
    ``(1 + |u|^2)^{-d}``.  ``conformal = (level, expr)`` multiplies one level's metric.
    """
    hn = homogeneous_names(N)
    cn = chart_names(N, chart)
    rho = _rho(N)
    phis = [None]
    for k in range(1, len(ranks)):
        rows = _matrix_text(phi_text[k], N + 1, hn)
        if len(rows) != ranks[k - 1] or any(len(r) != ranks[k] for r in rows):
            raise ConfigError(f"phi{k} has the wrong shape")
        for i, row in enumerate(rows):
            for j, e in enumerate(row):
                d = _homog_degree(e)
                if d is not None and d != twists[k - 1][i] - twists[k][j]:
                    raise ConfigError(f"phi{k}[{i},{j}] has degree {d}, expected {twists[k - 1][i] - twists[k][j]}")
        phis.append(ExprMatrix([[dehomogenize(e, chart) for e in row] for row in rows], n=N, cols=ranks[k]))
    hs = []
    for k, r in enumerate(ranks):
        ent = [[(rho ** (-twists[k][i]) if i == j else ChartExpr.const(N, 0)) for j in range(r)] for i in range(r)]
        if conformal is not None and conformal[0] == k:
            f = parse_expr(conformal[1], N, cn)
            ent = [[e * f for e in row] for row in ent]
        hs.append(ExprMatrix(ent, n=N, cols=r))
    F = []
    for s in F_text:
        e = parse_expr(s, N + 1, hn)
        d = _homog_degree(e)
        if d != F_degree:
            raise ConfigError(f"F entry {s} has degree {d}, expected {F_degree}")
        F.append(dehomogenize(e, chart))
    return ComplexSpec(N, tuple(ranks), tuple(phis), tuple(hs), tuple(F), rho ** (-F_degree), name, N, chart)


def _matrix_text(text: str, n: int, names) -> list:
    rows = []
    for r in text.split(";"):
        r = r.strip()
        if not r:
            continue
        rows.append([parse_expr(e.strip(), n, names) for e in r.split(",")])
    return rows


def exp_truncated(u: str, order: int = 6) -> str:
    """``sum_{j <= order} u^j / j!`` as expression text (a positive polynomial for ``u >= 0``)."""
    terms = ["1"]
    for j in range(1, order + 1):
        terms.append(f"({u})^{j}/{math.factorial(j)}")
    return " + ".join(terms)


# ---------------------------------------------------------------------------
# scenario objects
# ---------------------------------------------------------------------------


def _ints(text: str) -> list:
    return [int(x) for x in text.replace(",", " ").split()]


@dataclass
class Scenario:
    config: ScenarioConfig
    n: int
    projective: int | None
    names: tuple
    chart: int
    specs: dict  # chart -> ComplexSpec
    schedule: EpsSchedule
    quad: QuadConfig
    chi: object

    @property
    def name(self):
        return self.config.name

    @property
    def spec(self) -> ComplexSpec:
        return self.specs[self.chart]

    @cached_property
    def conns(self) -> dict:
        return {c: chern_connections(s) for c, s in self.specs.items()}


def _schedule(cfg: ScenarioConfig) -> EpsSchedule:
    s = cfg.sections.get("schedule", {})
    return EpsSchedule(float(s.get("eps_max", 0.1)), float(s.get("eps_ratio", 0.5)), int(s.get("eps_count", 8)))


def _quad(cfg: ScenarioConfig) -> QuadConfig:
    q = cfg.sections.get("quadrature", {})
    base = QuadConfig()
    return replace(
        base,
        order=int(q.get("order", base.order)),
        max_depth=int(q.get("max_depth", base.max_depth)),
        tol=float(q.get("tol", base.tol)),
        workers=int(q.get("workers", base.workers)),
    )


def build_scenario(cfg: ScenarioConfig, charts: tuple | None = None) -> Scenario:
    sc = cfg.sections["scenario"]
    man = sc.get("manifold", "affine 2").split()
    cx = cfg.sections["complex"]
    cut = cfg.sections.get("cutoff", {})
    ranks = _ints(cx["ranks"])
    Nc = len(ranks) - 1
    phi_text = [None] + [cx[f"phi{k}"] for k in range(1, Nc + 1)]
    conformal = None
    if "conformal" in cx:
        conformal = (int(cx.get("conformal_level", 1)), cx["conformal"])
    chi = CHI_PROFILES[cut.get("chi", "default")]
    try:
        if man[0] == "projective":
            N = int(man[1])
            chart = int(sc.get("chart", 0))
            twists = [_ints(t) for t in cx["twists"].split("|")]
            F_text = [s.strip() for s in cut.get("F", "").split(",")]
            F_degree = int(cut.get("F_degree", 1))
            specs = {}
            want = charts if charts is not None else (chart,)
            for c in want:
                conf = conformal if c == chart else None
                specs[c] = projective_complex(N, c, ranks, twists, phi_text, F_text, F_degree, conf,
                                              f"{cfg.name}@chart{c}")
            names = chart_names(N, chart)
            return Scenario(cfg, N, N, names, chart, specs, _schedule(cfg), _quad(cfg), chi)
        if man[0] != "affine":
            raise ConfigError(f"unknown manifold {man}")
        n = int(man[1])
        names = tuple(sc["variables"].replace(",", " ").split()) if "variables" in sc else None
        from .charts import default_names

        names = names or default_names(n)
        phis = [None]
        for k in range(1, Nc + 1):
            phis.append(ExprMatrix(_matrix_text(phi_text[k], n, names), n=n, cols=ranks[k]))
        hs = []
        for k, r in enumerate(ranks):
            if f"h{k}" in cx:
                hs.append(ExprMatrix(_matrix_text(cx[f"h{k}"], n, names), n=n, cols=r))
            else:
                hs.append(ExprMatrix.identity(n, r))
            if conformal is not None and conformal[0] == k:
                f = parse_expr(conformal[1], n, names)
                hs[-1] = ExprMatrix([[e * f for e in row] for row in hs[-1].entries], n=n, cols=r)
        F = tuple(parse_expr(s.strip(), n, names) for s in cut["F"].split(","))
        spec = ComplexSpec(n, tuple(ranks), tuple(phis), tuple(hs), F, None, cfg.name)
        return Scenario(cfg, n, None, names, 0, {0: spec}, _schedule(cfg), _quad(cfg), chi)
    except ParseError as exc:
        raise ConfigError(f"expression error: {exc}") from exc


# ---------------------------------------------------------------------------
# test forms and references
# ---------------------------------------------------------------------------

_BUMP = re.compile(r"^(disc|annulus|const)(?:\(([^)]*)\))?$")


def parse_test(sc: Scenario, spec_text: str, form_text: str = "", box: float = 4.0) -> TestForm:
    bumps = []
    for item in spec_text.split("*"):
        item = item.strip()
        m = _BUMP.match(item)
        if not m:
            raise ConfigError(f"bad bump {item!r}")
        args = [a.strip() for a in (m.group(2) or "").split(",") if a.strip()]
        if m.group(1) == "disc":
            c = complex(args[1].replace("I", "j")) if len(args) > 1 else 0
            bumps.append(Bump("disc", float(args[0]), c))
        elif m.group(1) == "annulus":
            bumps.append(Bump("annulus", rho=float(args[0]), width=float(args[1])))
        else:
            bumps.append(Bump("const"))
    if len(bumps) != sc.n:
        raise ConfigError("one bump per coordinate")
    return TestForm(sc.n, bumps, parse_form(sc, form_text), box, label=spec_text)


def parse_form(sc: Scenario, text: str) -> list:
    """Form factor as ``(factor, FormValue)`` parts: terms ``expr : dx dyb ...`` or ``expr : omega``."""
    n = sc.n
    if not text.strip():
        return [(1.0, FormValue.scalar(n, 1))]
    gens = {f"d{v}": i for i, v in enumerate(sc.names)}
    gens.update({f"d{v}b": n + i for i, v in enumerate(sc.names)})
    exact = FormValue(n)
    parts = []
    for term in text.split(";"):
        coef, _, g = term.partition(":")
        c = parse_expr(coef.strip() or "1", n, sc.names)
        g = g.split()
        if g == ["omega"]:
            parts += [(a, f.map(lambda v, c=c: v * c)) for a, f in fubini_study_form(n)]
            continue
        f = FormValue.scalar(n, c)
        for name in g:
            if name not in gens:
                raise ConfigError(f"unknown differential {name!r}")
            f = f.wedge(FormValue(n, {1 << gens[name]: 1}))
        exact = exact + f
    if exact.data:
        parts.insert(0, (1.0, exact))
    return parts


def parse_number(text: str) -> complex:
    """Arithmetic on numbers, ``pi`` and ``I`` (``+ - * / ^`` and parentheses)."""
    import ast
    import operator

    ops = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}
    names = {"pi": math.pi, "I": 1j}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id in names:
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in ops:
            return ops[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in ops:
            return ops[type(node.op)](ev(node.operand))
        raise ConfigError(f"bad number {text!r}")

    try:
        tree = ast.parse(text.replace("^", "**").strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad number {text!r}") from exc
    return complex(ev(tree))


_REF_TERM = re.compile(r"^(.*?)\*?\s*(omega)?\s*(\[[^\]]*\]|psi\(0\))$")


def _cycle(sc: Scenario, text: str) -> CycleSpec:
    body = text.strip()[1:-1].strip()
    n = sc.n
    if body == "0":
        return CycleSpec((CycleComponent.point([0] * n),))
    fixed = {}
    for eq in body.split(","):
        var, _, val = eq.partition("=")
        var = var.strip()
        if var not in sc.names:
            raise ConfigError(f"unknown coordinate {var!r} in cycle")
        fixed[sc.names.index(var)] = Fraction(val.strip())
    return CycleSpec((CycleComponent.coordinate_plane(n, fixed),))


def evaluate_reference(sc: Scenario, text: str, test: TestForm):
    """Value and quadrature error of a reference expression against ``test``.

    Terms (separated by ``;``): ``c * [cycle]``, ``c * omega[cycle]``, ``c * psi(0)`` or ``zero``.
    """
    if text.strip() == "zero":
        return 0j, 0.0
    total, err = 0j, 0.0
    for term in text.split(";"):
        term = term.strip()
        m = _REF_TERM.match(term)
        if not m:
            raise ConfigError(f"bad reference term {term!r}")
        coef = m.group(1).strip() or "1"
        c = parse_number(coef)
        what = m.group(3)
        if what == "psi(0)":
            v, e = cauchy_point_value(test)
            # form factor at the origin (the bump factor is handled by the oracle)
            plain = TestForm(sc.n, [Bump("const")] * sc.n, test.parts, test.box)
            f0 = plain.value_at([0] * sc.n)
            v, e = v * f0, e * abs(f0)
        else:
            t = test
            if m.group(2):
                t = test.wedge_form(fubini_study_form(sc.n))
            v, e = pair_cycle_result(_cycle(sc, what), t)
        total += c * v
        err += abs(c) * e
    return total, err


def _tolerance(text: str, ref: complex, scale: float) -> float:
    """``"2%"`` (relative to |ref| or the scale), ``"abs 0.05"``, or both separated by ``|`` (strictest wins)."""
    tols = []
    for part in text.split("|"):
        part = part.strip()
        if part.endswith("%"):
            base = abs(ref) if abs(ref) > 0 else scale
            tols.append(float(part[:-1]) / 100 * base)
        elif part.startswith("abs"):
            tols.append(float(part[3:]))
        else:
            tols.append(float(part))
    return min(tols)


# ---------------------------------------------------------------------------
# target execution
# ---------------------------------------------------------------------------


def _integrand(sc: Scenario, t: dict, chi, spec=None, conn=None):
    kind = t["kind"]
    spec = spec or sc.spec
    conn = conn or chern_connections(spec)
    if kind in ("chern", "character"):
        degs = _ints(t.get("degrees", "1"))
        return RegularizedChernIntegrand(spec, conn, chi, degs, "c" if kind == "chern" else "ch", True)
    if kind in ("residue-route", "fundamental-cycle"):
        p = int(t.get("p", t.get("degrees", "1")))
        route = t.get("route", "c")
        if kind == "fundamental-cycle" or route == "ch":
            c = 1 / ((2j * math.pi) ** p * math.factorial(p))
        else:
            c = (-1) ** (p - 1) / ((2j * math.pi) ** p * p)
        levels = _ints(t["levels"]) if "levels" in t else None
        scale = parse_number(t.get("factor", "1"))
        return ResidueRouteIntegrand(spec, conn, chi, p, c * scale, levels, True)
    if kind == "residue-action":
        k, l = int(t["k"]), int(t["l"])
        return ResidueChainIntegrand(spec, conn, chi, k, l, None, True)
    if kind == "poincare-lelong":
        if spec.N != 1 or spec.ranks != (1, 1):
            raise ConfigError("poincare-lelong needs a complex 0 -> E_1 -> E_0 of line bundles")
        s = spec.phi[1].entries[0][0]
        hL = spec.h[0].entries[0][0] / spec.h[1].entries[0][0]
        theta = [hL.partial("hol", i) / hL for i in range(spec.n)]
        return PoincareLelongIntegrand(spec.n, s, spec.F, chi, theta, spec.F_weight, torus_invariant=True)
    raise ConfigError(f"unknown target kind {kind!r}")


def _estimate(sc: Scenario, t: dict, test: TestForm, chi, spec=None, scale: float = 0.0) -> CurrentEstimate:
    """``scale`` (size of the expected pairing when the reference is 0) sets the absolute quadrature
    tolerance; otherwise a vanishing pairing would be refined down to ``abs_tol``."""
    integ = _integrand(sc, t, chi, spec)
    domain = t.get("domain", "auto")
    quad = sc.quad
    if scale > 0:
        quad = replace(quad, abs_tol=max(quad.abs_tol, quad.tol * scale))
    return pair(integ, test, sc.schedule, quad, chi, domain=domain)


def _test(sc: Scenario, t: dict, key: str = "test", form_key: str = "form") -> TestForm:
    return parse_test(sc, t[key], t.get(form_key, ""), float(t.get("box", 4.0)))


def run_target(sc: Scenario, name: str, t: dict | None = None, timings: bool = False) -> ExperimentReport:
    """Run one target; errors are recorded in the report rather than raised."""
    t = t or sc.config.targets[name]
    t0 = time.perf_counter()
    try:
        rep = _run_target(sc, name, t)
    except Exception as exc:  # runtime errors are per-target
        est = CurrentEstimate([], [], [], complex("nan"), math.inf, None, converged=False)
        rep = ExperimentReport(sc.name, name, est, None, 0.0, False, notes={"error": f"{type(exc).__name__}: {exc}"})
    if timings:
        rep.runtime_ms = (time.perf_counter() - t0) * 1000
    return rep


def _reference(sc, t, test, scale=0.0):
    prov = t.get("provenance", "exploratory")
    if "reference" not in t:
        return None, 0.0
    if "reference_form" in t:
        test = TestForm(sc.n, test.bumps, parse_form(sc, t["reference_form"]), test.box)
    v, e = evaluate_reference(sc, t["reference"], test)
    ref = Reference(v, prov, e)
    tol = _tolerance(t.get("tolerance", "2%"), v, scale)
    return ref, tol


def _scale(sc, t, test):
    if "scale" not in t:
        return 0.0
    v, _ = evaluate_reference(sc, t["scale"], test)
    return abs(v)


def _run_target(sc: Scenario, name: str, t: dict) -> ExperimentReport:
    kind = t["kind"]
    chi = sc.chi
    if kind == "compare-routes":
        return _compare_routes(sc, name, t)
    if kind == "compare-chi":
        return _compare_variant(sc, name, t, "chi")
    if kind == "point-coefficient":
        return _point_coefficient(sc, name, t)
    if kind == "global-integral":
        return _global_integral(sc, name, t)
    if kind == "pointwise":
        return _pointwise(sc, name, t)
    test = _test(sc, t)
    scale = _scale(sc, t, test)
    est = _estimate(sc, t, test, chi, scale=scale)
    ref, tol = _reference(sc, t, test, scale)
    return make_report(sc.name, name, est, ref, tol)


def _pointwise(sc: Scenario, name: str, t: dict) -> ExperimentReport:
    """Largest residual of the pointwise identities at random points (reference 0)."""
    from . import checks

    count = int(t.get("points", 20))
    seed = int(t.get("seed", 0))
    spec, conn = sc.spec, sc.conns[sc.chart]
    res = {"supertrace": checks.supertrace_sign_residual(seed=seed)}
    res.update(checks.leibniz_residuals(spec, conn, count, seed))
    res["curvature"] = checks.curvature_identity_residual(spec, conn, count, seed)
    res.update(checks.complex_identity_residuals(spec, conn, count, seed))
    res.update(checks.whitney_residuals(spec, conn, count, seed))
    worst = max(res.values())
    est = CurrentEstimate([], [], [], complex(worst), 0.0, None, method="pointwise")
    tol = float(t.get("tolerance", 1e-9))
    return make_report(sc.name, name, est, Reference(0j, t.get("provenance", "oracle")), tol, residuals=res)


def _agreement(sc, name, a: CurrentEstimate, b: CurrentEstimate, t, scale_value: float, **notes):
    """Reports whether two estimates agree within their combined error bars."""
    frac = _tolerance(t.get("tolerance", "2%"), b.limit, scale_value)
    ref = Reference(b.limit, "oracle", b.error)
    rep = make_report(sc.name, name, a, ref, 0.0, **notes)
    err = a.error + b.error
    dev = abs(a.limit - b.limit)
    rep.tolerance = frac
    rep.passed = bool(dev <= err and err <= frac and not (a.overrun or b.overrun))
    return rep


def _compare_routes(sc, name, t):
    """Direct limit of ``c_p(E, D_hat)`` against the residue-current expression."""
    test = _test(sc, t)
    p = int(t["p"])
    direct = _estimate(sc, {"kind": t.get("direct", "chern"), "degrees": str(p)}, test, sc.chi)
    route = _estimate(sc, {"kind": "residue-route", "p": str(p), "route": t.get("route", "c")}, test, sc.chi)
    scale = max(abs(route.limit), _scale(sc, t, test))
    return _agreement(sc, name, direct, route, t, scale, residue_route=_est_summary(route))


def _compare_variant(sc, name, t, what):
    inner = dict(t)
    inner["kind"] = t["inner"]
    test = _test(sc, t)
    base = _estimate(sc, inner, test, CHI_PROFILES["default"])
    alt = _estimate(sc, inner, test, CHI_PROFILES["alt"])
    scale = max(abs(base.limit), _scale(sc, t, test))
    return _agreement(sc, name, alt, base, t, scale, default_profile=_est_summary(base))


def _est_summary(e: CurrentEstimate) -> dict:
    return {"limit": e.limit, "error": e.error, "alpha": e.alpha, "pairings": list(e.pairings)}


def _point_coefficient(sc, name, t):
    """Coefficient ``B`` of ``[0]`` in ``A * line + B * [0]``.

    ``A`` is measured with ``far_test`` (supported away from 0), ``B`` from ``test`` near 0.
    """
    test0 = _test(sc, t)
    far = _test(sc, t, "far_test")
    line = t["line"]
    inner = {"kind": t.get("inner", "chern"), "degrees": t.get("degrees", "2")}
    est0 = _estimate(sc, inner, test0, sc.chi)
    estf = _estimate(sc, inner, far, sc.chi)
    L0, eL0 = evaluate_reference(sc, line, test0)
    Lf, eLf = evaluate_reference(sc, line, far)
    psi0, ep = cauchy_point_value(test0)
    A = estf.limit / Lf
    eA = estf.error / abs(Lf) + abs(A) * eLf / abs(Lf)
    B = (est0.limit - A * L0) / psi0
    eB = (est0.error + abs(L0) * eA + abs(A) * eL0) / abs(psi0) + abs(B) * ep / abs(psi0)
    pairs = [(p0 - pf / Lf * L0) / psi0 for p0, pf in zip(est0.pairings, estf.pairings)]
    qerr = [(e0 + abs(L0) * ef / abs(Lf)) / abs(psi0) for e0, ef in zip(est0.quad_errors, estf.quad_errors)]
    est = CurrentEstimate(est0.epsilons, pairs, qerr, B, eB, est0.alpha,
                          [a + b for a, b in zip(est0.cells, estf.cells)],
                          [max(a, b) for a, b in zip(est0.depth, estf.depth)],
                          est0.converged and estf.converged, est0.overrun or estf.overrun, "point-coefficient")
    ref_val = parse_number(t["reference"])
    ref = Reference(ref_val, t.get("provenance", "published"))
    tol = _tolerance(t.get("tolerance", "3%"), ref_val, 1.0)
    notes = {"line_coefficient": {"limit": A, "error": eA}}
    if "line_reference" in t:
        notes["line_reference"] = parse_number(t["line_reference"])
    return make_report(sc.name, name, est, ref, tol, **notes)


def _global_integral(sc: Scenario, name: str, t: dict):
    """``int_{P^N} c_{l1} ^ ...`` assembled from all charts with the weights ``|Z_j|^2/|Z|^2``."""
    if sc.projective is None:
        raise ConfigError("global-integral needs a projective scenario")
    N = sc.projective
    full = build_scenario(sc.config, tuple(range(N + 1)))
    R = float(t.get("box", 100.0))
    degs = t.get("degrees", "2")

    def run(radius):
        parts = []
        for c in range(N + 1):
            w = pou_weight_expr(c, c, N)
            test = TestForm(N, [Bump("const")] * N, FormValue.scalar(N, w), radius, label=f"pou{c}")
            est = _estimate(full, {"kind": t.get("inner", "chern"), "degrees": degs}, test, sc.chi,
                            spec=full.specs[c])
            parts.append(est)
        return parts

    parts = run(R)
    doubled = run(2 * R) if t.get("doubling", "yes") == "yes" else parts
    M = len(parts[0].pairings)
    pairs = [sum(p.pairings[j] for p in parts) for j in range(M)]
    pairs2 = [sum(p.pairings[j] for p in doubled) for j in range(M)]
    trunc = max(abs(a - b) for a, b in zip(pairs, pairs2))
    qerr = [sum(p.quad_errors[j] for p in parts) + trunc for j in range(M)]
    from .engine import extrapolate

    lim, err, alpha, method = extrapolate(sc.schedule.epsilons(), pairs2, qerr, sc.schedule.ratio)
    est = CurrentEstimate(sc.schedule.epsilons(), pairs2, qerr, lim, err, alpha,
                          [sum(p.cells[j] for p in doubled) for j in range(M)],
                          [max(p.depth[j] for p in doubled) for j in range(M)],
                          all(p.converged for p in doubled), any(p.overrun for p in parts + doubled), method)
    ref_val = parse_number(t["reference"])
    ref = Reference(ref_val, t.get("provenance", "published"))
    tol = _tolerance(t.get("tolerance", "3% | abs 0.05"), ref_val, 1.0)
    return make_report(sc.name, name, est, ref, tol, truncation=trunc, box=R)


# ---------------------------------------------------------------------------
# built-in corpus
# ---------------------------------------------------------------------------

_COMMON = """
[schedule]
eps_max = 0.1
eps_ratio = 0.5
eps_count = 8

[quadrature]
order = 6
max_depth = 14
tol = 1e-4
"""

DIVISOR_PL = """
[scenario]
name = divisor-pl
manifold = affine 2

[complex]
ranks = 1, 1
phi1 = y
{conformal}
[cutoff]
F = y
chi = {chi}
""" + _COMMON + """
[target poincare-lelong]
kind = poincare-lelong
test = disc(1.5) * disc(1.5)
form = I/2 : dx dxb
reference = [y=0]
provenance = published
tolerance = 1%

[target c1-direct]
kind = chern
degrees = 1
test = disc(1.5) * disc(1.5)
form = I/2 : dx dxb
reference = [y=0]
provenance = published
tolerance = 1%

[target residue-action]
kind = residue-action
k = 1
l = 0
test = disc(1.5) * disc(1.5)
form = I/2 : dy dx dxb
reference = 2*pi*I * [y=0]
reference_form = I/2 : dx dxb
provenance = oracle
tolerance = 1%
"""

KOSZUL_XY = """
[scenario]
name = koszul-xy
manifold = affine 2

[complex]
ranks = 1, 2, 1
phi1 = x, y
phi2 = -y ; x
{conformal}
[cutoff]
F = x, y
chi = {chi}
""" + _COMMON + """
[target c1]
kind = chern
degrees = 1
test = disc(1) * disc(1)
form = I/2 : dx dxb ; I/2 : dy dyb
reference = zero
scale = [x=0] ; [y=0]
provenance = published
tolerance = 1%

[target c2]
kind = chern
degrees = 2
test = disc(1) * disc(1)
reference = -1 * psi(0)
provenance = published
tolerance = 2%

[target ch2]
kind = character
degrees = 2
test = disc(1) * disc(1)
reference = psi(0)
provenance = published
tolerance = 2%

[target c2-routes]
kind = compare-routes
p = 2
test = disc(1) * disc(1)
tolerance = 2%

[target fundamental-cycle]
kind = fundamental-cycle
p = 2
test = disc(1) * disc(1)
reference = psi(0)
provenance = oracle
tolerance = 2%
"""

P2_EXAMPLE = """
[scenario]
name = p2-example
manifold = projective 2
chart = 0

[complex]
ranks = 1, 2, 1
twists = 0 | -{k}, -{lm} | -{kl}
phi1 = y^{k}, x^{l}*y^{m}
phi2 = -x^{l} ; y^{km}
{conformal}
[cutoff]
F = y
F_degree = 1
chi = {chi}
""" + _COMMON + """
[target c1]
kind = chern
degrees = 1
test = disc(1.5) * disc(1.5)
form = I/2 : dx dxb
reference = {m} * [y=0]
provenance = published
tolerance = 2%

[target c1-routes]
kind = compare-routes
p = 1
test = disc(1.5) * disc(1.5)
form = I/2 : dx dxb
tolerance = 2%

[target c2-point]
kind = point-coefficient
degrees = 2
test = disc(1) * disc(1)
far_test = annulus(2, 2) * disc(1)
line = omega[y=0]
line_reference = {A}
reference = {B}
provenance = published
tolerance = 3%

[target c1-squared]
kind = chern
degrees = 1, 1
test = disc(1.5) * disc(1.5)
reference = {m2} * omega[y=0]
provenance = published
tolerance = 3%

[target c2-global]
kind = global-integral
degrees = 2
box = 100
reference = {total}
provenance = published
tolerance = 3% | abs 0.05
"""

BUILTIN = ("divisor-pl", "koszul-xy", "p2-example", "exactness-whitney", "chi-independence")


def _params(text: str) -> dict:
    out = {}
    if ":" in text:
        for kv in text.split(":", 1)[1].split(","):
            if kv.strip():
                k, _, v = kv.partition("=")
                out[k.strip()] = v.strip()
    return out


def _conformal_text(metric: str, var: str) -> str:
    if metric == "perturbed":
        return f"conformal_level = 1\nconformal = {exp_truncated(f'{var}*conj({var})/10', 6)}\n"
    return ""


def builtin_config(spec: str) -> ScenarioConfig:
    """Built-in scenarios; parameters as ``name:key=value,...`` (``chi``, ``metric``, ``k``, ``l``, ``m``)."""
    name = spec.split(":")[0]
    p = _params(spec)
    chi = p.get("chi", "default")
    metric = p.get("metric", "default")
    if name == "divisor-pl":
        text = DIVISOR_PL.format(chi=chi, conformal=_conformal_text(metric, "x"))
    elif name == "koszul-xy":
        text = KOSZUL_XY.format(chi=chi, conformal=_conformal_text(metric, "x"))
    elif name == "p2-example":
        k, l, m = int(p.get("k", 3)), int(p.get("l", 1)), int(p.get("m", 1))
        if not 0 < m < k or l < 1:
            raise ConfigError("p2-example needs 0 < m < k and l >= 1")
        A = Fraction(m * (2 * m + l), 2)
        B = Fraction(-l * (2 * k - m), 2)
        text = P2_EXAMPLE.format(k=k, l=l, m=m, lm=l + m, kl=k + l, km=k - m, chi=chi, m2=m * m,
                                 A=A, B=B, total=m * m + l * (m - k), conformal=_conformal_text(metric, "x"))
    elif name == "exactness-whitney":
        text = P2_EXAMPLE.format(k=3, l=1, m=1, lm=2, kl=4, km=2, chi=chi, m2=1, A="3/2", B="-5/2", total=-1,
                                 conformal="")
        text = text.split("[target")[0].replace("name = p2-example", "name = exactness-whitney")
        text += "\n[target pointwise]\nkind = pointwise\npoints = 20\n"
    elif name == "chi-independence":
        text = KOSZUL_XY.format(chi="default", conformal="").split("[target")[0]
        text = text.replace("name = koszul-xy", "name = chi-independence")
        text += """
[target c2-chi]
kind = compare-chi
inner = chern
degrees = 2
test = disc(1) * disc(1)
tolerance = 2%

[target ch2-chi]
kind = compare-chi
inner = character
degrees = 2
test = disc(1) * disc(1)
tolerance = 2%
"""
    else:
        raise ConfigError(f"unknown built-in scenario {name!r}")
    cfg = parse_config(text)
    label = f"p2-example k={k} l={l} m={m}" if name == "p2-example" else name
    if chi != "default":
        label += f" chi={chi}"
    if metric != "default":
        label += f" metric={metric}"
    cfg.sections["scenario"]["name"] = label
    return cfg
