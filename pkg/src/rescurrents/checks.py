"""Pointwise identity residuals for complexes, connections and minimal inverses."""

from __future__ import annotations

import numpy as np

from .charforms import total_chern
from .charts import ChartExpr, Poly
from .gaussrat import QI
from .hermitian import (
    ComplexSpec,
    ConnectionData,
    D_endo,
    FrameBatch,
    chern_connections,
    compatible_curvature,
    endo_from_levels,
    eval_form_matrix,
    regularized_connection,
)
from .superforms import EndoFormValue, FormMatrix, FormValue, d_form, chart_deriv, super_compose, supertrace

__all__ = [
    "sample_points",
    "random_endo",
    "eval_endo",
    "supertrace_sign_residual",
    "leibniz_residuals",
    "curvature_identity_residual",
    "complex_identity_residuals",
    "whitney_residuals",
]


def sample_points(spec: ComplexSpec, count: int = 20, seed: int = 0, radius: float = 1.5,
                  margin: float = 1e-2) -> np.ndarray:
    """Random points in ``|z_i| < radius`` with ``|F|^2 > margin``."""
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < count:
        z = (rng.uniform(-1, 1, spec.n) + 1j * rng.uniform(-1, 1, spec.n)) * radius / np.sqrt(2)
        if spec.norm2_F.evaluate(z[:, None]).real[0] > margin:
            pts.append(z)
    return np.array(pts).T


def _random_poly(n: int, rng, degree: int = 2, terms: int = 3) -> ChartExpr:
    out = {}
    for _ in range(terms):
        e = tuple(int(v) for v in rng.multinomial(int(rng.integers(0, degree + 1)), [1 / (2 * n)] * (2 * n)))
        out[e] = QI(int(rng.integers(-3, 4)), int(rng.integers(-3, 4)))
    return ChartExpr.from_poly(Poly(n, out))


def random_endo(n: int, levels, blocks, form_mask: int, seed: int = 0) -> EndoFormValue:
    """Homogeneous symbolic element with polynomial entries on the given blocks and one form mask."""
    rng = np.random.default_rng(seed)
    out = {}
    for k, l in blocks:
        A = np.empty((levels[k], levels[l]), dtype=object)
        for idx in np.ndindex(A.shape):
            A[idx] = _random_poly(n, rng)
        out[(k, l)] = FormMatrix(n, levels[k], levels[l], {form_mask: A})
    return EndoFormValue(n, levels, out)


def eval_endo(a: EndoFormValue, z: np.ndarray) -> EndoFormValue:
    return a.map_blocks(lambda B: eval_form_matrix(B, z))


def _rel(a: float, b: float) -> float:
    return a / max(b, 1.0)


def supertrace_sign_residual(n: int = 2, levels=(1, 2, 1), trials: int = 20, seed: int = 0) -> float:
    """``tr(a b) - (-1)^{deg a deg b - deg_e a deg_e b} tr(b a)`` on random homogeneous elements."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    N = len(levels) - 1
    for _ in range(trials):
        k, l = int(rng.integers(0, N + 1)), int(rng.integers(0, N + 1))
        ma = int(rng.integers(0, 1 << (2 * n)))
        mb = int(rng.integers(0, 1 << (2 * n)))
        A = rng.normal(size=(levels[k], levels[l], 3)) + 1j * rng.normal(size=(levels[k], levels[l], 3))
        B = rng.normal(size=(levels[l], levels[k], 3)) + 1j * rng.normal(size=(levels[l], levels[k], 3))
        a = EndoFormValue(n, levels, {(k, l): FormMatrix(n, levels[k], levels[l], {ma: A})})
        b = EndoFormValue(n, levels, {(l, k): FormMatrix(n, levels[l], levels[k], {mb: B})})
        fa, fb = bin(ma).count("1"), bin(mb).count("1")
        ea, eb = k - l, l - k
        s = (-1) ** (((fa + ea) * (fb + eb) - ea * eb) % 2)
        lhs = supertrace(super_compose(a, b))
        rhs = supertrace(super_compose(b, a)).scale(s)
        diff = lhs - rhs
        worst = max(worst, max((float(np.max(np.abs(v))) for v in diff.data.values()), default=0.0))
    return worst


def _endo_diff(a: EndoFormValue, b: EndoFormValue) -> float:
    return (a - b).max_abs()


def leibniz_residuals(spec: ComplexSpec, conn: ConnectionData | None = None, count: int = 20, seed: int = 0) -> dict:
    """``d(w ^ e) = dw ^ e + (-1)^{deg w} w ^ de`` and ``D(ab) = (Da) b + (-1)^{deg a} a (Db)``."""
    conn = conn or chern_connections(spec)
    n, lv = spec.n, spec.ranks
    rng = np.random.default_rng(seed)
    z = sample_points(spec, count, seed)
    # scalar forms
    w = FormValue(n, {1 << n: _random_poly(n, rng), 1: _random_poly(n, rng)})
    e = FormValue(n, {(1 << 1) if n > 1 else (1 << n): _random_poly(n, rng)})
    d = chart_deriv(n)
    lhs = d_form(w.wedge(e), d)
    rhs = d_form(w, d).wedge(e) - w.wedge(d_form(e, d))
    res_d = _form_max(lhs - rhs, z)
    # endomorphism-valued, odd a and arbitrary b
    N = spec.N
    a = random_endo(n, lv, [(k - 1, k) for k in range(1, N + 1)], 1 << n, seed + 1)  # deg_f 1, deg_e -1
    b = random_endo(n, lv, [(k, k - 1) for k in range(1, N + 1)], 1, seed + 2)  # deg_f 1, deg_e +1
    th = endo_from_levels(n, lv, conn.forms)
    ab = super_compose(a, b)
    lhs = D_endo(ab, th)
    deg_a = 0  # 1 + (-1)
    rhs = super_compose(D_endo(a, th), b) + super_compose(a, D_endo(b, th)).scale((-1) ** deg_a)
    res_D = _endo_diff(eval_endo(lhs, z), eval_endo(rhs, z))
    return {"leibniz_d": res_d, "leibniz_D": res_D}


def _form_max(f: FormValue, z: np.ndarray) -> float:
    worst = 0.0
    for c in f.data.values():
        v = c.evaluate(z) if isinstance(c, ChartExpr) else np.asarray(complex(c))
        worst = max(worst, float(np.max(np.abs(v))))
    return worst


def curvature_identity_residual(spec: ComplexSpec, conn: ConnectionData | None = None, count: int = 20,
                                seed: int = 0) -> float:
    """``D D a - (Theta a - a Theta)`` for a random odd symbolic ``a``, relative to its size."""
    conn = conn or chern_connections(spec)
    n, lv = spec.n, spec.ranks
    a = random_endo(n, lv, [(k - 1, k) for k in range(1, spec.N + 1)], 0, seed + 3)
    th = endo_from_levels(n, lv, conn.forms)
    Th = endo_from_levels(n, lv, conn.curvatures)
    DDa = D_endo(D_endo(a, th), th)
    rhs = super_compose(Th, a) - super_compose(a, Th)
    z = sample_points(spec, count, seed)
    l, r = eval_endo(DDa, z), eval_endo(rhs, z)
    return _rel(_endo_diff(l, r), r.max_abs())


def complex_identity_residuals(spec: ComplexSpec, conn: ConnectionData | None = None, count: int = 20,
                               seed: int = 0) -> dict:
    """Residuals of the identities satisfied by ``phi``, ``sigma`` and ``D phi`` off ``Z``."""
    conn = conn or chern_connections(spec)
    z = sample_points(spec, count, seed)
    fb = FrameBatch(spec, conn, z)
    n, lv = spec.n, spec.ranks
    P, S = fb.phi_endo(), fb.sigma_endo()
    DP, dbS = fb.Dphi_endo(), fb.dbar_sigma_endo()
    I = EndoFormValue.identity(n, lv, exact=False)
    Ib = I.map_blocks(lambda B: FormMatrix(n, B.rows, B.cols, {0: np.broadcast_to(B.data[0][..., None], (B.rows, B.cols, fb.npts)) if B.data[0].ndim == 2 else B.data[0]}))
    out = {
        "identitet": _endo_diff(super_compose(P, S) + super_compose(S, P), Ib),
        "sigma_sigma": super_compose(S, S).max_abs(),
        "exakt": _endo_diff(super_compose(P, DP), super_compose(DP, P)),
        "dstreck": _endo_diff(super_compose(P, dbS), super_compose(dbS, P)),
        "dexakt": _endo_diff(super_compose(S, dbS), super_compose(dbS, S)),
    }
    # Moore-Penrose axioms in the metric frames
    worst = 0.0
    for k in range(1, spec.N + 1):
        Pp = np.moveaxis(fb.metric_phi(k)[0], -1, 0)
        Sp = np.linalg.pinv(Pp)
        G0, G0i, _, _ = fb._chol[k - 1]
        G1, G1i, _, _ = fb._chol[k]
        sig = np.moveaxis(fb.sigma_data(k)[0], -1, 0)
        worst = max(worst, float(np.max(np.abs(G1 @ sig @ G0i - Sp))))
    out["moore_penrose"] = worst
    # dbar of D phi equals Theta phi - phi Theta: symbolic dbar of the coefficients of D phi
    worst = 0.0
    for k in range(1, spec.N + 1):
        Pk = FormMatrix(n, lv[k - 1], lv[k], {0: fb.phi[k]})
        rhs = (fb.Theta[k - 1].matmul(Pk) - Pk.matmul(fb.Theta[k])).project(1, 1)
        phi = spec.phi[k]
        for i in range(n):
            Mi = spec.dphi[k][i] + conn.theta[k - 1][i] @ phi - phi @ conn.theta[k][i]
            for j in range(n):
                lhs = -Mi.partial("anti", j).evaluate(z)
                m = (1 << i) | (1 << (n + j))
                ref = rhs.data.get(m, np.zeros_like(lhs))
                worst = max(worst, float(np.max(np.abs(lhs - ref))))
    out["dbar_D"] = worst
    return out


def whitney_residuals(spec: ComplexSpec, conn: ConnectionData | None = None, count: int = 20, seed: int = 0,
                      chi_value: float = 0.37) -> dict:
    """Compatibility and Whitney vanishing for the compatible connection off ``Z``, and
    ``D_hat phi = (1 - chi) D phi`` for the regularized connection at a fixed ``chi``."""
    conn = conn or chern_connections(spec)
    z = sample_points(spec, count, seed)
    fb = FrameBatch(spec, conn, z)
    P = fb.phi_endo()
    out = {}
    for label, chi in (("compatible", np.ones(fb.npts)), ("regularized", np.full(fb.npts, chi_value))):
        th = fb.theta_endo(regularized_connection(fb, chi))
        Dhat = fb.dphi_endo() + super_compose(th, P) + super_compose(P, th)
        out[label] = _endo_diff(Dhat, fb.Dphi_endo().scale(1 - chi))
    c = total_chern(compatible_curvature(fb), spec.ranks)
    for j in range(1, spec.n + 1):
        out[f"c{j}_compatible"] = max((float(np.max(np.abs(v))) for v in c[j].data.values()), default=0.0)
    return out
