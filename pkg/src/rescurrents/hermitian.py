"""Hermitian complexes of vector bundles on a coordinate chart.

Conventions.  A metric matrix ``h`` pairs column coordinates by ``<u, v> = v^H h u``; the
Chern connection is ``theta = h^{-1} del h`` and ``D u = du + theta u``.  Endomorphism-valued
forms are composed with the super sign ``(-1)^{deg_e(a) deg_f(b)}``.  In ordinary matrix
terms (forms on the left, matrices composed left to right):

* ``D phi_k = d phi_k + theta_{k-1} phi_k - phi_k theta_k``  (``phi_k`` is odd),
* the super product ``sigma_k D phi_k`` equals ``-sigma_k (D phi_k)`` as matrices of forms,
  so the regularized connection is ``theta_k + chi * sigma_k (D phi_k)``.

The numerical layer works on batches of points: matrices have shape ``(rows, cols, npts)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .charts import ChartExpr, ExprMatrix, PoleError
from .superforms import (
    EndoFormValue,
    FormMatrix,
    FormValue,
    chart_deriv,
    d_endo,
    popcount,
    super_compose,
    wedge_sign,
)

__all__ = [
    "ComplexSpec",
    "ConnectionData",
    "RankDropError",
    "chern_connection",
    "chern_connections",
    "connection_forms",
    "curvature",
    "d_matrix",
    "D_endo",
    "endo_from_levels",
    "FrameBatch",
    "PointFrame",
    "minimal_inverse",
    "minimal_inverse_derivatives",
    "regularized_connection",
    "regularized_curvature",
    "compatible_connection",
    "compatible_curvature",
    "eval_form_matrix",
    "RANK_TAU",
]

RANK_TAU = 1e-10


class RankDropError(ArithmeticError):
    """The morphism has lower than generic rank at an evaluation point."""


# ---------------------------------------------------------------------------
# symbolic data
# ---------------------------------------------------------------------------


def _zero_matrix(n: int, r: int, c: int) -> ExprMatrix:
    return ExprMatrix.zeros(n, r, c)


@dataclass(frozen=True, eq=False)
class ComplexSpec:
    """A complex ``0 -> E_N -> ... -> E_0`` on a chart with metrics and a section F.

    ``phi[k]`` (k >= 1) is the ``r_{k-1} x r_k`` matrix of ``phi_k: E_k -> E_{k-1}``;
    ``phi[0]`` is unused.  ``|F|^2 = F_weight * sum_i |F_i|^2``.
    """

    n: int
    ranks: tuple
    phi: tuple
    h: tuple
    F: tuple
    F_weight: ChartExpr | None = None
    name: str = ""
    projective_dim: int | None = None
    chart: int | None = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        N = len(self.ranks) - 1
        if len(self.phi) != N + 1 or len(self.h) != N + 1:
            raise ValueError("need phi_0..phi_N (phi_0 unused) and h_0..h_N")
        for k in range(1, N + 1):
            if self.phi[k].shape != (self.ranks[k - 1], self.ranks[k]):
                raise ValueError(f"phi_{k} has shape {self.phi[k].shape}")
        for k in range(N + 1):
            if self.h[k].shape != (self.ranks[k], self.ranks[k]):
                raise ValueError(f"h_{k} has shape {self.h[k].shape}")
        if self.validate:
            self.check()

    @property
    def N(self) -> int:
        return len(self.ranks) - 1

    def check(self, samples: int = 5, seed: int = 0):
        for k in range(1, self.N + 1):
            if not all(e.is_holomorphic() for r in self.phi[k].entries for e in r):
                raise ValueError(f"phi_{k} is not holomorphic")
        for k in range(2, self.N + 1):
            if not (self.phi[k - 1] @ self.phi[k]).is_zero():
                raise ValueError(f"phi_{k - 1} phi_{k} is not identically zero")
        for k in range(self.N + 1):
            if self.h[k].conj_transpose() != self.h[k]:
                if not (self.h[k].conj_transpose() - self.h[k]).is_zero():
                    raise ValueError(f"h_{k} is not Hermitian")
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(self.n, samples)) + 1j * rng.normal(size=(self.n, samples))
        for k in range(self.N + 1):
            if self.ranks[k] == 0:
                continue
            H = np.moveaxis(self.h[k].evaluate(z), -1, 0)
            if np.any(np.linalg.eigvalsh(H) <= 0):
                raise ValueError(f"h_{k} is not positive definite at a sample point")

    @cached_property
    def norm2_F(self) -> ChartExpr:
        acc = ChartExpr.const(self.n, 0)
        for f in self.F:
            acc = acc + f * f.conj()
        return acc * self.F_weight if self.F_weight is not None else acc

    @cached_property
    def dnorm2_F(self) -> tuple:
        """``(del_i |F|^2, delbar_i |F|^2)`` for each coordinate."""
        e = self.norm2_F
        return tuple((e.partial("hol", i), e.partial("anti", i)) for i in range(self.n))

    @cached_property
    def dphi(self) -> tuple:
        """``dphi[k][i] = d phi_k / d z_i``."""
        out = [None]
        for k in range(1, self.N + 1):
            out.append(tuple(self.phi[k].partial("hol", i) for i in range(self.n)))
        return tuple(out)

    @cached_property
    def dh(self) -> tuple:
        """``dh[k] = ([del_i h_k], [delbar_i h_k])``."""
        return tuple(
            (
                tuple(self.h[k].partial("hol", i) for i in range(self.n)),
                tuple(self.h[k].partial("anti", i) for i in range(self.n)),
            )
            for k in range(self.N + 1)
        )

    @cached_property
    def generic_ranks(self) -> tuple:
        """Rank of each phi_k at a fixed pseudo-random point."""
        rng = np.random.default_rng(12345)
        z = (rng.normal(size=(self.n, 1)) + 1j * rng.normal(size=(self.n, 1))) * 0.7
        out = [0]
        for k in range(1, self.N + 1):
            P = self.phi[k].evaluate(z)[:, :, 0]
            s = np.linalg.svd(P, compute_uv=False) if P.size else np.zeros(0)
            out.append(int(np.sum(s > RANK_TAU * (s[0] if len(s) else 0))) if len(s) and s[0] > 0 else 0)
        return tuple(out)


@dataclass(frozen=True, eq=False)
class ConnectionData:
    """(1,0)-connection matrices ``theta[k] = sum_i theta[k][i] dz_i`` per level."""

    theta: tuple
    flag: str = "chern"

    def form(self, k: int) -> FormMatrix:
        return connection_forms(self.theta[k])

    @cached_property
    def forms(self) -> tuple:
        return tuple(connection_forms(t) for t in self.theta)

    @cached_property
    def curvatures(self) -> tuple:
        return tuple(curvature(f) for f in self.forms)

    @cached_property
    def dtheta(self) -> tuple:
        return tuple(d_matrix(f) for f in self.forms)


def chern_connection(h: ExprMatrix) -> tuple:
    """``theta_i = h^{-1} d h / d z_i`` for each coordinate."""
    if h.rows == 0:
        return tuple(ExprMatrix.zeros(h.n, 0, 0) for _ in range(h.n))
    hinv = h.inverse()
    return tuple(hinv @ h.partial("hol", i) for i in range(h.n))


def chern_connections(spec: ComplexSpec) -> ConnectionData:
    return ConnectionData(tuple(chern_connection(spec.h[k]) for k in range(spec.N + 1)), "chern")


def connection_forms(theta_i: Sequence[ExprMatrix]) -> FormMatrix:
    n = len(theta_i)
    r, c = theta_i[0].shape if n else (0, 0)
    data = {}
    for i, M in enumerate(theta_i):
        if not M.is_zero():
            data[1 << i] = np.array(M.entries, dtype=object).reshape(r, c)
    return FormMatrix(theta_i[0].n if n else 0, r, c, data)


def d_matrix(B: FormMatrix) -> FormMatrix:
    """Entrywise exterior derivative of a matrix of symbolic forms."""
    e = EndoFormValue(B.n, (B.rows, B.cols), {(0, 1): B} if B.rows and B.cols else {})
    # a single off-diagonal block keeps shapes consistent; d acts entrywise
    out = d_endo(e, chart_deriv(B.n))
    return out.block(0, 1)


def curvature(theta: FormMatrix) -> FormMatrix:
    """``Theta = d theta + theta ^ theta``."""
    if theta.rows == 0:
        return theta
    return d_matrix(theta) + theta.matmul(theta)


def endo_from_levels(n: int, levels: Sequence[int], diag: Sequence[FormMatrix]) -> EndoFormValue:
    return EndoFormValue(n, levels, {(k, k): B for k, B in enumerate(diag) if B.rows})


def D_endo(alpha: EndoFormValue, theta: EndoFormValue, dalpha: EndoFormValue | None = None) -> EndoFormValue:
    """``D alpha = d alpha + theta alpha - (-1)^{deg alpha} alpha theta`` on homogeneous parts.

    ``theta`` carries the connection matrices on its diagonal blocks.  When ``dalpha`` is
    omitted the coefficients must be symbolic (:class:`ChartExpr` or constants).
    """
    out = dalpha if dalpha is not None else d_endo(alpha, chart_deriv(alpha.n))
    for fd, ed, part in alpha.homogeneous_parts():
        deg = fd + ed
        out = out + super_compose(theta, part)
        rhs = super_compose(part, theta)
        out = out - rhs if deg % 2 == 0 else out + rhs
    return out


# ---------------------------------------------------------------------------
# numerical evaluation on point batches
# ---------------------------------------------------------------------------


def eval_form_matrix(B: FormMatrix, z: np.ndarray) -> FormMatrix:
    """Evaluate a matrix of symbolic forms at points ``z`` of shape ``(n, npts)``."""
    npts = z.shape[1]
    data = {}
    for m, A in B.data.items():
        out = np.zeros((B.rows, B.cols, npts), dtype=complex)
        for idx in np.ndindex(B.rows, B.cols):
            e = A[idx]
            if isinstance(e, ChartExpr):
                if not e.is_zero():
                    out[idx] = e.evaluate(z)
            elif e != 0:
                out[idx] = complex(e)
        data[m] = out
    return FormMatrix(B.n, B.rows, B.cols, data)


def _pf(A: np.ndarray) -> np.ndarray:
    """points-last (r, c, p) -> points-first (p, r, c)."""
    return np.moveaxis(A, -1, 0)


def _pl(A: np.ndarray) -> np.ndarray:
    return np.moveaxis(A, 0, -1)


def _H(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def _phi_op(X: np.ndarray) -> np.ndarray:
    """Strict lower part plus half the diagonal (the Cholesky variation map)."""
    out = np.tril(X, -1)
    d = np.einsum("...ii->...i", X)
    idx = np.arange(X.shape[-1])
    out[..., idx, idx] = 0.5 * d
    return out


def _pinv_full(P: np.ndarray, rank: int) -> np.ndarray:
    a, b = P.shape[-2:]
    if rank == a and a <= b:
        return _H(P) @ np.linalg.inv(P @ _H(P))
    if rank == b and b <= a:
        return np.linalg.inv(_H(P) @ P) @ _H(P)
    return np.linalg.pinv(P, rcond=RANK_TAU)


class FrameBatch:
    """Cached numerical data of a complex at a batch of points ``z`` (shape ``(n, npts)``)."""

    def __init__(self, spec: ComplexSpec, conn: ConnectionData, z: np.ndarray):
        self.spec, self.conn = spec, conn
        self.z = np.asarray(z, dtype=complex)
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        self.n = spec.n
        self.npts = self.z.shape[1]
        self.levels = spec.ranks
        self._sigma: dict = {}

    # --- basic evaluations ------------------------------------------------
    @cached_property
    def phi(self) -> list:
        out = [None]
        for k in range(1, self.spec.N + 1):
            out.append(self.spec.phi[k].evaluate(self.z))
        return out

    @cached_property
    def dphi_i(self) -> list:
        out = [None]
        for k in range(1, self.spec.N + 1):
            out.append([m.evaluate(self.z) for m in self.spec.dphi[k]])
        return out

    def dphi(self, k: int) -> FormMatrix:
        a, b = self.levels[k - 1], self.levels[k]
        return FormMatrix(self.n, a, b, {1 << i: A for i, A in enumerate(self.dphi_i[k])})

    @cached_property
    def h(self) -> list:
        return [self.spec.h[k].evaluate(self.z) for k in range(self.spec.N + 1)]

    @cached_property
    def dh(self) -> list:
        return [
            ([m.evaluate(self.z) for m in hol], [m.evaluate(self.z) for m in anti]) for hol, anti in self.spec.dh
        ]

    @cached_property
    def theta(self) -> list:
        return [eval_form_matrix(f, self.z) for f in self.conn.forms]

    @cached_property
    def Theta(self) -> list:
        return [eval_form_matrix(f, self.z) for f in self.conn.curvatures]

    @cached_property
    def dtheta(self) -> list:
        return [eval_form_matrix(f, self.z) for f in self.conn.dtheta]

    @cached_property
    def M(self) -> list:
        """Ordinary coefficient matrix of ``D phi_k`` (1-forms)."""
        out = [None]
        for k in range(1, self.spec.N + 1):
            P = FormMatrix(self.n, self.levels[k - 1], self.levels[k], {0: self.phi[k]})
            out.append(self.dphi(k) + self.theta[k - 1].matmul(P) - P.matmul(self.theta[k]))
        return out

    @cached_property
    def dM(self) -> list:
        """``d(D phi_k) = dtheta_{k-1} phi - theta_{k-1} ^ dphi - dphi ^ theta_k - phi dtheta_k``."""
        out = [None]
        for k in range(1, self.spec.N + 1):
            P = FormMatrix(self.n, self.levels[k - 1], self.levels[k], {0: self.phi[k]})
            dP = self.dphi(k)
            out.append(
                self.dtheta[k - 1].matmul(P)
                - self.theta[k - 1].matmul(dP)
                - dP.matmul(self.theta[k])
                - P.matmul(self.dtheta[k])
            )
        return out

    # --- minimal inverses ---------------------------------------------------
    def ranks_at(self, k: int) -> np.ndarray:
        P = _pf(self.metric_phi(k)[0])
        if P.shape[-1] == 0 or P.shape[-2] == 0:
            return np.zeros(self.npts, dtype=int)
        s = np.linalg.svd(P, compute_uv=False)
        return np.sum(s > RANK_TAU * np.maximum(s[..., :1], 1e-300), axis=-1) * (s[..., 0] > 0)

    @cached_property
    def _chol(self) -> list:
        """Per level: (G, G^{-1}, del_i G, delbar_i G) with ``h = G^H G``, points first."""
        out = []
        for k in range(self.spec.N + 1):
            r = self.levels[k]
            if r == 0:
                out.append(None)
                continue
            H = _pf(self.h[k])
            L = np.linalg.cholesky(H)
            Linv = np.linalg.inv(L)
            dL, dbL = [], []
            hol, anti = self.dh[k]
            for i in range(self.n):
                dL.append(L @ _phi_op(Linv @ _pf(hol[i]) @ _H(Linv)))
                dbL.append(L @ _phi_op(Linv @ _pf(anti[i]) @ _H(Linv)))
            G = _H(L)
            Ginv = _H(Linv)
            dG = [_H(dbL[i]) for i in range(self.n)]  # del_i (L^H) = (delbar_i L)^H
            dbG = [_H(dL[i]) for i in range(self.n)]
            out.append((G, Ginv, dG, dbG))
        return out

    def metric_phi(self, k: int):
        """``phi' = G_{k-1} phi_k G_k^{-1}`` (points last) and its derivatives (points first)."""
        G0, G0i, dG0, dbG0 = self._chol[k - 1]
        G1, G1i, dG1, dbG1 = self._chol[k]
        P = _pf(self.phi[k])
        Pp = G0 @ P @ G1i
        dPp, dbPp = [], []
        for i in range(self.n):
            dG1i = -G1i @ dG1[i] @ G1i
            dbG1i = -G1i @ dbG1[i] @ G1i
            dPp.append(dG0[i] @ P @ G1i + G0 @ _pf(self.dphi_i[k][i]) @ G1i + G0 @ P @ dG1i)
            dbPp.append(dbG0[i] @ P @ G1i + G0 @ P @ dbG1i)
        return _pl(Pp), dPp, dbPp

    def sigma_data(self, k: int, mask: np.ndarray | None = None):
        """``(sigma_k, [del_i sigma_k], [delbar_i sigma_k])`` points last; zero outside ``mask``."""
        key = (k, None if mask is None else mask.tobytes())
        if key in self._sigma:
            return self._sigma[key]
        a, b = self.levels[k - 1], self.levels[k]
        full = np.ones(self.npts, dtype=bool) if mask is None else mask
        sig = np.zeros((b, a, self.npts), dtype=complex)
        dsig = [np.zeros((b, a, self.npts), dtype=complex) for _ in range(self.n)]
        dbsig = [np.zeros((b, a, self.npts), dtype=complex) for _ in range(self.n)]
        if full.any() and a and b:
            sub = FrameBatch(self.spec, self.conn, self.z[:, full]) if mask is not None else self
            s, ds, dbs = sub._sigma_core(k)
            sig[:, :, full] = s
            for i in range(self.n):
                dsig[i][:, :, full] = ds[i]
                dbsig[i][:, :, full] = dbs[i]
        out = (sig, dsig, dbsig)
        self._sigma[key] = out
        return out

    def _sigma_core(self, k: int):
        Pp_l, dPp, dbPp = self.metric_phi(k)
        Pp = _pf(Pp_l)
        rank = self.spec.generic_ranks[k]
        if rank == 0:
            b, a = self.levels[k], self.levels[k - 1]
            z = np.zeros((b, a, self.npts), dtype=complex)
            return z, [z] * self.n, [z] * self.n
        s = np.linalg.svd(Pp, compute_uv=False)
        rk = np.sum(s > RANK_TAU * s[..., :1], axis=-1)
        if np.any(rk != rank) or np.any(s[..., 0] == 0):
            raise RankDropError(f"phi_{k} drops rank at {int(np.sum(rk != rank))} point(s)")
        Sp = _pinv_full(Pp, rank)
        a, b = Pp.shape[-2:]
        Ia, Ib = np.eye(a), np.eye(b)
        PS = Ia - Pp @ Sp
        SP = Ib - Sp @ Pp
        SSH = Sp @ _H(Sp)
        SHS = _H(Sp) @ Sp
        G0, G0i, dG0, dbG0 = self._chol[k - 1]
        G1, G1i, dG1, dbG1 = self._chol[k]
        sig = G1i @ Sp @ G0
        dsig, dbsig = [], []
        for i in range(self.n):
            dS = -Sp @ dPp[i] @ Sp + SSH @ _H(dbPp[i]) @ PS + SP @ _H(dbPp[i]) @ SHS
            dbS = -Sp @ dbPp[i] @ Sp + SSH @ _H(dPp[i]) @ PS + SP @ _H(dPp[i]) @ SHS
            dG1i = -G1i @ dG1[i] @ G1i
            dbG1i = -G1i @ dbG1[i] @ G1i
            dsig.append(_pl(dG1i @ Sp @ G0 + G1i @ dS @ G0 + G1i @ Sp @ dG0[i]))
            dbsig.append(_pl(dbG1i @ Sp @ G0 + G1i @ dbS @ G0 + G1i @ Sp @ dbG0[i]))
        return _pl(sig), dsig, dbsig

    def sigma(self, k: int, mask=None) -> FormMatrix:
        s = self.sigma_data(k, mask)[0]
        return FormMatrix(self.n, self.levels[k], self.levels[k - 1], {0: s})

    def dsigma(self, k: int, mask=None, part: str = "d") -> FormMatrix:
        """``d sigma``, ``del sigma`` (part='hol') or ``delbar sigma`` (part='anti')."""
        _, ds, dbs = self.sigma_data(k, mask)
        data = {}
        if part in ("d", "hol"):
            data.update({1 << i: ds[i] for i in range(self.n)})
        if part in ("d", "anti"):
            data.update({1 << (self.n + i): dbs[i] for i in range(self.n)})
        return FormMatrix(self.n, self.levels[k], self.levels[k - 1], data)

    # --- super-algebra views ----------------------------------------------
    def theta_endo(self, theta: Sequence[FormMatrix] | None = None) -> EndoFormValue:
        th = self.theta if theta is None else theta
        return endo_from_levels(self.n, self.levels, th)

    def phi_endo(self) -> EndoFormValue:
        blocks = {}
        for k in range(1, self.spec.N + 1):
            blocks[(k - 1, k)] = FormMatrix(self.n, self.levels[k - 1], self.levels[k], {0: self.phi[k]})
        return EndoFormValue(self.n, self.levels, blocks)

    def dphi_endo(self) -> EndoFormValue:
        return EndoFormValue(self.n, self.levels, {(k - 1, k): self.dphi(k) for k in range(1, self.spec.N + 1)})

    def Dphi_endo(self) -> EndoFormValue:
        return EndoFormValue(self.n, self.levels, {(k - 1, k): self.M[k] for k in range(1, self.spec.N + 1)})

    def sigma_endo(self, mask=None) -> EndoFormValue:
        return EndoFormValue(self.n, self.levels, {(k, k - 1): self.sigma(k, mask) for k in range(1, self.spec.N + 1)})

    def dbar_sigma_endo(self, mask=None) -> EndoFormValue:
        return EndoFormValue(
            self.n, self.levels, {(k, k - 1): self.dsigma(k, mask, "anti") for k in range(1, self.spec.N + 1)}
        )


class PointFrame(FrameBatch):
    """Frame at a single point."""

    def __init__(self, spec: ComplexSpec, conn: ConnectionData, point: Sequence[complex]):
        super().__init__(spec, conn, np.asarray(point, dtype=complex).reshape(spec.n, 1))


def minimal_inverse(k: int, frame: FrameBatch) -> np.ndarray:
    """Metric Moore-Penrose inverse of ``phi_k``, shape ``(r_k, r_{k-1}, npts)``."""
    return frame.sigma_data(k)[0]


def minimal_inverse_derivatives(k: int, frame: FrameBatch):
    """``([del_i sigma_k], [delbar_i sigma_k])`` for i = 1..n."""
    _, ds, dbs = frame.sigma_data(k)
    return ds, dbs


def _scale_points(B: FormMatrix, c: np.ndarray) -> FormMatrix:
    return B.scale(c)


def regularized_connection(frame: FrameBatch, chi: np.ndarray, active: np.ndarray | None = None) -> list:
    """``theta_hat_k = theta_k - chi sigma_k D phi_k`` (super product), per level."""
    out = [frame.theta[0]]
    for k in range(1, frame.spec.N + 1):
        sM = frame.sigma(k, active).matmul(frame.M[k])
        out.append(frame.theta[k] + sM.scale(chi))
    return out


def regularized_curvature(frame: FrameBatch, chi: np.ndarray, dchi: FormValue, active: np.ndarray | None = None) -> list:
    """Curvature of the regularized connection, level by level.

    ``Theta_hat = Theta + dchi ^ sM + chi (dsigma ^ M + sigma dM + theta sM + sM theta) + chi^2 sM sM``
    with ``sM = sigma_k (D phi_k)`` as ordinary matrices.
    """
    out = [frame.Theta[0]]
    for k in range(1, frame.spec.N + 1):
        S = frame.sigma(k, active)
        dS = frame.dsigma(k, active)
        sM = S.matmul(frame.M[k])
        lin = dS.matmul(frame.M[k]) + S.matmul(frame.dM[k]) + frame.theta[k].matmul(sM) + sM.matmul(frame.theta[k])
        Th = frame.Theta[k] + sM.wedge_scalar(dchi) + lin.scale(chi) + sM.matmul(sM).scale(chi * chi)
        out.append(Th)
    return out


def compatible_connection(frame: FrameBatch) -> list:
    """``theta_tilde_k = theta_k - sigma_k D phi_k`` (super product); needs points off Z."""
    return regularized_connection(frame, np.ones(frame.npts))


def compatible_curvature(frame: FrameBatch) -> list:
    return regularized_curvature(frame, np.ones(frame.npts), FormValue(frame.n))
