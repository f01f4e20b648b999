"""Characteristic forms: Chern forms of curvature blocks, total Chern forms of graded
complexes, power sums, Chern characters and the Newton conversion tables.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .gaussrat import QI
from .superforms import FormMatrix, FormValue, popcount, wedge

__all__ = [
    "WPoly",
    "wp_str",
    "wp_eval",
    "wp_subs",
    "newton_exact_check",
    "roundtrip_exact",
    "FormSeries",
    "NewtonTable",
    "newton_table",
    "level_chern_form",
    "invert_series",
    "total_chern",
    "power_sum",
    "chern_character",
    "c_to_ch",
    "ch_to_c",
    "log_series",
    "exp_series",
    "CHERN_FACTOR",
]

CHERN_FACTOR = 1j / (2 * math.pi)

# ---------------------------------------------------------------------------
# weighted polynomials in t_1, t_2, ... with rational coefficients
# ---------------------------------------------------------------------------

WPoly = dict  # exponent tuple (e_1, ..., e_L) -> Fraction, trailing zeros stripped


def _strip(e: tuple) -> tuple:
    e = list(e)
    while e and e[-1] == 0:
        e.pop()
    return tuple(e)


def wp_var(j: int) -> WPoly:
    return {tuple([0] * (j - 1) + [1]): Fraction(1)}


def wp_const(c) -> WPoly:
    return {(): Fraction(c)} if c else {}


def wp_add(a: WPoly, b: WPoly, s=1) -> WPoly:
    out = dict(a)
    for e, c in b.items():
        v = out.get(e, 0) + s * c
        if v:
            out[e] = v
        else:
            out.pop(e, None)
    return out


def wp_scale(a: WPoly, c) -> WPoly:
    c = Fraction(c)
    return {e: v * c for e, v in a.items()} if c else {}


def wp_mul(a: WPoly, b: WPoly) -> WPoly:
    out: dict = {}
    for e1, c1 in a.items():
        for e2, c2 in b.items():
            L = max(len(e1), len(e2))
            e = _strip(tuple((e1[i] if i < len(e1) else 0) + (e2[i] if i < len(e2) else 0) for i in range(L)))
            v = out.get(e, 0) + c1 * c2
            if v:
                out[e] = v
            else:
                out.pop(e, None)
    return out


def wp_weight(e: tuple) -> int:
    return sum((i + 1) * k for i, k in enumerate(e))


def wp_is_homogeneous(a: WPoly, deg: int) -> bool:
    return all(wp_weight(e) == deg for e in a)


def wp_subs(a: WPoly, vals: Sequence[WPoly]) -> WPoly:
    """Substitute ``t_j -> vals[j-1]``."""
    out: WPoly = {}
    for e, c in a.items():
        t = wp_const(c)
        for j, k in enumerate(e):
            for _ in range(k):
                t = wp_mul(t, vals[j])
        out = wp_add(out, t)
    return out


def wp_eval(a: WPoly, vals: Sequence):
    """Evaluate at values supporting ``+``, ``*`` (ints, Fractions, numpy object arrays)."""
    total = 0
    for e, c in a.items():
        t = c
        for j, k in enumerate(e):
            if k:
                t = t * vals[j] ** k
        total = total + t
    return total


def wp_str(a: WPoly, var: str = "t") -> str:
    if not a:
        return "0"
    parts = []
    for e in sorted(a, key=lambda e: tuple(reversed(e)), reverse=True):
        c = a[e]
        mono = "*".join(
            f"{var}{j + 1}" if k == 1 else f"{var}{j + 1}^{k}" for j, k in enumerate(e) if k
        )
        neg = c < 0
        ac = -c if neg else c
        body = mono if (ac == 1 and mono) else (f"{ac}*{mono}" if mono else f"{ac}")
        parts.append(("-" if neg else "+", body))
    s = ("-" if parts[0][0] == "-" else "") + parts[0][1]
    for sign, body in parts[1:]:
        s += f" {sign} {body}"
    return s


@dataclass(frozen=True)
class NewtonTable:
    """``Q[l]``: p_l in terms of e_1..e_l; ``Qt[l]``: ch_l = (-1)^(l-1)/(l-1)! c_l + Qt_l(c);
    ``Qh[l]``: c_l = (-1)^(l-1) (l-1)! ch_l + Qh_l(ch)."""

    L: int
    Q: tuple
    Qt: tuple
    Qh: tuple


@lru_cache(maxsize=None)
def newton_table(L: int) -> NewtonTable:
    if L < 1:
        raise ValueError("L must be at least 1")
    Q: list[WPoly] = [{}]
    for l in range(1, L + 1):
        p = wp_scale(wp_var(l), (-1) ** (l - 1) * l)
        for i in range(1, l):
            p = wp_add(p, wp_scale(wp_mul(wp_var(l - i), Q[i]), (-1) ** (l - i - 1)))
        Q.append(p)
    Qt: list[WPoly] = [{}]
    for l in range(1, L + 1):
        lead = wp_scale(wp_var(l), Fraction((-1) ** (l - 1), math.factorial(l - 1)))
        Qt.append(wp_add(wp_scale(Q[l], Fraction(1, math.factorial(l))), lead, -1))
    # triangular back-substitution: c_j expressed through ch_1..ch_j
    c_in_ch: list[WPoly] = [{}]
    Qh: list[WPoly] = [{}]
    for l in range(1, L + 1):
        rest = wp_subs(Qt[l], c_in_ch[1:]) if Qt[l] else {}
        k = Fraction((-1) ** (l - 1), math.factorial(l - 1))
        # ch_l = k c_l + rest(ch)  =>  c_l = ch_l / k - rest / k
        qh = wp_scale(rest, -1 / k)
        Qh.append(qh)
        c_in_ch.append(wp_add(wp_scale(wp_var(l), 1 / k), qh))
    return NewtonTable(L, tuple(Q), tuple(Qt), tuple(Qh))


def newton_exact_check(L: int = 8, nvars: int = 8, grid: int = 4) -> bool:
    """Verify p_l = Q_l(e_1..e_l) for l <= L in ``nvars`` variables exactly.

    Both sides are symmetric with degree at most L in each variable, so it suffices that
    the difference vanishes on every multiset drawn from a grid of L + 1 integers.
    """
    if 2 * grid + 1 < L + 1:
        raise ValueError("grid too small for an exact certificate")
    tab = newton_table(L)
    pts = np.array(list(itertools.combinations_with_replacement(range(-grid, grid + 1), nvars)), dtype=np.int64)
    x = pts.T
    e = [np.ones(len(pts), dtype=np.int64)] + [np.zeros(len(pts), dtype=np.int64) for _ in range(nvars)]
    for xi in x:
        for j in range(nvars, 0, -1):
            e[j] = e[j] + e[j - 1] * xi
    emax = [float(np.abs(v).max()) for v in e]
    for l in range(1, L + 1):
        q = tab.Q[l]
        if any(c.denominator != 1 for c in q.values()):
            return False
        # int64 is exact as long as every term stays far below 2**63
        bound = sum(abs(float(c)) * math.prod(emax[j + 1] ** k for j, k in enumerate(ex)) for ex, c in q.items())
        if bound >= 2.0**62:
            raise OverflowError("grid too large for int64 certificate")
        p = sum(xi**l for xi in x)
        val = np.zeros(len(pts), dtype=np.int64)
        for ex, c in q.items():
            t = np.full(len(pts), int(c), dtype=np.int64)
            for j, k in enumerate(ex):
                if k:
                    t = t * e[j + 1] ** k
            val = val + t
        if not np.array_equal(p, val):
            return False
    return True


def roundtrip_exact(L: int = 8) -> bool:
    """c -> ch -> c and ch -> c -> ch are the identity as weighted polynomials through degree L."""
    tab = newton_table(L)
    ch_of_c = [
        wp_add(tab.Qt[l], wp_scale(wp_var(l), Fraction((-1) ** (l - 1), math.factorial(l - 1)))) for l in range(1, L + 1)
    ]
    c_of_ch = [
        wp_add(tab.Qh[l], wp_scale(wp_var(l), (-1) ** (l - 1) * math.factorial(l - 1))) for l in range(1, L + 1)
    ]
    for l in range(1, L + 1):
        if wp_subs(c_of_ch[l - 1], ch_of_c) != wp_var(l):
            return False
        if wp_subs(ch_of_c[l - 1], c_of_ch) != wp_var(l):
            return False
    return True


# ---------------------------------------------------------------------------
# form series
# ---------------------------------------------------------------------------


def _is_exact_scalar(v) -> bool:
    if isinstance(v, np.ndarray):
        return v.dtype == object
    return not isinstance(v, (complex, float))


def _cast(c, like_exact: bool):
    if like_exact:
        return QI.coerce(Fraction(c)) if not isinstance(c, QI) else c
    return complex(c)


class FormSeries:
    """Graded form ``s_0 + s_1 + ... + s_n`` with ``s_l`` of degree 2l."""

    __slots__ = ("n", "comps")

    def __init__(self, n: int, comps: Sequence[FormValue]):
        comps = list(comps)[: n + 1]
        while len(comps) < n + 1:
            comps.append(FormValue(n))
        for l, c in enumerate(comps):
            bad = [m for m in c.data if popcount(m) != 2 * l]
            if bad:
                raise ValueError(f"component {l} is not of degree {2 * l}")
        self.n = n
        self.comps = tuple(comps)

    @classmethod
    def one(cls, n: int, one=1) -> "FormSeries":
        return cls(n, [FormValue.scalar(n, one)])

    def __getitem__(self, l: int) -> FormValue:
        return self.comps[l] if 0 <= l <= self.n else FormValue(self.n)

    @property
    def unit(self) -> bool:
        c0 = self.comps[0].data.get(0, 0)
        if set(self.comps[0].data) - {0}:
            return False
        return bool(np.all(np.asarray(c0 == 1)))

    @property
    def exact(self) -> bool:
        """False as soon as any coefficient is a float; plain integers are neutral."""
        for c in self.comps:
            for v in c.data.values():
                if isinstance(v, int):
                    continue
                if not _is_exact_scalar(v):
                    return False
        return True

    def __add__(self, other: "FormSeries") -> "FormSeries":
        return FormSeries(self.n, [a + b for a, b in zip(self.comps, other.comps)])

    def __sub__(self, other):
        return FormSeries(self.n, [a - b for a, b in zip(self.comps, other.comps)])

    def scale(self, c) -> "FormSeries":
        return FormSeries(self.n, [a.scale(c) for a in self.comps])

    def __mul__(self, other: "FormSeries") -> "FormSeries":
        out = []
        for l in range(self.n + 1):
            acc = FormValue(self.n)
            for i in range(l + 1):
                if self.comps[i].data and other.comps[l - i].data:
                    acc = acc + wedge(self.comps[i], other.comps[l - i])
            out.append(acc)
        return FormSeries(self.n, out)

    def positive_part(self) -> "FormSeries":
        return FormSeries(self.n, [FormValue(self.n)] + list(self.comps[1:]))

    def __eq__(self, other):
        if not isinstance(other, FormSeries):
            return NotImplemented
        return all(a == b for a, b in zip(self.comps, other.comps))

    def __repr__(self):
        return f"FormSeries({list(self.comps)})"


def _forms_of_matrix(A: FormMatrix) -> list[list[FormValue]]:
    return [[A.entry(i, j) for j in range(A.cols)] for i in range(A.rows)]


def _leibniz_det(M: list[list[FormValue]], n: int) -> FormValue:
    r = len(M)
    out = FormValue(n)
    for perm in itertools.permutations(range(r)):
        inv = sum(1 for a in range(r) for b in range(a + 1, r) if perm[a] > perm[b])
        t = None
        for i, j in enumerate(perm):
            f = M[i][j]
            if f.is_zero():
                t = None
                break
            t = f if t is None else wedge(t, f)
        if t is None:
            continue
        out = out + t if inv % 2 == 0 else out - t
    return out


def _check_even(A: FormMatrix):
    if any(popcount(m) % 2 for m in A.data):
        raise ValueError("determinant expansion needs even-degree entries")


def level_chern_form(theta: FormMatrix, rank: int | None = None, factor=CHERN_FACTOR, method: str = "auto") -> FormSeries:
    """Components of ``det(I + factor * Theta * t)``.

    ``method='leibniz'`` sums principal minors; ``method='newton'`` goes through power
    sums ``tr A^j`` and the Newton recursion.
    """
    n = theta.n
    r = theta.rows if rank is None else rank
    if (theta.rows, theta.cols) != (r, r):
        raise ValueError("curvature block must be square of the declared rank")
    _check_even(theta)
    A = theta.scale(factor) if factor != 1 else theta
    if method == "auto":
        method = "leibniz" if r <= 4 else "newton"
    sample = next((v for v in A.data.values()), None)
    exact = sample is None or sample.dtype == object
    one = QI(1) if sample is not None and exact else 1
    if sample is not None and sample.ndim > 2:
        one = np.ones(sample.shape[2:], dtype=complex)
    comps = [FormValue.scalar(n, one)]
    if method == "leibniz":
        M = _forms_of_matrix(A)
        for l in range(1, min(r, n) + 1):
            acc = FormValue(n)
            for S in itertools.combinations(range(r), l):
                acc = acc + _leibniz_det([[M[i][j] for j in S] for i in S], n)
            comps.append(acc)
    elif method == "newton":
        p = [None]
        P = A
        for j in range(1, n + 1):
            p.append(P.trace())
            P = P.matmul(A)
        e = [comps[0]]
        for l in range(1, min(r, n) + 1):
            acc = FormValue(n)
            for j in range(1, l + 1):
                t = wedge(e[l - j], p[j])
                acc = acc + t if j % 2 == 1 else acc - t
            e.append(acc.scale(_cast(Fraction(1, l), exact)))
        comps = e
    else:
        raise ValueError(f"unknown method {method!r}")
    return FormSeries(n, comps)


def invert_series(s: FormSeries) -> FormSeries:
    """Inverse of a unit series as a terminating geometric series."""
    if not s.unit:
        raise ValueError("series is not a unit (degree-0 part must be 1)")
    x = s.positive_part()
    one = FormSeries(s.n, [s.comps[0]])
    out = one
    power = one
    for k in range(1, s.n + 1):
        power = power * x
        out = out - power if k % 2 else out + power
    return out


def total_chern(curvatures: Sequence[FormMatrix], ranks: Sequence[int] | None = None, factor=CHERN_FACTOR, method="auto") -> FormSeries:
    """``prod_k c(E_k, D_k)^((-1)^k)``."""
    if not curvatures:
        raise ValueError("empty complex")
    n = curvatures[0].n
    out = None
    for k, th in enumerate(curvatures):
        r = th.rows if ranks is None else ranks[k]
        c = level_chern_form(th, r, factor, method)
        if k % 2:
            c = invert_series(c)
        out = c if out is None else out * c
    return out


def power_sum(curvatures: Sequence[FormMatrix], l: int, bidegree11: bool = False) -> FormValue:
    """``sum_k (-1)^k tr Theta_k^l``; with ``bidegree11`` the (1,1) parts are used."""
    if l < 1:
        raise ValueError("l must be positive")
    n = curvatures[0].n
    out = FormValue(n)
    for k, th in enumerate(curvatures):
        A = th.project(1, 1) if bidegree11 else th
        if A.rows == 0:
            continue
        P = A
        for _ in range(l - 1):
            P = P.matmul(A)
        t = P.trace()
        out = out + t if k % 2 == 0 else out - t
    return out


def chern_character(curvatures: Sequence[FormMatrix], l: int, bidegree11: bool = False) -> FormValue:
    """``ch_l = i^l / ((2 pi)^l l!) p_l``."""
    return power_sum(curvatures, l, bidegree11).scale((1j) ** l / ((2 * math.pi) ** l * math.factorial(l)))


def _eval_series_poly(poly: WPoly, args: Sequence[FormValue], n: int, exact: bool) -> FormValue:
    out = FormValue(n)
    for e, c in poly.items():
        t = None
        for j, k in enumerate(e):
            for _ in range(k):
                t = args[j] if t is None else wedge(t, args[j])
        if t is None:
            raise ValueError("constant term in a conversion polynomial")
        out = out + t.scale(_cast(c, exact))
    return out


def c_to_ch(s: FormSeries, L: int | None = None) -> list[FormValue]:
    """Chern character components ``[ch_0 placeholder, ch_1, ..., ch_L]`` from a total Chern series."""
    if not s.unit:
        raise ValueError("series is not a unit")
    L = s.n if L is None else min(L, s.n)
    tab = newton_table(max(L, 1))
    exact = s.exact
    out = [FormValue(s.n)]
    for l in range(1, L + 1):
        lead = s[l].scale(_cast(Fraction((-1) ** (l - 1), math.factorial(l - 1)), exact))
        out.append(lead + _eval_series_poly(tab.Qt[l], s.comps[1:], s.n, exact) if tab.Qt[l] else lead)
    return out


def ch_to_c(ch: Sequence[FormValue], n: int, exact: bool = True) -> FormSeries:
    """Total Chern series from ``[_, ch_1, ..., ch_L]``."""
    L = min(len(ch) - 1, n)
    tab = newton_table(max(L, 1))
    comps = [FormValue.scalar(n, QI(1) if exact else 1)]
    for l in range(1, L + 1):
        lead = ch[l].scale(_cast((-1) ** (l - 1) * math.factorial(l - 1), exact))
        comps.append(lead + _eval_series_poly(tab.Qh[l], ch[1:], n, exact) if tab.Qh[l] else lead)
    return FormSeries(n, comps)


def log_series(s: FormSeries) -> FormSeries:
    """Formal ``ln s`` of a unit series (degree-0 part 0)."""
    if not s.unit:
        raise ValueError("series is not a unit")
    exact = s.exact
    x = s.positive_part()
    out = FormSeries(s.n, [])
    power = FormSeries(s.n, [s.comps[0]])
    for k in range(1, s.n + 1):
        power = power * x
        out = out + power.scale(_cast(Fraction((-1) ** (k - 1), k), exact))
    return out


def exp_series(x: FormSeries, exact: bool = True) -> FormSeries:
    """Formal ``exp x`` for a series with vanishing degree-0 part."""
    if x.comps[0].data:
        raise ValueError("exp needs a nilpotent series")
    one = FormSeries.one(x.n, QI(1) if exact else 1)
    out = one
    power = one
    for k in range(1, x.n + 1):
        power = power * x
        out = out + power.scale(_cast(Fraction(1, math.factorial(k)), exact))
    return out
