"""Exact rational expressions in chart coordinates z_1..z_n and their conjugates.

A :class:`ChartExpr` is ``numerator / prod(factor_i ** e_i)`` where the numerator and every
denominator factor are sparse polynomials over Q(i) in the 2n formal variables
``(z_1..z_n, zbar_1..zbar_n)``.  Denominator factors are kept monic, with monomial parts split
into single-variable factors; after every operation the numerator is trial-divided by each
factor.  No multivariate gcd is attempted.

Numerical evaluation works on points-last arrays: a batch of points is an ``(n, npts)``
complex array.
"""

from __future__ import annotations

import re
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import threading

import numpy as np

from .gaussrat import QI

__all__ = [
    "Poly",
    "ChartExpr",
    "ExprMatrix",
    "PoleError",
    "ParseError",
    "default_names",
    "parse_expr",
    "transition",
    "chart_variables",
]


class PoleError(ZeroDivisionError):
    """Raised when an expression is evaluated where its denominator vanishes."""


class ParseError(ValueError):
    def __init__(self, msg: str, text: str, pos: int):
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{msg} at line {line}, column {col}: {text!r}")
        self.line, self.column = line, col


def default_names(n: int) -> tuple[str, ...]:
    if n == 1:
        return ("z",)
    if n == 2:
        return ("x", "y")
    return tuple(f"z{i + 1}" for i in range(n))


# ---------------------------------------------------------------------------
# sparse polynomials
# ---------------------------------------------------------------------------


class Poly:
    """Sparse polynomial over Q(i) in 2n variables (holomorphic block first)."""

    __slots__ = ("n", "terms", "_key")

    def __init__(self, n: int, terms: Mapping[tuple, QI] | None = None):
        self.n = n
        clean = {}
        if terms:
            for e, c in terms.items():
                c = QI.coerce(c)
                if c:
                    if len(e) != 2 * n:
                        raise ValueError("exponent length mismatch")
                    clean[tuple(e)] = c
        self.terms = clean
        self._key = None

    @classmethod
    def const(cls, n: int, c) -> "Poly":
        return cls(n, {(0,) * (2 * n): QI.coerce(c)})

    @classmethod
    def var(cls, n: int, v: int) -> "Poly":
        e = [0] * (2 * n)
        e[v] = 1
        return cls(n, {tuple(e): QI(1)})

    def key(self):
        if self._key is None:
            self._key = tuple(sorted((e, c.re, c.im) for e, c in self.terms.items()))
        return self._key

    def __eq__(self, other):
        return isinstance(other, Poly) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash(self.key())

    def is_zero(self) -> bool:
        return not self.terms

    def is_const(self) -> bool:
        return all(not any(e) for e in self.terms)

    def const_value(self) -> QI:
        return self.terms.get((0,) * (2 * self.n), QI(0))

    def __add__(self, other: "Poly") -> "Poly":
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, QI(0)) + c
        return Poly(self.n, out)

    def __neg__(self) -> "Poly":
        return Poly(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def __mul__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            c = QI.coerce(other)
            return Poly(self.n, {e: c * v for e, v in self.terms.items()})
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, QI(0)) + c1 * c2
        return Poly(self.n, out)

    def __pow__(self, k: int) -> "Poly":
        out = Poly.const(self.n, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def partial(self, v: int) -> "Poly":
        out = {}
        for e, c in self.terms.items():
            if e[v]:
                e2 = list(e)
                e2[v] -= 1
                out[tuple(e2)] = c * e[v]
        return Poly(self.n, out)

    def conj(self) -> "Poly":
        n = self.n
        return Poly(n, {e[n:] + e[:n]: c.conjugate() for e, c in self.terms.items()})

    def lead(self):
        e = max(self.terms)
        return e, self.terms[e]

    def degree(self, vars_: Iterable[int] | None = None) -> int:
        if not self.terms:
            return 0
        idx = range(2 * self.n) if vars_ is None else list(vars_)
        return max(sum(e[i] for i in idx) for e in self.terms)

    def monomial_gcd(self) -> tuple:
        es = list(self.terms)
        return tuple(min(col) for col in zip(*es))

    def divexact(self, g: "Poly") -> "Poly | None":
        """Exact quotient ``self / g`` or ``None`` when g does not divide self."""
        if g.is_zero():
            raise ZeroDivisionError
        ge, gc = g.lead()
        rem = dict(self.terms)
        q: dict = {}
        while rem:
            re_, rc = max(rem.items(), key=lambda t: t[0])
            diff = tuple(a - b for a, b in zip(re_, ge))
            if any(d < 0 for d in diff):
                return None
            t = rc / gc
            q[diff] = t
            for e, c in g.terms.items():
                ee = tuple(a + b for a, b in zip(e, diff))
                v = rem.get(ee, QI(0)) - t * c
                if v:
                    rem[ee] = v
                else:
                    rem.pop(ee, None)
        return Poly(self.n, q)

    def perfect_root(self, e: int) -> "Poly | None":
        """Monic ``g`` with ``g**e == self`` for a monic polynomial, else ``None``."""
        if self.is_zero() or e < 2:
            return None
        le, lc = self.lead()
        if lc != 1 or any(k % e for k in le):
            return None
        g_lead = tuple(k // e for k in le)
        g = {g_lead: QI(1)}
        denom_e = tuple(k * (e - 1) for k in g_lead)
        for _ in range(len(self.terms) + 2):
            gp = Poly(self.n, g)
            r = self - gp ** e
            if r.is_zero():
                return gp
            re_, rc = r.lead()
            if re_ >= le:
                return None
            diff = tuple(a - b for a, b in zip(re_, denom_e))
            if any(d < 0 for d in diff) or diff >= g_lead or diff in g:
                return None
            g[diff] = rc / e
        return None

    def eval_exact(self, vals: Sequence) -> QI:
        total = QI(0)
        for e, c in self.terms.items():
            t = c
            for v, k in zip(vals, e):
                if k:
                    t = t * v ** k
            total = total + t
        return total

    def to_str(self, names: Sequence[str]) -> str:
        return _poly_str(self, names)


def _mono_str(e: tuple, names: Sequence[str]) -> str:
    n = len(names)
    parts = []
    for v, k in enumerate(e):
        if not k:
            continue
        nm = names[v] if v < n else f"conj({names[v - n]})"
        parts.append(nm if k == 1 else f"{nm}^{k}")
    return "*".join(parts)


def _coef_str(c: QI) -> str:
    if c.im == 0:
        return str(c.re)
    if c.re == 0:
        return "I" if c.im == 1 else f"{c.im}*I"
    return f"({c.re} + {c.im}*I)" if c.im > 0 else f"({c.re} - {-c.im}*I)"


def _poly_str(p: Poly, names: Sequence[str]) -> str:
    if p.is_zero():
        return "0"
    out = []
    for e in sorted(p.terms, reverse=True):
        c = p.terms[e]
        neg = (c.im == 0 and c.re < 0) or (c.re == 0 and c.im < 0)
        if neg:
            c = -c
        m = _mono_str(e, names)
        if not m:
            body = _coef_str(c)
        elif c == 1:
            body = m
        else:
            body = f"{_coef_str(c)}*{m}"
        if not out:
            out.append(("-" if neg else "") + body)
        else:
            out.append((" - " if neg else " + ") + body)
    return "".join(out)


# ---------------------------------------------------------------------------
# rational expressions
# ---------------------------------------------------------------------------


def _normalize_factor(f: Poly, e: int):
    """Split a denominator factor f**e into (constant, [(monic factor, exp), ...])."""
    n = f.n
    if f.is_zero():
        raise ZeroDivisionError("zero denominator")
    const = QI(1)
    out = []
    g = f.monomial_gcd()
    if any(g):
        shifted = {tuple(a - b for a, b in zip(k, g)): c for k, c in f.terms.items()}
        f = Poly(n, shifted)
        for v, k in enumerate(g):
            if k:
                out.append((Poly.var(n, v), k * e))
    if not f.is_const():
        _, lc = f.lead()
        if lc != 1:
            f = f * (QI(1) / lc)
        const = lc ** e
        deg = f.degree()
        for k in range(deg, 1, -1):
            if deg % k == 0:
                g = f.perfect_root(k)
                if g is not None:
                    f, e = g, e * k
                    break
        out.append((f, e))
    else:
        const = f.const_value() ** e
    return const, out


class ChartExpr:
    """Immutable rational expression in z, zbar with exact coefficients."""

    __slots__ = ("n", "num", "den", "__dict__")

    def __init__(self, n: int, num: Poly, den: Iterable[tuple[Poly, int]] = (), _reduce=True):
        self.n = n
        if _reduce:
            num, den = _reduce_rational(num, list(den))
        self.num = num
        self.den = tuple(den)

    # constructors --------------------------------------------------------
    @classmethod
    def const(cls, n: int, c) -> "ChartExpr":
        return cls(n, Poly.const(n, c), (), _reduce=False)

    @classmethod
    def coord(cls, n: int, i: int, anti: bool = False) -> "ChartExpr":
        return cls(n, Poly.var(n, i + (n if anti else 0)), (), _reduce=False)

    @classmethod
    def from_poly(cls, p: Poly) -> "ChartExpr":
        return cls(p.n, p, (), _reduce=False)

    def _lift(self, other) -> "ChartExpr":
        if isinstance(other, ChartExpr):
            if other.n != self.n:
                raise ValueError("chart dimension mismatch")
            return other
        return ChartExpr.const(self.n, other)

    # structure -----------------------------------------------------------
    def __eq__(self, other):
        if isinstance(other, ChartExpr):
            return self.n == other.n and self.num == other.num and self.den == other.den
        if isinstance(other, (int, QI)):
            return not self.den and self.num == Poly.const(self.n, other)
        return NotImplemented

    def __hash__(self):
        return hash((self.num, self.den))

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def __bool__(self):
        return not self.is_zero()

    def is_polynomial(self) -> bool:
        return not self.den

    def is_holomorphic(self) -> bool:
        n = self.n
        polys = [self.num] + [f for f, _ in self.den]
        return all(not any(e[n:]) for p in polys for e in p.terms)

    def den_poly(self) -> Poly:
        out = Poly.const(self.n, 1)
        for f, e in self.den:
            out = out * f ** e
        return out

    # arithmetic ----------------------------------------------------------
    def __add__(self, other):
        o = self._lift(other)
        if o.is_zero():
            return self
        if self.is_zero():
            return o
        if self.den == o.den:
            return ChartExpr(self.n, self.num + o.num, self.den)
        d1, d2 = dict(self.den), dict(o.den)
        keys = list(dict.fromkeys(list(d1) + list(d2)))
        lcm = {f: max(d1.get(f, 0), d2.get(f, 0)) for f in keys}
        n1, n2 = self.num, o.num
        for f, e in lcm.items():
            if e - d1.get(f, 0):
                n1 = n1 * f ** (e - d1.get(f, 0))
            if e - d2.get(f, 0):
                n2 = n2 * f ** (e - d2.get(f, 0))
        return ChartExpr(self.n, n1 + n2, lcm.items())

    __radd__ = __add__

    def __neg__(self):
        return ChartExpr(self.n, -self.num, self.den, _reduce=False)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, QI)):
            return ChartExpr(self.n, self.num * QI.coerce(other), self.den, _reduce=bool(other) is False)
        o = self._lift(other)
        if self.is_zero() or o.is_zero():
            return ChartExpr.const(self.n, 0)
        d = dict(self.den)
        for f, e in o.den:
            d[f] = d.get(f, 0) + e
        return ChartExpr(self.n, self.num * o.num, d.items())

    __rmul__ = __mul__

    def div_factor(self, f: Poly, e: int = 1) -> "ChartExpr":
        """Divide by ``f**e`` keeping ``f`` as a single syntactic factor."""
        d = dict(self.den)
        if not f.is_const() and len(f.terms) > 1:
            for g in list(d):
                if len(g.terms) < 2:
                    continue
                while not f.is_const():
                    q = f.divexact(g)
                    if q is None:
                        break
                    f = q
                    d[g] += e
        c, facs = _normalize_factor(f, e)
        for g, k in facs:
            d[g] = d.get(g, 0) + k
        return ChartExpr(self.n, self.num * (QI(1) / c), d.items())

    def __truediv__(self, other):
        if isinstance(other, (int, QI)):
            return ChartExpr(self.n, self.num * (QI(1) / QI.coerce(other)), self.den, _reduce=False)
        o = self._lift(other)
        if o.is_zero():
            raise ZeroDivisionError("division by the zero expression")
        out = self * ChartExpr.from_poly(o.den_poly()) if o.den else self
        return out.div_factor(o.num, 1)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k: int):
        if k < 0:
            if self.is_polynomial():
                return ChartExpr.const(self.n, 1).div_factor(self.num, -k)
            return ChartExpr.const(self.n, 1) / (self ** (-k))
        num = self.num ** k
        return ChartExpr(self.n, num, [(f, e * k) for f, e in self.den], _reduce=False)

    # calculus ------------------------------------------------------------
    def partial(self, direction: str, i: int) -> "ChartExpr":
        """Formal derivative in z_i (``'hol'``) or zbar_i (``'anti'``)."""
        if direction not in ("hol", "anti"):
            raise ValueError("direction must be 'hol' or 'anti'")
        if not 0 <= i < self.n:
            raise IndexError("coordinate index out of range")
        v = i + (self.n if direction == "anti" else 0)
        if not self.den:
            return ChartExpr(self.n, self.num.partial(v), (), _reduce=False)
        facs = [f for f, _ in self.den]
        prod_all = Poly.const(self.n, 1)
        for f in facs:
            prod_all = prod_all * f
        num = self.num.partial(v) * prod_all
        for j, (f, e) in enumerate(self.den):
            df = f.partial(v)
            if df.is_zero():
                continue
            others = Poly.const(self.n, 1)
            for k, g in enumerate(facs):
                if k != j:
                    others = others * g
            num = num - self.num * df * others * e
        return ChartExpr(self.n, num, [(f, e + 1) for f, e in self.den])

    def conj(self) -> "ChartExpr":
        out = ChartExpr(self.n, self.num.conj(), (), _reduce=False)
        for f, e in self.den:
            out = out.div_factor(f.conj(), e)
        return out

    def subs(self, mapping: Sequence["ChartExpr"]) -> "ChartExpr":
        """Substitute each of the 2n formal variables by an expression (target dimension may differ)."""
        m = mapping[0].n

        def sub_poly(p: Poly) -> ChartExpr:
            acc = ChartExpr.const(m, 0)
            cache: dict = {}
            for e, c in p.terms.items():
                t = ChartExpr.const(m, c)
                for v, k in enumerate(e):
                    if k:
                        key = (v, k)
                        if key not in cache:
                            cache[key] = mapping[v] ** k
                        t = t * cache[key]
                acc = acc + t
            return acc

        out = sub_poly(self.num)
        for f, e in self.den:
            out = out / (sub_poly(f) ** e)
        return out

    # evaluation ----------------------------------------------------------
    def eval(self, point: Sequence, exact: bool | None = None):
        """Evaluate at a point (holomorphic coordinates). Exact if all coordinates are exact."""
        if len(point) != self.n:
            raise ValueError("point dimension mismatch")
        if exact is None:
            exact = all(isinstance(p, (int, QI)) or hasattr(p, "numerator") for p in point)
        if exact:
            pts = [QI.coerce(p) for p in point]
            vals = pts + [p.conjugate() for p in pts]
            d = QI(1)
            for f, e in self.den:
                d = d * f.eval_exact(vals) ** e
            if d == 0:
                raise PoleError("denominator vanishes at point")
            return self.num.eval_exact(vals) / d
        z = np.asarray(point, dtype=complex).reshape(self.n, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            den = self.compiled.den_values(z)
        if den[0] == 0:
            raise PoleError("denominator vanishes at point")
        return complex(self.compiled.num_values(z)[0] / den[0])

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Vectorized float evaluation; ``z`` has shape ``(n, npts)``."""
        return self.compiled(z)

    @cached_property
    def compiled(self) -> "_Compiled":
        return _Compiled(self)

    # text ----------------------------------------------------------------
    def to_str(self, names: Sequence[str] | None = None) -> str:
        names = names or default_names(self.n)
        s = self.num.to_str(names)
        if not self.den:
            return s
        parts = [f"({s})"]
        for f, e in self.den:
            fs = f.to_str(names)
            parts.append(f"/({fs})" if e == 1 else f"/({fs})^{e}")
        return "".join(parts)

    def __str__(self):
        return self.to_str()

    def __repr__(self):
        return f"ChartExpr({self.to_str()!r})"


def _reduce_rational(num: Poly, den: list):
    if num.is_zero():
        return num, []
    merged: dict = {}
    for f, e in den:
        if e:
            merged[f] = merged.get(f, 0) + e
    out = []
    for f, e in merged.items():
        while e > 0:
            q = num.divexact(f)
            if q is None:
                break
            num = q
            e -= 1
        if e > 0:
            out.append((f, e))
    out.sort(key=lambda t: (t[0].key(), t[1]))
    return num, out


class _BatchCache(threading.local):
    """Polynomial values for the most recent point batch (compared by identity)."""

    def __init__(self):
        self.z = None
        self.V = None
        self.values: dict = {}

    def vars_for(self, z):
        if z is not self.z:
            self.z = z
            zz = np.asarray(z, dtype=complex)
            self.V = np.concatenate([zz, np.conj(zz)], axis=0)
            self.values = {}
        return self.V


_CACHE = _BatchCache()


class _Compiled:
    """Numeric evaluator of a ChartExpr on points-last arrays."""

    def __init__(self, ex: ChartExpr):
        self.n = ex.n
        self.num = self._pack(ex.num)
        self.facs = [(self._pack(f), e) for f, e in ex.den]

    @staticmethod
    def _pack(p: Poly):
        if p.is_zero():
            return np.zeros((0, 2 * p.n), dtype=int), np.zeros(0, dtype=complex), b""
        es = sorted(p.terms)
        exps = np.array(es, dtype=int)
        coef = np.array([complex(p.terms[e]) for e in es])
        return exps, coef, exps.tobytes() + coef.tobytes()

    @staticmethod
    def _poly_values(packed, V):
        exps, coef, _ = packed
        npts = V.shape[1]
        if len(coef) == 0:
            return np.zeros(npts, dtype=complex)
        used = np.nonzero(exps.max(axis=0))[0]
        out = np.broadcast_to(coef[:, None], (len(coef), npts)).astype(complex)
        for v in used:
            col = exps[:, v]
            tab = np.empty((int(col.max()) + 1, npts), dtype=complex)
            tab[0] = 1
            for k in range(1, tab.shape[0]):
                tab[k] = tab[k - 1] * V[v]
            out *= tab[col]
        return out.sum(axis=0)

    def _cached(self, packed, z):
        V = _CACHE.vars_for(z)
        key = packed[2]
        val = _CACHE.values.get(key)
        if val is None:
            val = self._poly_values(packed, V)
            _CACHE.values[key] = val
        return val

    def num_values(self, z):
        return self._cached(self.num, z).copy()

    def den_values(self, z):
        d = np.ones(_CACHE.vars_for(z).shape[1], dtype=complex)
        for packed, e in self.facs:
            d = d * self._cached(packed, z) ** e
        return d

    def __call__(self, z):
        # cached arrays are shared, so always return a fresh array
        out = self._cached(self.num, z).copy()
        for packed, e in self.facs:
            out /= self._cached(packed, z) ** e
        return out


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


class ExprMatrix:
    """Rectangular matrix of ChartExpr entries."""

    def __init__(self, entries: Sequence[Sequence[ChartExpr]], n: int | None = None, cols: int | None = None):
        rows = [list(r) for r in entries]
        if n is None:
            n = next(e.n for r in rows for e in r)
        self.n = n
        self.rows = len(rows)
        self.cols = len(rows[0]) if rows else (cols or 0)
        if any(len(r) != self.cols for r in rows):
            raise ValueError("ragged matrix")
        self.entries = [[ChartExpr.const(n, e) if not isinstance(e, ChartExpr) else e for e in r] for r in rows]

    @classmethod
    def zeros(cls, n: int, rows: int, cols: int) -> "ExprMatrix":
        return cls([[ChartExpr.const(n, 0)] * cols for _ in range(rows)], n=n, cols=cols)

    @classmethod
    def identity(cls, n: int, r: int) -> "ExprMatrix":
        return cls([[ChartExpr.const(n, int(i == j)) for j in range(r)] for i in range(r)], n=n)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def __eq__(self, other):
        return isinstance(other, ExprMatrix) and self.shape == other.shape and self.entries == other.entries

    def map(self, fn) -> "ExprMatrix":
        return ExprMatrix([[fn(e) for e in r] for r in self.entries], n=self.n, cols=self.cols)

    def __add__(self, other):
        return ExprMatrix(
            [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.entries, other.entries)], n=self.n, cols=self.cols
        )

    def __sub__(self, other):
        return ExprMatrix(
            [[a - b for a, b in zip(r1, r2)] for r1, r2 in zip(self.entries, other.entries)], n=self.n, cols=self.cols
        )

    def __matmul__(self, other: "ExprMatrix") -> "ExprMatrix":
        if self.cols != other.rows:
            raise ValueError("shape mismatch")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = ChartExpr.const(self.n, 0)
                for k in range(self.cols):
                    a, b = self.entries[i][k], other.entries[k][j]
                    if not a.is_zero() and not b.is_zero():
                        acc = acc + a * b
                row.append(acc)
            out.append(row)
        return ExprMatrix(out, n=self.n, cols=other.cols)

    def scale(self, c) -> "ExprMatrix":
        return self.map(lambda e: e * c)

    def conj_transpose(self) -> "ExprMatrix":
        return ExprMatrix(
            [[self.entries[i][j].conj() for i in range(self.rows)] for j in range(self.cols)], n=self.n, cols=self.rows
        )

    def partial(self, direction: str, i: int) -> "ExprMatrix":
        return self.map(lambda e: e.partial(direction, i))

    def is_zero(self) -> bool:
        return all(e.is_zero() for r in self.entries for e in r)

    def det(self) -> ChartExpr:
        if self.rows != self.cols:
            raise ValueError("determinant of a non-square matrix")
        r = self.rows
        if r == 0:
            return ChartExpr.const(self.n, 1)
        if r == 1:
            return self.entries[0][0]
        acc = ChartExpr.const(self.n, 0)
        for j in range(r):
            a = self.entries[0][j]
            if a.is_zero():
                continue
            minor = ExprMatrix([row[:j] + row[j + 1:] for row in self.entries[1:]], n=self.n)
            term = a * minor.det()
            acc = acc + term if j % 2 == 0 else acc - term
        return acc

    def inverse(self) -> "ExprMatrix":
        r = self.rows
        d = self.det()
        if d.is_zero():
            raise ZeroDivisionError("singular matrix")
        if r == 1:
            return ExprMatrix([[ChartExpr.const(self.n, 1) / d]], n=self.n)
        cof = []
        for i in range(r):
            row = []
            for j in range(r):
                minor = ExprMatrix(
                    [rw[:j] + rw[j + 1:] for k, rw in enumerate(self.entries) if k != i], n=self.n
                )
                c = minor.det()
                row.append(c if (i + j) % 2 == 0 else -c)
            cof.append(row)
        return ExprMatrix([[cof[j][i] / d for j in range(r)] for i in range(r)], n=self.n)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Values with shape ``(rows, cols, npts)``."""
        z = np.asarray(z, dtype=complex)
        npts = z.shape[1]
        out = np.zeros((self.rows, self.cols, npts), dtype=complex)
        for i, r in enumerate(self.entries):
            for j, e in enumerate(r):
                if not e.is_zero():
                    out[i, j] = e.evaluate(z)
        return out

    def eval(self, point: Sequence):
        return [[e.eval(point) for e in r] for r in self.entries]

    def to_str(self, names=None) -> str:
        return "[" + ", ".join("[" + ", ".join(e.to_str(names) for e in r) + "]" for r in self.entries) + "]"

    def __repr__(self):
        return f"ExprMatrix({self.to_str()})"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^(),\[\]]))")


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ParseError("unexpected character", text, pos)
        start = m.start(m.lastindex)
        if m.group(1):
            toks.append(("int", int(m.group(1)), start))
        elif m.group(2):
            toks.append(("name", m.group(2), start))
        else:
            op = m.group(3)
            toks.append(("op", "^" if op == "**" else op, start))
        pos = m.end()
    toks.append(("end", None, len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, n: int, names: Sequence[str]):
        self.text, self.n = text, n
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = {nm: k for k, nm in enumerate(names)}
        for k in range(n):
            self.vars.setdefault(f"z{k + 1}", k)

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, val=None):
        t = self.toks[self.i]
        if (kind and t[0] != kind) or (val is not None and t[1] != val):
            raise ParseError(f"expected {val or kind}", self.text, t[2])
        self.i += 1
        return t

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ParseError("trailing input", self.text, self.peek()[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        t = self.peek()
        if t[0] == "op" and t[1] in "+-":
            self.take()
            inner = self.unary()
            return inner if t[1] == "+" else ("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[0] == "op" and self.peek()[1] in "+-":
                sign = -1 if self.take()[1] == "-" else 1
            e = self.take("int")[1]
            return ("pow", base, sign * e)
        return base

    def atom(self):
        t = self.peek()
        if t[0] == "int":
            self.take()
            return ("const", QI(t[1]))
        if t[0] == "name":
            self.take()
            nm = t[1]
            if nm == "I":
                return ("const", QI(0, 1))
            if nm == "conj":
                self.take("op", "(")
                inner = self.expr()
                self.take("op", ")")
                return ("conj", inner)
            if nm in self.vars:
                return ("var", self.vars[nm])
            raise ParseError(f"unknown name {nm!r}", self.text, t[2])
        if t[0] == "op" and t[1] == "(":
            self.take()
            inner = self.expr()
            self.take("op", ")")
            return inner
        raise ParseError("unexpected token", self.text, t[2])

    def build(self, node) -> ChartExpr:
        n = self.n
        kind = node[0]
        if kind == "const":
            return ChartExpr.const(n, node[1])
        if kind == "var":
            return ChartExpr.coord(n, node[1])
        if kind == "conj":
            return self.build(node[1]).conj()
        if kind == "neg":
            return -self.build(node[1])
        if kind == "pow":
            return self.build(node[1]) ** node[2]
        a = self.build(node[1])
        if kind == "+":
            return a + self.build(node[2])
        if kind == "-":
            return a - self.build(node[2])
        if kind == "*":
            return a * self.build(node[2])
        if kind == "/":
            rhs = node[2]
            if rhs[0] == "pow" and rhs[2] > 0:
                base = self.build(rhs[1])
                if base.is_polynomial():
                    return a.div_factor(base.num, rhs[2])
            b = self.build(rhs)
            if b.is_polynomial() and not b.num.is_const():
                return a.div_factor(b.num, 1)
            return a / b
        raise AssertionError(kind)


def parse_expr(text: str, n: int = 2, names: Sequence[str] | None = None) -> ChartExpr:
    """Parse the text syntax: variables, ``conj(.)``, integers, ``I``, ``+ - * / ^`` and parentheses."""
    names = names or default_names(n)
    p = _Parser(text, n, names)
    return p.build(p.parse())


# ---------------------------------------------------------------------------
# projective charts
# ---------------------------------------------------------------------------


def chart_variables(chart: int, projective_dim: int) -> list[int]:
    """Homogeneous indices of the affine coordinates of chart ``chart`` of P^N."""
    return [k for k in range(projective_dim + 1) if k != chart]


def transition(e: ChartExpr, from_chart: int, to_chart: int, projective_dim: int) -> ChartExpr:
    """Rewrite an expression in chart ``from_chart`` of P^N in the coordinates of ``to_chart``."""
    N = projective_dim
    if e.n != N:
        raise ValueError("expression dimension does not match the projective dimension")
    if from_chart == to_chart:
        return e
    tgt = chart_variables(to_chart, N)

    def homog(k: int, anti: bool) -> ChartExpr:
        if k == to_chart:
            return ChartExpr.const(N, 1)
        return ChartExpr.coord(N, tgt.index(k), anti)

    mapping = []
    for anti in (False, True):
        base = homog(from_chart, anti)
        for k in chart_variables(from_chart, N):
            mapping.append(homog(k, anti) / base)
    out = e.subs(mapping)
    if out.den and any(f.is_zero() for f, _ in out.den):
        raise ZeroDivisionError("expression is singular on the chart overlap")
    return out
