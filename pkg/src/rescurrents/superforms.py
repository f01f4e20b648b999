"""Pointwise exterior algebra and Z2-graded endomorphism-valued forms.

Basis monomials are encoded as bitmasks over the 2n generators
``dz_1..dz_n, dzbar_1..dzbar_n`` (bit ``i`` is ``dz_{i+1}``, bit ``n+j`` is ``dzbar_{j+1}``);
the stored coefficient multiplies the generators wedged in increasing bit order.
``d = del + delbar`` acts from the left.

Coefficients may be exact (:class:`QI`, :class:`ChartExpr`), complex floats, or numpy
arrays carrying a trailing batch axis of sample points; all operations are generic in
the scalar type.  Matrix blocks are numpy arrays of shape ``(rows, cols, *batch)``
(object dtype for exact scalars).
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "mask_of",
    "split_mask",
    "bidegree",
    "wedge_sign",
    "FormValue",
    "FormMatrix",
    "EndoFormValue",
    "wedge",
    "super_compose",
    "supertrace",
    "project_bidegree",
    "d_form",
    "d_endo",
]


def popcount(m: int) -> int:
    return bin(m).count("1")


def mask_of(I: Iterable[int], J: Iterable[int], n: int) -> tuple[int, int]:
    """Mask and reordering sign for ``dz_I ^ dzbar_J`` with 1-based, possibly unsorted indices."""
    gens = [i - 1 for i in I] + [n + j - 1 for j in J]
    for g in gens:
        if not 0 <= g < 2 * n:
            raise ValueError("multi-index out of range")
    if len(set(gens)) != len(gens):
        return 0, 0
    inv = sum(1 for a in range(len(gens)) for b in range(a + 1, len(gens)) if gens[a] > gens[b])
    m = 0
    for g in gens:
        m |= 1 << g
    return m, (-1) ** inv


def split_mask(m: int, n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    I = tuple(i + 1 for i in range(n) if m >> i & 1)
    J = tuple(j + 1 for j in range(n) if m >> (n + j) & 1)
    return I, J


def bidegree(m: int, n: int) -> tuple[int, int]:
    low = (1 << n) - 1
    return popcount(m & low), popcount(m >> n)


@lru_cache(maxsize=None)
def wedge_sign(a: int, b: int) -> int:
    """Sign of ``dz^a ^ dz^b`` relative to the canonical monomial ``a|b``; 0 if they overlap."""
    if a & b:
        return 0
    cnt = 0
    bb = b
    while bb:
        low = bb & -bb
        cnt += popcount(a & ~((low << 1) - 1))
        bb ^= low
    return -1 if cnt & 1 else 1


def _is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        if c.dtype == object:
            return all(x == 0 for x in c.flat)
        return False
    return c == 0


class FormValue:
    """Scalar differential form at a point (or a batch of points)."""

    __slots__ = ("n", "data")

    def __init__(self, n: int, data: Mapping[int, object] | None = None):
        self.n = n
        self.data = {m: c for m, c in (data or {}).items() if not _is_zero(c)}
        for m in self.data:
            if m >> (2 * n):
                raise ValueError("mask out of range")

    @classmethod
    def from_terms(cls, n: int, terms: Mapping[tuple, object]) -> "FormValue":
        out: dict = {}
        for (I, J), c in terms.items():
            m, s = mask_of(I, J, n)
            if s == 0:
                continue
            out[m] = out[m] + s * c if m in out else s * c
        return cls(n, out)

    @classmethod
    def scalar(cls, n: int, c) -> "FormValue":
        return cls(n, {0: c})

    @property
    def coeffs(self) -> dict:
        return {split_mask(m, self.n): c for m, c in self.data.items()}

    def component(self, I: Sequence[int], J: Sequence[int]):
        m, s = mask_of(I, J, self.n)
        if s == 0 or m not in self.data:
            return 0
        return s * self.data[m]

    def is_zero(self) -> bool:
        return not self.data

    def degrees(self) -> set[int]:
        return {popcount(m) for m in self.data}

    def degree(self) -> int:
        ds = self.degrees()
        if len(ds) > 1:
            raise ValueError("form is not homogeneous")
        return ds.pop() if ds else 0

    def _check(self, other: "FormValue"):
        if not isinstance(other, FormValue):
            raise TypeError("expected a FormValue")
        if other.n != self.n:
            raise ValueError("chart dimension mismatch")

    def __add__(self, other: "FormValue") -> "FormValue":
        self._check(other)
        out = dict(self.data)
        for m, c in other.data.items():
            out[m] = out[m] + c if m in out else c
        return FormValue(self.n, out)

    def __neg__(self) -> "FormValue":
        return FormValue(self.n, {m: -c for m, c in self.data.items()})

    def __sub__(self, other: "FormValue") -> "FormValue":
        return self + (-other)

    def scale(self, c) -> "FormValue":
        return FormValue(self.n, {m: v * c for m, v in self.data.items()})

    def wedge(self, other: "FormValue") -> "FormValue":
        return wedge(self, other)

    def project(self, p: int, q: int) -> "FormValue":
        return FormValue(self.n, {m: c for m, c in self.data.items() if bidegree(m, self.n) == (p, q)})

    def degree_part(self, k: int) -> "FormValue":
        return FormValue(self.n, {m: c for m, c in self.data.items() if popcount(m) == k})

    def map(self, fn: Callable) -> "FormValue":
        return FormValue(self.n, {m: fn(c) for m, c in self.data.items()})

    def top(self):
        """Coefficient of ``dz_1..dz_n dzbar_1..dzbar_n``."""
        return self.data.get((1 << (2 * self.n)) - 1, 0)

    def __eq__(self, other):
        if not isinstance(other, FormValue) or other.n != self.n:
            return NotImplemented
        return (self - other).is_zero()

    def allclose(self, other: "FormValue", atol: float = 1e-12) -> bool:
        diff = self - other
        return all(np.all(np.abs(np.asarray(c, dtype=complex)) <= atol) for c in diff.data.values())

    def __repr__(self):
        return f"FormValue(n={self.n}, {self.coeffs})"


def wedge(a: FormValue, b: FormValue) -> FormValue:
    """Exterior product with shuffle signs."""
    a._check(b)
    out: dict = {}
    for ma, ca in a.data.items():
        for mb, cb in b.data.items():
            s = wedge_sign(ma, mb)
            if s == 0:
                continue
            m = ma | mb
            t = ca * cb if s > 0 else -(ca * cb)
            out[m] = out[m] + t if m in out else t
    return FormValue(a.n, out)


def _matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.dtype != object and B.dtype != object and A.ndim == 2 and B.ndim == 2:
        return A @ B
    return (A[:, :, None] * B[None, :, :]).sum(axis=1)


class FormMatrix:
    """Matrix of forms stored as ``mask -> coefficient matrix`` (shape ``(rows, cols, *batch)``)."""

    __slots__ = ("n", "rows", "cols", "data")

    def __init__(self, n: int, rows: int, cols: int, data: Mapping[int, np.ndarray] | None = None):
        self.n, self.rows, self.cols = n, rows, cols
        clean = {}
        for m, A in (data or {}).items():
            A = np.asarray(A)
            if A.shape[:2] != (rows, cols):
                raise ValueError(f"block shape {A.shape[:2]} != {(rows, cols)}")
            if not _is_zero(A):
                clean[m] = A
        self.data = clean

    @classmethod
    def from_entries(cls, entries: Sequence[Sequence[FormValue]], n: int, dtype=object) -> "FormMatrix":
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        masks = sorted({m for r in entries for f in r for m in f.data})
        data = {}
        for m in masks:
            A = np.zeros((rows, cols), dtype=dtype)
            if dtype == object:
                A[...] = 0
            for i in range(rows):
                for j in range(cols):
                    A[i, j] = entries[i][j].data.get(m, 0)
            data[m] = A
        return cls(n, rows, cols, data)

    def entry(self, i: int, j: int) -> FormValue:
        return FormValue(self.n, {m: A[i, j] for m, A in self.data.items()})

    def is_zero(self) -> bool:
        return not self.data

    def __add__(self, other: "FormMatrix") -> "FormMatrix":
        if (other.rows, other.cols) != (self.rows, self.cols):
            raise ValueError("shape mismatch")
        out = dict(self.data)
        for m, A in other.data.items():
            out[m] = out[m] + A if m in out else A
        return FormMatrix(self.n, self.rows, self.cols, out)

    def __neg__(self) -> "FormMatrix":
        return FormMatrix(self.n, self.rows, self.cols, {m: -A for m, A in self.data.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "FormMatrix":
        return FormMatrix(self.n, self.rows, self.cols, {m: A * c for m, A in self.data.items()})

    def wedge_scalar(self, f: FormValue, left: bool = True) -> "FormMatrix":
        """``f ^ self`` (left) or ``self ^ f`` with f a scalar form."""
        out: dict = {}
        for mf, c in f.data.items():
            for m, A in self.data.items():
                s = wedge_sign(mf, m) if left else wedge_sign(m, mf)
                if s == 0:
                    continue
                t = A * c if s > 0 else -(A * c)
                k = mf | m
                out[k] = out[k] + t if k in out else t
        return FormMatrix(self.n, self.rows, self.cols, out)

    def matmul(self, other: "FormMatrix", sign_rule: Callable[[int], int] | None = None) -> "FormMatrix":
        """Wedge-matrix product; ``sign_rule(mask_of_right_factor)`` adds an extra sign."""
        if self.cols != other.rows:
            raise ValueError(f"rank mismatch {self.cols} != {other.rows}")
        out: dict = {}
        for ma, A in self.data.items():
            for mb, B in other.data.items():
                s = wedge_sign(ma, mb)
                if s == 0:
                    continue
                if sign_rule is not None:
                    s *= sign_rule(mb)
                P = _matmul(A, B)
                t = P if s > 0 else -P
                m = ma | mb
                out[m] = out[m] + t if m in out else t
        return FormMatrix(self.n, self.rows, other.cols, out)

    def trace(self) -> FormValue:
        if self.rows != self.cols:
            raise ValueError("trace of a non-square block")
        out = {}
        for m, A in self.data.items():
            if A.dtype == object:
                t = 0
                for i in range(self.rows):
                    t = A[i, i] + t
            else:
                t = np.trace(A, axis1=0, axis2=1)
            out[m] = t
        return FormValue(self.n, out)

    def project(self, p: int, q: int) -> "FormMatrix":
        return FormMatrix(
            self.n, self.rows, self.cols, {m: A for m, A in self.data.items() if bidegree(m, self.n) == (p, q)}
        )

    def degree_part(self, k: int) -> "FormMatrix":
        return FormMatrix(self.n, self.rows, self.cols, {m: A for m, A in self.data.items() if popcount(m) == k})

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "FormMatrix":
        return FormMatrix(self.n, self.rows, self.cols, {m: fn(A) for m, A in self.data.items()})

    def max_abs(self) -> float:
        if not self.data:
            return 0.0
        return max(float(np.max(np.abs(np.asarray(A, dtype=complex)))) for A in self.data.values())

    def __eq__(self, other):
        if not isinstance(other, FormMatrix):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and (self - other).is_zero()

    def __repr__(self):
        return f"FormMatrix({self.rows}x{self.cols}, masks={sorted(self.data)})"


class EndoFormValue:
    """Endomorphism-valued form on a graded bundle ``E_0 + ... + E_N``.

    ``blocks[(k, l)]`` is the component in ``Hom(E_l, E_k)``; its endomorphism degree is
    ``k - l`` and only its parity enters the signs.
    """

    __slots__ = ("n", "levels", "blocks")

    def __init__(self, n: int, levels: Sequence[int], blocks: Mapping[tuple[int, int], FormMatrix] | None = None):
        self.n = n
        self.levels = tuple(levels)
        clean = {}
        for (k, l), B in (blocks or {}).items():
            if not (0 <= k < len(self.levels) and 0 <= l < len(self.levels)):
                raise ValueError("level out of range")
            if (B.rows, B.cols) != (self.levels[k], self.levels[l]):
                raise ValueError(f"block ({k},{l}) has shape {(B.rows, B.cols)}, ranks say {(self.levels[k], self.levels[l])}")
            if B.n != n:
                raise ValueError("chart dimension mismatch")
            if not B.is_zero():
                clean[(k, l)] = B
        self.blocks = clean

    @classmethod
    def single(cls, n: int, levels: Sequence[int], k: int, l: int, block: FormMatrix) -> "EndoFormValue":
        return cls(n, levels, {(k, l): block})

    @classmethod
    def identity(cls, n: int, levels: Sequence[int], exact: bool = True) -> "EndoFormValue":
        blocks = {}
        for k, r in enumerate(levels):
            if r:
                A = np.eye(r, dtype=object if exact else complex)
                if exact:
                    A = np.array([[1 if i == j else 0 for j in range(r)] for i in range(r)], dtype=object)
                blocks[(k, k)] = FormMatrix(n, r, r, {0: A})
        return cls(n, levels, blocks)

    def block(self, k: int, l: int) -> FormMatrix:
        return self.blocks.get((k, l)) or FormMatrix(self.n, self.levels[k], self.levels[l])

    def _check(self, other: "EndoFormValue"):
        if other.levels != self.levels or other.n != self.n:
            raise ValueError("rank mismatch")

    def is_zero(self) -> bool:
        return not self.blocks

    def __add__(self, other: "EndoFormValue") -> "EndoFormValue":
        self._check(other)
        out = dict(self.blocks)
        for key, B in other.blocks.items():
            out[key] = out[key] + B if key in out else B
        return EndoFormValue(self.n, self.levels, out)

    def __neg__(self):
        return EndoFormValue(self.n, self.levels, {k: -B for k, B in self.blocks.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "EndoFormValue":
        return EndoFormValue(self.n, self.levels, {k: B.scale(c) for k, B in self.blocks.items()})

    def wedge_scalar(self, f: FormValue) -> "EndoFormValue":
        """``f ^ self`` for a scalar form f (the form factor sits on the left)."""
        return EndoFormValue(self.n, self.levels, {k: B.wedge_scalar(f) for k, B in self.blocks.items()})

    def map_blocks(self, fn: Callable[[FormMatrix], FormMatrix]) -> "EndoFormValue":
        return EndoFormValue(self.n, self.levels, {k: fn(B) for k, B in self.blocks.items()})

    def homogeneous_parts(self):
        """Yield ``(form_degree, endo_degree, part)`` for each homogeneous piece."""
        groups: dict = {}
        for (k, l), B in self.blocks.items():
            for m, A in B.data.items():
                key = (popcount(m), k - l)
                groups.setdefault(key, {}).setdefault((k, l), {})[m] = A
        for (fd, ed), blocks in sorted(groups.items()):
            yield fd, ed, EndoFormValue(
                self.n,
                self.levels,
                {kl: FormMatrix(self.n, self.levels[kl[0]], self.levels[kl[1]], d) for kl, d in blocks.items()},
            )

    def compose(self, other: "EndoFormValue") -> "EndoFormValue":
        return super_compose(self, other)

    def __matmul__(self, other):
        return super_compose(self, other)

    def max_abs(self) -> float:
        return max((B.max_abs() for B in self.blocks.values()), default=0.0)

    def __eq__(self, other):
        if not isinstance(other, EndoFormValue):
            return NotImplemented
        return self.levels == other.levels and (self - other).is_zero()

    def __repr__(self):
        return f"EndoFormValue(levels={self.levels}, blocks={sorted(self.blocks)})"


def super_compose(a: EndoFormValue, b: EndoFormValue) -> EndoFormValue:
    """Super product: ``(w (x) g)(w' (x) g') = (-1)^{deg_e(g) deg_f(w')} w^w' (x) g g'``."""
    a._check(b)
    out: dict = {}
    for (k, m), A in a.blocks.items():
        parity = (k - m) & 1
        rule = (lambda mb: -1 if popcount(mb) & 1 else 1) if parity else None
        for (m2, l), B in b.blocks.items():
            if m2 != m:
                continue
            P = A.matmul(B, rule)
            out[(k, l)] = out[(k, l)] + P if (k, l) in out else P
    return EndoFormValue(a.n, a.levels, out)


def supertrace(a: EndoFormValue) -> FormValue:
    """Sum of the ordinary traces of the diagonal blocks; off-diagonal blocks contribute nothing."""
    out = FormValue(a.n)
    for (k, l), B in sorted(a.blocks.items()):
        if k == l:
            out = out + B.trace()
    return out


def project_bidegree(a, p: int, q: int):
    if isinstance(a, FormValue):
        return a.project(p, q)
    return a.map_blocks(lambda B: B.project(p, q))


# ---------------------------------------------------------------------------
# exterior derivative for coefficient types that know their own partials
# ---------------------------------------------------------------------------


def d_form(f: FormValue, deriv: Callable[[object, int], object]) -> FormValue:
    """``d f`` where ``deriv(c, g)`` differentiates a coefficient along generator ``g``."""
    n = f.n
    out: dict = {}
    for m, c in f.data.items():
        for g in range(2 * n):
            bit = 1 << g
            if m & bit:
                continue
            dc = deriv(c, g)
            if _is_zero(dc):
                continue
            s = wedge_sign(bit, m)
            t = dc if s > 0 else -dc
            k = m | bit
            out[k] = out[k] + t if k in out else t
    return FormValue(n, out)


def _deriv_array(A: np.ndarray, g: int, deriv) -> np.ndarray:
    out = np.empty(A.shape, dtype=object)
    for idx in np.ndindex(*A.shape):
        out[idx] = deriv(A[idx], g)
    return out


def d_endo(a: EndoFormValue, deriv: Callable[[object, int], object]) -> EndoFormValue:
    """Entrywise ``d`` on an endomorphism-valued form with symbolic coefficients."""
    n = a.n
    blocks = {}
    for kl, B in a.blocks.items():
        out: dict = {}
        for m, A in B.data.items():
            for g in range(2 * n):
                bit = 1 << g
                if m & bit:
                    continue
                dA = _deriv_array(A, g, deriv)
                if _is_zero(dA):
                    continue
                s = wedge_sign(bit, m)
                t = dA if s > 0 else -dA
                k = m | bit
                out[k] = out[k] + t if k in out else t
        blocks[kl] = FormMatrix(n, B.rows, B.cols, out)
    return EndoFormValue(n, a.levels, blocks)


def chart_deriv(n: int) -> Callable[[object, int], object]:
    """Coefficient derivative for :class:`ChartExpr` entries (constants differentiate to 0)."""

    def deriv(c, g):
        if hasattr(c, "partial"):
            return c.partial("hol", g) if g < n else c.partial("anti", g - n)
        return 0

    return deriv
