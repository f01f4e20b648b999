"""Numerical limits of form-valued integrands as epsilon -> 0.

Integrals of top-degree forms are converted to Lebesgue measure with
``dz_1..dz_n dzbar_1..dzbar_n = (-1)^{n(n-1)/2} (-2i)^n dV``.

Two integration domains are provided: a real box in ``R^{2n}`` and, for integrands
invariant under the torus action ``z_j -> e^{i a_j} z_j``, log-radial coordinates
``z_j = e^{u_j}`` in which ``int f dV = (2 pi)^n int f(e^u) prod e^{2 u_j} du``.
The log-radial map resolves the thin shells ``|F|^2 ~ epsilon`` with cells of constant width,
and invariance is checked at run time before it is used.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .charts import ChartExpr, default_names
from .gaussrat import QI
from .superforms import FormValue, chart_deriv, d_form, popcount, wedge_sign

__all__ = [
    "ChiProfile",
    "CHI_PROFILES",
    "chi_eval",
    "EpsSchedule",
    "QuadConfig",
    "QuadResult",
    "Bump",
    "TestForm",
    "CycleComponent",
    "CycleSpec",
    "CurrentEstimate",
    "BoxDomain",
    "LogRadialDomain",
    "adaptive_integrate",
    "top_to_volume",
    "pair",
    "pair_density",
    "pair_cycle",
    "pou_weights",
    "pou_weight_expr",
    "extrapolate",
    "NotInvariantError",
]


# ---------------------------------------------------------------------------
# cutoff profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChiProfile:
    """C^2 monotone smoothstep from 0 (t <= a) to 1 (t >= b)."""

    id: str
    a: float
    b: float
    kind: str = "quintic"

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise ValueError("need 0 <= a < b")
        if self.kind not in ("quintic", "septic"):
            raise ValueError(f"unknown profile kind {self.kind!r}")

    def __call__(self, t):
        return chi_eval(self, t)


CHI_PROFILES = {
    "default": ChiProfile("default", 1.0, 2.0, "quintic"),
    "alt": ChiProfile("alt", 0.5, 2.5, "septic"),
}


def chi_eval(profile: ChiProfile, t):
    """``(chi(t), chi'(t))`` elementwise."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("chi is defined for t >= 0")
    w = profile.b - profile.a
    s = np.clip((t - profile.a) / w, 0.0, 1.0)
    if profile.kind == "quintic":
        val = s**3 * (10 - 15 * s + 6 * s**2)
        der = 30 * s**2 * (1 - s) ** 2 / w
    else:
        val = s**4 * (35 - 84 * s + 70 * s**2 - 20 * s**3)
        der = 140 * s**3 * (1 - s) ** 3 / w
    inside = (t > profile.a) & (t < profile.b)
    der = np.where(inside, der, 0.0)
    return val, der


@dataclass(frozen=True)
class EpsSchedule:
    eps_max: float = 0.1
    ratio: float = 0.5
    count: int = 8

    def __post_init__(self):
        if not (self.eps_max > 0 and 0 < self.ratio < 1 and self.count >= 1):
            raise ValueError("invalid epsilon schedule")

    def epsilons(self) -> list[float]:
        return [self.eps_max * self.ratio**j for j in range(self.count)]


# ---------------------------------------------------------------------------
# test forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bump:
    """One-variable C^2 profile: ``disc`` ``(1-|z-c|^2/R^2)^3_+``, ``annulus``
    ``(1-((|z|^2-rho^2)/w)^2)^3_+`` or ``const`` 1."""

    kind: str = "disc"
    radius: float = 1.0
    center: complex = 0.0
    rho: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("disc", "annulus", "const"):
            raise ValueError(f"unknown bump kind {self.kind!r}")
        if self.kind == "annulus" and not (0 < self.width <= self.rho**2):
            raise ValueError("annulus needs 0 < width <= rho^2")

    @property
    def radial(self) -> bool:
        return self.kind != "disc" or self.center == 0

    def support_radii(self, box: float) -> tuple[float, float]:
        """Bounds on ``|z|`` over the support (``box`` bounds the constant profile)."""
        if self.kind == "disc":
            c = abs(self.center)
            return max(0.0, c - self.radius), c + self.radius
        if self.kind == "annulus":
            return math.sqrt(self.rho**2 - self.width), math.sqrt(self.rho**2 + self.width)
        return 0.0, box

    def at_zero(self) -> float:
        return float(self.values(np.zeros(1, dtype=complex))[0][0])

    def values(self, z: np.ndarray):
        """``(b, del b, delbar b)`` elementwise."""
        z = np.asarray(z, dtype=complex)
        if self.kind == "const":
            one = np.ones(z.shape)
            return one, np.zeros(z.shape, complex), np.zeros(z.shape, complex)
        if self.kind == "disc":
            u = z - self.center
            t = (u * np.conj(u)).real / self.radius**2
            on = t < 1
            g = np.where(on, 1 - t, 0.0)
            b = g**3
            fac = -3 * g**2 / self.radius**2
            return b, fac * np.conj(u), fac * u
        s = ((z * np.conj(z)).real - self.rho**2) / self.width
        on = np.abs(s) < 1
        g = np.where(on, 1 - s * s, 0.0)
        b = g**3
        fac = -6 * s * g**2 / self.width
        return b, fac * np.conj(z), fac * z


def _expr_invariant(e, I, J, n) -> bool:
    """Torus invariance of ``e dz_I dzbar_J``."""
    if not isinstance(e, ChartExpr):
        return all((i in I) == (i in J) for i in range(1, n + 1))
    polys = [e.num] + [f for f, _ in e.den]
    shift = [(j + 1 in I) - (j + 1 in J) for j in range(n)]
    for k, p in enumerate(polys):
        for ex in p.terms:
            w = [ex[j] - ex[n + j] for j in range(n)]
            if k == 0 and any(w[j] + shift[j] for j in range(n)):
                return False
            if k > 0 and any(w):
                return False
    return True


class TestForm:
    """``eta = prod_j b_j(z_j) * sum_a c_a form_a`` with symbolic form factors ``form_a``.

    ``form`` is a :class:`FormValue` (exact or float coefficients) or a list of
    ``(c_a, form_a)`` pairs; the float factors ``c_a`` keep the symbolic parts exact.
    ``derivative=True`` represents ``d eta`` (computed exactly from the bump derivatives and
    symbolic differentiation of the form factors).
    """

    __test__ = False  # not a pytest class

    def __init__(self, n: int, bumps: Sequence[Bump], form=None, box: float = 4.0,
                 derivative: bool = False, label: str = ""):
        if len(bumps) != n:
            raise ValueError("one bump per coordinate")
        self.n = n
        self.bumps = tuple(bumps)
        if form is None:
            parts = [(1.0, FormValue.scalar(n, 1))]
        elif isinstance(form, FormValue):
            parts = [(1.0, form)]
        else:
            parts = [(complex(c), f) for c, f in form]
        if any(f.n != n for _, f in parts):
            raise ValueError("form dimension mismatch")
        self.parts = tuple(parts)
        self.box = box
        self.derivative = derivative
        self.label = label

    def d(self) -> "TestForm":
        if self.derivative:
            raise ValueError("d of an exact test form is zero")
        return TestForm(self.n, self.bumps, self.parts, self.box, True, self.label + ":d")

    def scaled(self, c) -> "TestForm":
        return TestForm(self.n, self.bumps, [(c * a, f) for a, f in self.parts], self.box, self.derivative, self.label)

    def wedge_form(self, other) -> "TestForm":
        """Multiply the form factor by ``other`` (a FormValue or list of parts) on the right."""
        other = [(1.0, other)] if isinstance(other, FormValue) else list(other)
        parts = [(a * b, f.wedge(g)) for a, f in self.parts for b, g in other]
        return TestForm(self.n, self.bumps, parts, self.box, self.derivative, self.label)

    def value_at(self, point: Sequence[complex]) -> complex:
        """Degree-0 component of the test form at ``point``."""
        z = np.asarray(point, dtype=complex).reshape(self.n, 1)
        return complex(np.asarray(self.evaluate(z).data.get(0, 0)).ravel()[0])

    @property
    def torus_invariant(self) -> bool:
        if not all(b.radial for b in self.bumps):
            return False
        for _, f in self.parts:
            for m, c in f.data.items():
                I, J = _split(m, self.n)
                if not _expr_invariant(c, I, J, self.n):
                    return False
        return True

    def support_radii(self) -> list[tuple[float, float]]:
        return [b.support_radii(self.box) for b in self.bumps]

    def _form_values(self, z: np.ndarray, differentiate: bool = False) -> dict:
        npts = z.shape[1]
        out: dict = {}
        for a, f in self.parts:
            if differentiate:
                f = d_form(f, chart_deriv(self.n))
            for m, c in f.data.items():
                v = c.evaluate(z) if isinstance(c, ChartExpr) else np.full(npts, complex(c))
                v = a * v
                out[m] = out[m] + v if m in out else v
        return out

    def evaluate(self, z: np.ndarray) -> FormValue:
        z = np.asarray(z, dtype=complex)
        vals = [b.values(z[j]) for j, b in enumerate(self.bumps)]
        beta = np.prod([v[0] for v in vals], axis=0)
        fv = self._form_values(z)
        if not self.derivative:
            return FormValue(self.n, {m: beta * v for m, v in fv.items()})
        out: dict = {}
        n = self.n
        for j in range(n):
            others = np.prod([vals[k][0] for k in range(n) if k != j], axis=0) if n > 1 else 1.0
            for g, dv in ((j, vals[j][1]), (n + j, vals[j][2])):
                db = others * dv
                for m, v in fv.items():
                    s = wedge_sign(1 << g, m)
                    if s == 0:
                        continue
                    k = m | (1 << g)
                    t = s * db * v
                    out[k] = out[k] + t if k in out else t
        for m, v in self._form_values(z, True).items():
            t = beta * v
            out[m] = out[m] + t if m in out else t
        return FormValue(n, out)

    def __repr__(self):
        return f"TestForm({self.label or self.bumps})"


def _split(m: int, n: int):
    I = tuple(i + 1 for i in range(n) if m >> i & 1)
    J = tuple(j + 1 for j in range(n) if m >> (n + j) & 1)
    return I, J


def top_to_volume(n: int) -> complex:
    """Factor ``c`` with ``dz_1..dz_n dzbar_1..dzbar_n = c dV``."""
    return (-1) ** (n * (n - 1) // 2) * (-2j) ** n


def pair_density(form: FormValue, test: FormValue) -> np.ndarray:
    """Density w.r.t. Lebesgue measure of the top-degree part of ``form ^ test``."""
    n = form.n
    full = (1 << (2 * n)) - 1
    acc = 0
    for m, c in form.data.items():
        comp = full ^ m
        if comp in test.data:
            s = wedge_sign(m, comp)
            acc = acc + s * c * test.data[comp]
    return acc * top_to_volume(n)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadConfig:
    order: int = 6
    max_depth: int = 14
    tol: float = 1e-4
    abs_tol: float = 1e-7
    init: int = 4
    shell_depth: int = 2
    max_cells: int = 40000
    chunk_cells: int = 64
    workers: int = 1
    rmin: float = 1e-12


@dataclass
class QuadResult:
    value: complex
    error: float
    cells: int
    depth: int
    overrun: bool = False
    evals: int = 0


class BoxDomain:
    """Real box in ``R^{2n}`` with ``z_j = x_{2j} + i x_{2j+1}``."""

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.dim = len(self.lo)

    def to_points(self, X: np.ndarray):
        z = X[0::2] + 1j * X[1::2]
        return z, np.ones(X.shape[1])


class LogRadialDomain:
    """``u_j in [log rmin_j, log rmax_j]``, ``z_j = e^{u_j}``, Jacobian ``(2 pi)^n prod e^{2u_j}``."""

    def __init__(self, radii: Sequence[tuple[float, float]], rmin: float = 1e-12):
        self.lo = np.array([math.log(max(a, rmin)) for a, _ in radii])
        self.hi = np.array([math.log(b) for _, b in radii])
        if np.any(self.hi <= self.lo):
            raise ValueError("empty radial range")
        self.dim = len(radii)

    def to_points(self, U: np.ndarray):
        z = np.exp(U).astype(complex)
        jac = (2 * math.pi) ** self.dim * np.exp(2 * U.sum(axis=0))
        return z, jac


def _rule(order: int, dim: int):
    x, w = leggauss(order)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids])  # in [-1,1]
    wg = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wg]), axis=0)
    return (nodes + 1) / 2, weights / 2**dim


class _Cell:
    __slots__ = ("lo", "hi", "depth", "q", "kids", "err", "shell", "force")

    def __init__(self, lo, hi, depth, q):
        self.lo, self.hi, self.depth, self.q = lo, hi, depth, q
        self.kids = None
        self.err = math.inf
        self.shell = False
        self.force = False

    def children(self):
        mid = (self.lo + self.hi) / 2
        d = len(self.lo)
        out = []
        for bits in range(2**d):
            lo = self.lo.copy()
            hi = self.hi.copy()
            for a in range(d):
                if bits >> a & 1:
                    lo[a] = mid[a]
                else:
                    hi[a] = mid[a]
            out.append((lo, hi))
        return out

    @property
    def value(self):
        return sum(self.kids) if self.kids is not None else self.q


def _fsum_c(vals) -> complex:
    vals = list(vals)
    return complex(math.fsum(v.real for v in vals), math.fsum(v.imag for v in vals))


def adaptive_integrate(f: Callable, domain, config: QuadConfig = QuadConfig(),
                       shell: tuple[float, float] | None = None) -> QuadResult:
    """Adaptive tensor Gauss-Legendre quadrature with parent/children error estimates.

    ``f(X)`` receives real coordinates of shape ``(dim, npts)`` and returns ``values`` or
    ``(values, t)``.  With ``shell=(a, b)`` the cutoff shell ``a <= t <= b`` gets extra care:

    * cells that touch it (a node or corner inside, or samples on both sides) are refined to
      at least ``config.shell_depth``;
    * a child that touches it only between its Gauss nodes and its faces is invisible to the
      parent/children comparison, so its face layer is charged ``vol * max|f(corners)|`` times
      the layer fraction, and a child whose samples all jump over the shell is split further.
    """
    d = domain.dim
    nodes, weights = _rule(config.order, d)
    qd = nodes.shape[1]
    corners = np.array([[(bits >> a) & 1 for bits in range(2**d)] for a in range(d)], dtype=float)
    layer = 2 * d * float(nodes.min())  # volume fraction between the faces and the outer nodes
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    evals = 0

    def run_boxes(boxes):
        """Rule values, shell flags, face-layer bounds and split requests, in fixed-size chunks."""
        nonlocal evals
        chunks = [boxes[i:i + config.chunk_cells] for i in range(0, len(boxes), config.chunk_cells)]
        nc = corners.shape[1] if shell is not None else 0

        def one(chunk):
            m = len(chunk)
            lo = np.stack([b[0] for b in chunk], axis=1)
            hi = np.stack([b[1] for b in chunk], axis=1)
            X = (lo[:, :, None] + (hi - lo)[:, :, None] * nodes[:, None, :]).reshape(d, -1)
            if nc:
                Xc = (lo[:, :, None] + (hi - lo)[:, :, None] * corners[:, None, :]).reshape(d, -1)
                X = np.concatenate([X, Xc], axis=1)
            out = f(X)
            t = None
            if isinstance(out, tuple):
                out, t = out
            out = np.broadcast_to(np.asarray(out, dtype=complex), X.shape[1:])
            vol = np.prod(hi - lo, axis=0)
            vals = out[:m * qd].reshape(m, qd) @ weights * vol
            flags = np.zeros(m, dtype=bool)
            border = np.zeros(m)
            force = np.zeros(m, dtype=bool)
            if nc and t is not None:
                t = np.broadcast_to(np.asarray(t, dtype=float), X.shape[1:])
                tn, tc = t[:m * qd].reshape(m, qd), t[m * qd:].reshape(m, nc)
                a, b = shell
                node_in = ((tn >= a) & (tn <= b)).any(axis=1)
                corner_in = ((tc >= a) & (tc <= b)).any(axis=1)
                tmin = np.minimum(tn.min(axis=1), tc.min(axis=1))
                tmax = np.maximum(tn.max(axis=1), tc.max(axis=1))
                flags = node_in | corner_in | ((tmin < a) & (tmax > b))
                unresolved = flags & ~node_in
                fc = np.abs(out[m * qd:].reshape(m, nc)).max(axis=1)
                border = np.where(unresolved, layer * vol * fc, 0.0)
                force = unresolved & ~corner_in
            return vals, flags, border, force

        res = list(pool.map(one, chunks)) if pool else [one(c) for c in chunks]
        evals += len(boxes) * (qd + nc)
        if not res:
            return np.zeros(0, complex), np.zeros(0, bool), np.zeros(0), np.zeros(0, bool)
        return tuple(np.concatenate([r[j] for r in res]) for j in range(4))

    try:
        # initial grid
        grid = []
        edges = [np.linspace(domain.lo[a], domain.hi[a], config.init + 1) for a in range(d)]
        for idx in np.ndindex(*([config.init] * d)):
            lo = np.array([edges[a][idx[a]] for a in range(d)])
            hi = np.array([edges[a][idx[a] + 1] for a in range(d)])
            grid.append((lo, hi))
        q = run_boxes(grid)[0]
        cells = [_Cell(lo, hi, 0, qv) for (lo, hi), qv in zip(grid, q)]

        def expand(batch):
            """Evaluate children of each cell in ``batch``; sets kids, err and shell flags."""
            boxes = [c for cell in batch for c in cell.children()]
            vals, flags, border, force = run_boxes(boxes)
            k = 2**d
            for i, cell in enumerate(batch):
                sl = slice(i * k, (i + 1) * k)
                kv = vals[sl]
                cell.kids = list(kv)
                cell.err = abs(complex(kv.sum()) - cell.q) + math.fsum(border[sl])
                cell.shell = bool(flags[sl].any())
                cell.force = bool(force[sl].any())

        expand(cells)
        overrun = False
        while True:
            total = _fsum_c(c.value for c in cells)
            err = math.fsum(c.err for c in cells)
            target = max(config.abs_tol, config.tol * abs(total))
            forced = [c for c in cells if (c.shell and c.depth < config.shell_depth)
                      or (c.force and c.depth < config.max_depth)]
            if err <= target and not forced:
                break
            forced_ids = {id(c) for c in forced}
            cand = sorted((c for c in cells if c.depth < config.max_depth and id(c) not in forced_ids),
                          key=lambda c: (-c.err, tuple(c.lo)))
            # split the largest contributions covering most of the excess, in one batch
            chosen = list(forced)
            acc = 0.0
            if err > target and cand:
                floor = 0.05 * cand[0].err
                for c in cand:
                    if acc >= 0.9 * (err - target) and c.err < floor:
                        break
                    chosen.append(c)
                    acc += c.err
            if any(c.depth >= config.max_depth and c.err > target / max(len(cells), 1) for c in cells):
                overrun = True
            if not chosen or len(cells) + len(chosen) * (2**d - 1) > config.max_cells:
                overrun = overrun or err > target
                break
            chosen_ids = {id(c) for c in chosen}
            new = []
            for cell in chosen:
                for (lo, hi), qv in zip(cell.children(), cell.kids):
                    new.append(_Cell(lo, hi, cell.depth + 1, qv))
            expand(new)
            cells = [c for c in cells if id(c) not in chosen_ids] + new
        cells.sort(key=lambda c: tuple(c.lo) + tuple(c.hi))
        value = _fsum_c(c.value for c in cells)
        error = math.fsum(c.err for c in cells)
        return QuadResult(value, error, len(cells), max(c.depth for c in cells), overrun, evals)
    finally:
        if pool:
            pool.shutdown()


# ---------------------------------------------------------------------------
# cycles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleComponent:
    """Holomorphic parametrization ``z = g(w)``, ``w in C^d`` (``d = 0`` for a point)."""

    g: tuple
    d: int
    multiplicity: int = 1
    label: str = ""

    def __post_init__(self):
        if self.multiplicity < 1 or int(self.multiplicity) != self.multiplicity:
            raise ValueError("multiplicities are positive integers")
        for e in self.g:
            if self.d > 0 and not (isinstance(e, ChartExpr) and e.n == self.d and e.is_holomorphic()):
                raise ValueError("parametrization must be holomorphic in the parameters")

    @classmethod
    def point(cls, p: Sequence, multiplicity: int = 1) -> "CycleComponent":
        return cls(tuple(QI.coerce(v) if isinstance(v, (int, QI)) else complex(v) for v in p), 0, multiplicity, "point")

    @classmethod
    def coordinate_plane(cls, n: int, fixed: dict, multiplicity: int = 1) -> "CycleComponent":
        """``{z_j = c_j for j in fixed}`` parametrized by the remaining coordinates."""
        free = [j for j in range(n) if j not in fixed]
        d = len(free)
        g = []
        for j in range(n):
            if j in fixed:
                g.append(ChartExpr.const(d, fixed[j]))
            else:
                g.append(ChartExpr.coord(d, free.index(j)))
        return cls(tuple(g), d, multiplicity, f"plane{fixed}")


@dataclass(frozen=True)
class CycleSpec:
    components: tuple

    def scaled(self, m: int) -> "CycleSpec":
        return CycleSpec(tuple(CycleComponent(c.g, c.d, c.multiplicity * m, c.label) for c in self.components))


def _pullback_top(test_vals: FormValue, J: list, n: int, d: int) -> np.ndarray:
    """Top coefficient (in dw, dwbar) of the pullback of a form with Jacobian ``J[i][a]``."""
    out = 0
    for m, c in test_vals.data.items():
        if popcount(m) != 2 * d:
            continue
        gens = [g for g in range(2 * n) if m >> g & 1]
        # each dz_i -> sum_a J_ia dw_a, dzbar_i -> sum_a conj(J_ia) dwbar_a
        acc = 0
        for targets in itertools.product(range(d), repeat=len(gens)):
            tg = [(targets[k] if gens[k] < n else d + targets[k]) for k in range(len(gens))]
            if len(set(tg)) != len(tg):
                continue
            inv = sum(1 for a in range(len(tg)) for b in range(a + 1, len(tg)) if tg[a] > tg[b])
            coef = 1
            for k, g in enumerate(gens):
                if g < n:
                    coef = coef * J[g][targets[k]]
                else:
                    coef = coef * np.conj(J[g - n][targets[k]])
            acc = acc + (-coef if inv % 2 else coef)
        out = out + c * acc
    return out


def pair_cycle(cycle: CycleSpec, test: TestForm, config: QuadConfig = QuadConfig(tol=1e-10, abs_tol=1e-13)) -> complex:
    """``sum_i m_i int_{Z_i} test``."""
    return pair_cycle_result(cycle, test, config)[0]


def pair_cycle_result(cycle: CycleSpec, test: TestForm, config: QuadConfig = QuadConfig(tol=1e-10, abs_tol=1e-13)):
    n = test.n
    total, err = 0j, 0.0
    for comp in cycle.components:
        if comp.d == 0:
            z = np.array([[complex(v)] for v in comp.g])
            vals = test.evaluate(z)
            total += comp.multiplicity * complex(np.asarray(vals.data.get(0, 0)).ravel()[0] if 0 in vals.data else 0)
            continue
        d = comp.d
        jac_exprs = [[e.partial("hol", a) for a in range(d)] for e in comp.g]

        def density(w):
            zz = np.stack([e.evaluate(w) if not e.is_polynomial() or e.num.degree() > 0 else np.full(w.shape[1], complex(e.eval([0] * d))) for e in comp.g])
            J = [[je.evaluate(w) if not je.is_zero() else 0 for je in row] for row in jac_exprs]
            tv = test.evaluate(zz)
            return _pullback_top(tv, J, n, d) * top_to_volume(d)

        rad = max(r for _, r in test.support_radii())
        radii = [(0.0, rad)] * d
        invariant = _check_invariance(lambda w: density(w), d, radii)
        if invariant:
            dom = LogRadialDomain(radii, config.rmin)

            def f(U):
                w, jac = dom.to_points(U)
                return density(w) * jac
        else:
            dom = BoxDomain([-rad] * (2 * d), [rad] * (2 * d))

            def f(X):
                w, jac = dom.to_points(X)
                return density(w) * jac

        res = adaptive_integrate(f, dom, config)
        total += comp.multiplicity * res.value
        err += comp.multiplicity * res.error
    return total, err


class NotInvariantError(ValueError):
    pass


def _check_invariance(density: Callable, n: int, radii, samples: int = 32, seed: int = 7, rtol: float = 1e-8,
                      atol: float = 1e-13) -> bool:
    """Compare the density at random points and at torus-rotated copies.

    Radii are log-uniform so that some samples fall in the cutoff shell; where the cutoff is
    constant the density can be pure rounding noise, which only the largest sample can scale.
    Differences below ``atol`` count as zero (far below any quadrature tolerance).
    """
    rng = np.random.default_rng(seed)
    r = np.array([np.exp(rng.uniform(np.log(max(a, 1e-3)), np.log(b), samples)) for a, b in radii])
    ph = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(n, samples)))
    v0 = np.asarray(density(r.astype(complex)), dtype=complex)
    v1 = np.asarray(density(r * ph), dtype=complex)
    scale = max(np.abs(v0).max(), 1e-300)
    return bool(np.abs(v0 - v1).max() <= rtol * scale + atol)


# ---------------------------------------------------------------------------
# projective partition of unity
# ---------------------------------------------------------------------------


def pou_weight_expr(j: int, chart: int, N: int) -> ChartExpr:
    """``|Z_j|^2 / sum |Z_k|^2`` in the affine coordinates of ``chart``."""
    coords = [k for k in range(N + 1) if k != chart]
    s = ChartExpr.const(N, 1)
    for a in range(N):
        s = s + ChartExpr.coord(N, a) * ChartExpr.coord(N, a, True)
    if j == chart:
        num = ChartExpr.const(N, 1)
    else:
        a = coords.index(j)
        num = ChartExpr.coord(N, a) * ChartExpr.coord(N, a, True)
    return num / s


def pou_weights(point: Sequence[complex], chart: int, N: int) -> np.ndarray:
    z = np.asarray(point, dtype=complex)
    if z.shape[0] != N:
        raise ValueError("point dimension mismatch")
    homog = np.insert(z, chart, 1.0, axis=0)
    a = np.abs(homog) ** 2
    return a / a.sum(axis=0)


# ---------------------------------------------------------------------------
# extrapolation and pairing
# ---------------------------------------------------------------------------


@dataclass
class CurrentEstimate:
    epsilons: list
    pairings: list
    quad_errors: list
    limit: complex
    error: float
    alpha: float | None
    cells: list = field(default_factory=list)
    depth: list = field(default_factory=list)
    converged: bool = True
    overrun: bool = False
    method: str = ""

    def scaled(self, c: complex) -> "CurrentEstimate":
        return CurrentEstimate(self.epsilons, [c * p for p in self.pairings], [abs(c) * e for e in self.quad_errors],
                               c * self.limit, abs(c) * self.error, self.alpha, self.cells, self.depth,
                               self.converged, self.overrun, self.method)


def combine(terms: Sequence[tuple[complex, "CurrentEstimate"]]) -> "CurrentEstimate":
    """Linear combination of estimates on the same schedule (errors add)."""
    base = terms[0][1]
    pair = [sum(c * t.pairings[j] for c, t in terms) for j in range(len(base.pairings))]
    qerr = [sum(abs(c) * t.quad_errors[j] for c, t in terms) for j in range(len(base.pairings))]
    return CurrentEstimate(base.epsilons, pair, qerr, sum(c * t.limit for c, t in terms),
                           sum(abs(c) * t.error for c, t in terms), base.alpha,
                           [sum(x) for x in zip(*(t.cells for _, t in terms))],
                           [max(x) for x in zip(*(t.depth for _, t in terms))],
                           all(t.converged for _, t in terms), any(t.overrun for _, t in terms), "combined")


def extrapolate(eps: Sequence[float], values: Sequence[complex], quad_errors: Sequence[float], ratio: float,
                tol: float = 0.0):
    """Limit of ``I(eps) ~ a0 + a1 eps^alpha`` on a geometric schedule.

    Returns ``(limit, error, alpha, method)``.  The tail is accelerated with an Aitken step
    when three consecutive values give a stable ratio; otherwise the last value is returned
    with the last difference as error bar.
    """
    v = [complex(x) for x in values]
    qn = list(quad_errors)
    M = len(v)
    if M == 1:
        return v[0], qn[0], None, "single"
    noise = [qn[j] + qn[j - 1] for j in range(1, M)]
    diffs = [v[j] - v[j - 1] for j in range(1, M)]
    if abs(diffs[-1]) <= noise[-1] or M < 3:
        return v[-1], abs(diffs[-1]) + qn[-1], None, "last-value"
    acc = []
    alphas = []
    for j in range(2, M):
        d1, d0 = diffs[j - 1], diffs[j - 2]
        if abs(d0) <= noise[j - 2] or abs(d1) <= noise[j - 1]:
            continue
        r = d1 / d0
        rr = r.real if abs(r.imag) <= 0.1 * abs(r) else None
        if rr is None or not 0 < rr < 0.95:
            continue
        acc.append(v[j] + d1 * rr / (1 - rr))
        alphas.append(math.log(rr) / math.log(ratio))
    if len(acc) >= 2:
        lim = acc[-1]
        err = abs(acc[-1] - acc[-2]) + 2 * qn[-1]
        return lim, err, alphas[-1], "aitken"
    return v[-1], abs(diffs[-1]) + qn[-1], None, "last-value"


class Integrand(Protocol):
    n: int
    torus_invariant: bool

    def form(self, z: np.ndarray, eps: float) -> FormValue: ...

    def shell_t(self, z: np.ndarray, eps: float) -> np.ndarray | None: ...


def _domain_for(test: TestForm, config: QuadConfig, log_radial: bool):
    radii = test.support_radii()
    if log_radial:
        return LogRadialDomain(radii, config.rmin)
    lo, hi = [], []
    for (a, b), bump in zip(radii, test.bumps):
        c = bump.center if bump.kind == "disc" else 0
        r = b if bump.kind != "disc" else bump.radius
        lo += [c.real - r, c.imag - r] if bump.kind == "disc" else [-b, -b]
        hi += [c.real + r, c.imag + r] if bump.kind == "disc" else [b, b]
    return BoxDomain(lo, hi)


def pair(integrand, test: TestForm, schedule: EpsSchedule, config: QuadConfig = QuadConfig(),
         chi: ChiProfile | None = None, domain: str = "auto", tol: float | None = None) -> CurrentEstimate:
    """Pair ``integrand(eps)`` with ``test`` for each epsilon and extrapolate to epsilon = 0."""
    n = test.n
    log_radial = False
    if domain in ("auto", "logradial"):
        # the test form alone need not be invariant; the density is checked at run time
        inv = all(b.radial for b in test.bumps) and getattr(integrand, "torus_invariant", False)
        if inv:
            eps0 = schedule.epsilons()[0]
            inv = _check_invariance(lambda z: pair_density(integrand.form(z, eps0), test.evaluate(z)), n,
                                    [(max(a, 1e-2), b) for a, b in test.support_radii()])
        if domain == "logradial" and not inv:
            raise NotInvariantError("integrand or test form is not torus invariant")
        log_radial = inv
    dom = _domain_for(test, config, log_radial)
    shell = (chi.a, chi.b) if chi is not None else None
    eps_list = schedule.epsilons()
    vals, qerr, cells, depth = [], [], [], []
    overrun = False
    for eps in eps_list:
        def f(X, eps=eps):
            z, jac = dom.to_points(X)
            dens = pair_density(integrand.form(z, eps), test.evaluate(z))
            dens = np.broadcast_to(np.asarray(dens, dtype=complex), jac.shape)
            t = integrand.shell_t(z, eps) if shell is not None else None
            return (dens * jac, t) if t is not None else dens * jac

        res = adaptive_integrate(f, dom, config, shell)
        vals.append(res.value)
        qerr.append(res.error)
        cells.append(res.cells)
        depth.append(res.depth)
        overrun |= res.overrun
    lim, err, alpha, method = extrapolate(eps_list, vals, qerr, schedule.ratio)
    scale = max(abs(lim), config.abs_tol)
    tol = config.tol * 100 if tol is None else tol
    return CurrentEstimate(eps_list, vals, qerr, lim, err, alpha, cells, depth,
                           converged=(err <= tol * scale) and not overrun, overrun=overrun, method=method)
