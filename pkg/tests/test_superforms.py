import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rescurrents.gaussrat import QI
from rescurrents.superforms import (
    EndoFormValue,
    FormMatrix,
    FormValue,
    mask_of,
    popcount,
    project_bidegree,
    super_compose,
    supertrace,
    wedge,
    wedge_sign,
)

N = 2

qi = st.builds(QI, st.integers(-5, 5), st.integers(-5, 5))


def forms(n=N, degree=None):
    masks = [m for m in range(1 << (2 * n)) if degree is None or popcount(m) == degree]
    return st.dictionaries(st.sampled_from(masks), qi, max_size=4).map(lambda d: FormValue(n, d))


def dz(i, n=N):
    return FormValue(n, {1 << (i - 1): 1})


def dzb(i, n=N):
    return FormValue(n, {1 << (n + i - 1): 1})


def test_antisymmetry():
    assert dz(1).wedge(dz(2)) == -dz(2).wedge(dz(1))
    assert dz(1).wedge(dz(1)).is_zero()


def test_unit():
    b = dz(1).wedge(dzb(2)).scale(QI(3, 1))
    assert FormValue.scalar(N, 1).wedge(b) == b


def test_even_blocks_commute_with_sign_from_permutation_count():
    a = dz(1).wedge(dzb(1))
    b = dz(2).wedge(dzb(2))
    prod = a.wedge(b)
    # brute force: permutation sorting (dz1, dzb1, dz2, dzb2) into (dz1, dz2, dzb1, dzb2)
    order = [0, 2, 1, 3]
    inv = sum(1 for i in range(4) for j in range(i + 1, 4) if order[i] > order[j])
    assert prod.component((1, 2), (1, 2)) == (-1) ** inv
    assert prod.component((1, 2), (1, 2)) == a.wedge(b).component((1, 2), (1, 2))
    assert a.wedge(b) == b.wedge(a)


def test_mask_sign_matches_brute_force():
    n = 3
    for I in itertools.permutations([1, 3]):
        for J in itertools.permutations([2, 1]):
            m, s = mask_of(I, J, n)
            gens = [i - 1 for i in I] + [n + j - 1 for j in J]
            inv = sum(1 for a in range(4) for b in range(a + 1, 4) if gens[a] > gens[b])
            assert s == (-1) ** inv


@given(forms(), forms())
def test_graded_commutativity(a, b):
    for da in range(5):
        for db in range(5):
            x, y = a.degree_part(da), b.degree_part(db)
            assert wedge(x, y) == wedge(y, x).scale((-1) ** (da * db))


@given(forms(), forms(), forms())
def test_wedge_associative(a, b, c):
    assert wedge(wedge(a, b), c) == wedge(a, wedge(b, c))


@given(forms())
def test_nilpotency(a):
    for m in a.wedge(a).wedge(a).data:
        p, q = popcount(m & 3), popcount(m >> 2)
        assert p <= N and q <= N
    # any product of three 1-forms of type dz vanishes in dimension 2
    assert dz(1).wedge(dz(2)).wedge(a.degree_part(1).project(1, 0)).is_zero()


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        wedge(FormValue(2, {1: 1}), FormValue(3, {1: 1}))


@given(forms())
def test_projection_partition(a):
    total = FormValue(N)
    for p in range(N + 1):
        for q in range(N + 1):
            total = total + project_bidegree(a, p, q)
    assert total == a


def test_projection_example():
    f = FormValue.scalar(N, 1) + dz(1).wedge(dzb(1))
    assert project_bidegree(f, 1, 1) == dz(1).wedge(dzb(1))


# endomorphism-valued forms ----------------------------------------------------

LEVELS = (1, 2, 1)


def _block(draw, rows, cols, fd):
    masks = [m for m in range(1 << (2 * N)) if popcount(m) == fd]
    data = {}
    for m in draw(st.lists(st.sampled_from(masks), max_size=2, unique=True)):
        A = np.empty((rows, cols), dtype=object)
        for idx in np.ndindex(rows, cols):
            A[idx] = draw(qi)
        data[m] = A
    return FormMatrix(N, rows, cols, data)


@st.composite
def homogeneous_endo(draw, ed=None):
    """Homogeneous value: fixed form degree and fixed level difference."""
    fd = draw(st.integers(0, 3))
    ed = draw(st.integers(-2, 2)) if ed is None else ed
    blocks = {}
    for l in range(len(LEVELS)):
        k = l + ed
        if 0 <= k < len(LEVELS) and draw(st.booleans()):
            blocks[(k, l)] = _block(draw, LEVELS[k], LEVELS[l], fd)
    return fd, ed, EndoFormValue(N, LEVELS, blocks)


def test_even_endomorphism_no_sign():
    A = FormMatrix(N, 1, 1, {0: np.array([[QI(2)]], dtype=object)})
    B = FormMatrix(N, 1, 1, {1: np.array([[QI(3)]], dtype=object)})
    a = EndoFormValue.single(N, (1, 1), 0, 0, A)
    b = EndoFormValue.single(N, (1, 1), 0, 0, B)
    assert super_compose(a, b).block(0, 0).data[1][0, 0] == 6


def test_odd_times_one_form_sign():
    # a = dzb (x) g : E_0 -> E_1, b = dz (x) g' : E_1 -> E_0
    levels = (1, 1)
    a = EndoFormValue.single(N, levels, 1, 0, FormMatrix(N, 1, 1, {1 << N: np.array([[QI(1)]], dtype=object)}))
    b = EndoFormValue.single(N, levels, 0, 1, FormMatrix(N, 1, 1, {1: np.array([[QI(1)]], dtype=object)}))
    ab = super_compose(b, a)  # b has deg_e = -1 (odd), a has deg_f = 1 -> sign -1
    # dz ^ dzb with coefficient -1
    assert ab.block(0, 0).data[1 | (1 << N)][0, 0] == -1


@given(homogeneous_endo())
def test_identity_composition(x):
    _, _, a = x
    one = EndoFormValue.identity(N, LEVELS)
    assert super_compose(one, a) == a
    assert super_compose(a, one) == a


@settings(max_examples=40)
@given(homogeneous_endo(), homogeneous_endo(), homogeneous_endo())
def test_associativity(x, y, z):
    a, b, c = x[2], y[2], z[2]
    assert super_compose(super_compose(a, b), c) == super_compose(a, super_compose(b, c))


@settings(max_examples=60)
@given(homogeneous_endo(), homogeneous_endo())
def test_supertrace_sign_rule(x, y):
    fa, ea, a = x
    fb, eb, b = y
    deg_a, deg_b = fa + ea, fb + eb
    s = (-1) ** ((deg_a * deg_b - ea * eb) % 2)
    assert supertrace(super_compose(a, b)) == supertrace(super_compose(b, a)).scale(s)


def test_supertrace_of_odd_pair_changes_sign():
    levels = (1, 1)
    a = EndoFormValue.single(N, levels, 1, 0, FormMatrix(N, 1, 1, {1: np.array([[QI(2)]], dtype=object)}))
    b = EndoFormValue.single(N, levels, 0, 1, FormMatrix(N, 1, 1, {1 << N: np.array([[QI(3)]], dtype=object)}))
    assert supertrace(a @ b) == -supertrace(b @ a)


def test_supertrace_diagonal():
    A = np.array([[QI(2), QI(0)], [QI(0), QI(5)]], dtype=object)
    a = EndoFormValue.single(N, (2,), 0, 0, FormMatrix(N, 2, 2, {0: A}))
    assert supertrace(a) == FormValue.scalar(N, 7)


def test_supertrace_commutator_even_vanishes():
    rng = np.random.default_rng(1)
    for _ in range(5):
        blocks = []
        for _ in range(2):
            data = {}
            for m in (0, 1 | 4, 2 | 8):
                A = np.empty((2, 2), dtype=object)
                for idx in np.ndindex(2, 2):
                    A[idx] = QI(int(rng.integers(-4, 5)), int(rng.integers(-4, 5)))
                data[m] = A
            blocks.append(EndoFormValue.single(N, (2,), 0, 0, FormMatrix(N, 2, 2, data)))
        a, b = blocks
        assert supertrace(a @ b - b @ a).is_zero()


def test_rank_mismatch():
    with pytest.raises(ValueError):
        EndoFormValue.single(N, (1, 2), 1, 0, FormMatrix(N, 1, 1, {0: np.array([[QI(1)]], dtype=object)}))
    with pytest.raises(ValueError):
        super_compose(EndoFormValue.identity(N, (1, 2)), EndoFormValue.identity(N, (2, 1)))


def test_wedge_sign_overlap():
    assert wedge_sign(1, 1) == 0
    assert wedge_sign(2, 1) == -1
    assert wedge_sign(1, 2) == 1
