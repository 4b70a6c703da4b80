import numpy as np
import pytest
from hypothesis import given, strategies as st

from bhdimer.fock import (
    FockSpace,
    OperatorMatrix,
    SpaceMismatchError,
    TruncationWarning,
    commutator,
    create,
    destroy,
    displacement,
    displacement_matrix,
    identity,
    number,
    parity_operator,
    zero,
)


def test_index_roundtrip():
    s = FockSpace(4, 3)
    for nb in range(4):
        for na in range(3):
            i = s.index(nb, na)
            assert s.occupations(i) == (nb, na)
            assert s.n_b[i] == nb and s.n_a[i] == na
    with pytest.raises(IndexError):
        s.index(4, 0)


def test_bad_cutoff():
    with pytest.raises(ValueError):
        FockSpace(0, 3)


@pytest.mark.parametrize("mode", ["B", "A"])
def test_destroy_matrix_elements(mode):
    s = FockSpace(4, 3)
    a = destroy(s, mode).toarray()
    for i in range(s.dim):
        nb, na = s.occupations(i)
        n = nb if mode == "B" else na
        if n == 0:
            assert np.allclose(a[:, i], 0)
            continue
        j = s.index(nb - 1, na) if mode == "B" else s.index(nb, na - 1)
        assert a[j, i] == pytest.approx(np.sqrt(n))
        assert np.count_nonzero(a[:, i]) == 1


def test_bad_mode():
    with pytest.raises(ValueError):
        destroy(FockSpace(2, 2), "C")


@pytest.mark.parametrize("mode", ["B", "A"])
def test_number_is_adag_a(mode):
    s = FockSpace(5, 4)
    a = destroy(s, mode)
    assert np.allclose((create(s, mode) @ a).toarray(), number(s, mode).toarray(), atol=0)


def test_canonical_commutator_below_cutoff():
    s = FockSpace(6, 4)
    for mode in "BA":
        c = commutator(destroy(s, mode), create(s, mode)).toarray()
        k = s.cutoff(mode)
        occ = s.n_b if mode == "B" else s.n_a
        expected = np.where(occ < k - 1, 1.0, -(k - 1.0))
        assert np.allclose(np.diag(c), expected)
        assert np.allclose(c - np.diag(np.diag(c)), 0)


def test_modes_commute():
    s = FockSpace(4, 4)
    assert commutator(destroy(s, "B"), destroy(s, "A")).is_zero()
    assert commutator(destroy(s, "B"), create(s, "A")).is_zero()


def test_parity():
    s = FockSpace(3, 4)
    p = parity_operator(s)
    assert np.allclose((p @ p).toarray(), np.eye(s.dim))
    assert np.allclose(np.diag(p.toarray()), (-1.0) ** s.n_a)
    # parity anticommutes with a_A and commutes with a_B
    a = destroy(s, "A")
    assert (p @ a + a @ p).is_zero()
    assert commutator(p, destroy(s, "B")).is_zero()


def test_space_mismatch():
    with pytest.raises(SpaceMismatchError):
        destroy(FockSpace(3, 3), "B") + destroy(FockSpace(4, 3), "B")
    with pytest.raises(SpaceMismatchError):
        destroy(FockSpace(3, 3), "B") @ destroy(FockSpace(3, 4), "B")


def test_identity_and_zero():
    s = FockSpace(3, 2)
    x = destroy(s, "B") + 2j * number(s, "A")
    assert np.allclose((identity(s) @ x).toarray(), x.toarray())
    assert (x - x).is_zero()
    assert zero(s).is_zero()
    assert (x / 2).toarray() == pytest.approx(x.toarray() * 0.5)


@st.composite
def operators(draw):
    s = FockSpace(3, 2)
    c = [complex(draw(st.floats(-2, 2)), draw(st.floats(-2, 2))) for _ in range(4)]
    return (
        c[0] * destroy(s, "B") + c[1] * create(s, "A") + c[2] * number(s, "B") + c[3] * (destroy(s, "A") @ destroy(s, "B"))
    )


@given(operators(), operators())
def test_adjoint_reverses_products(x, y):
    assert np.allclose((x @ y).dag().toarray(), (y.dag() @ x.dag()).toarray())
    assert np.allclose(x.dag().dag().toarray(), x.toarray())


@given(operators(), operators())
def test_commutator_antisymmetric(x, y):
    assert np.allclose(commutator(x, y).toarray(), -commutator(y, x).toarray())


def test_hermitian_check():
    s = FockSpace(3, 3)
    b = destroy(s, "B")
    assert (b + b.dag()).is_hermitian()
    assert not b.is_hermitian()


def test_matmul_with_vector():
    s = FockSpace(3, 2)
    v = s.basis_state(2, 1)
    out = destroy(s, "B") @ v
    assert out[s.index(1, 1)] == pytest.approx(np.sqrt(2))


def test_displacement_of_vacuum_is_coherent():
    k, alpha = 30, 1.1 - 0.7j
    d = displacement_matrix(k, alpha)
    psi = d[:, 0]
    n = np.arange(k)
    from scipy.special import gammaln

    expected = np.exp(-abs(alpha) ** 2 / 2 + n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1)) * np.exp(1j * n * np.angle(alpha))
    assert np.allclose(psi, expected, atol=1e-10)
    a = np.diag(np.sqrt(np.arange(1, k)), 1)
    assert np.vdot(psi, a @ psi) == pytest.approx(alpha, abs=1e-10)


def test_displacement_zero_is_identity():
    s = FockSpace(4, 3)
    assert np.allclose(displacement(s, "A", 0).toarray(), np.eye(s.dim))


def test_displacement_unitary_and_leak_warning():
    d = displacement_matrix(20, 0.8)
    assert np.allclose(d.conj().T @ d, np.eye(20), atol=1e-12)
    with pytest.warns(TruncationWarning):
        displacement_matrix(6, 3.0)


def test_operator_from_dense_is_cleaned():
    s = FockSpace(2, 2)
    m = np.zeros((4, 4))
    m[0, 1] = 1.0
    op = OperatorMatrix(s, m)
    assert op.nnz == 1
