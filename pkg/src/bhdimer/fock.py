"""Truncated two-mode Fock space and sparse operator algebra.

Basis ordering: index = n_b * k_a + n_a, so the antibonding occupation runs
fastest.  Ladder operators are plain truncations of the infinite matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

MODES = ("B", "A")


class SpaceMismatchError(ValueError):
    """Operands live on different Fock spaces."""


class TruncationWarning(UserWarning):
    """Population leaked into the top Fock level of a truncated mode."""


@dataclass(frozen=True)
class FockSpace:
    """Two bosonic modes truncated at k_b and k_a levels respectively."""

    k_b: int
    k_a: int

    def __post_init__(self):
        if self.k_b < 1 or self.k_a < 1:
            raise ValueError(f"cutoffs must be >= 1, got ({self.k_b}, {self.k_a})")

    @property
    def dim(self) -> int:
        return self.k_b * self.k_a

    def index(self, n_b: int, n_a: int) -> int:
        if not (0 <= n_b < self.k_b and 0 <= n_a < self.k_a):
            raise IndexError(f"|{n_b},{n_a}> outside space {self}")
        return n_b * self.k_a + n_a

    def occupations(self, i: int) -> tuple[int, int]:
        return divmod(i, self.k_a)

    @property
    def n_b(self) -> np.ndarray:
        """Bonding occupation of every basis index."""
        return np.arange(self.dim) // self.k_a

    @property
    def n_a(self) -> np.ndarray:
        """Antibonding occupation of every basis index."""
        return np.arange(self.dim) % self.k_a

    def cutoff(self, mode: str) -> int:
        return {"B": self.k_b, "A": self.k_a}[_check_mode(mode)]

    def basis_state(self, n_b: int, n_a: int) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(n_b, n_a)] = 1.0
        return psi


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _clean(mat) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=complex)
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


class OperatorMatrix:
    """Sparse complex operator bound to a :class:`FockSpace`.

    Arithmetic between operators checks that both sides share the space.
    Explicit zeros are never stored.
    """

    __slots__ = ("space", "mat", "hermitian_hint")
    __array_priority__ = 100

    def __init__(self, space: FockSpace, mat, hermitian_hint: bool | None = None):
        mat = _clean(mat)
        if mat.shape != (space.dim, space.dim):
            raise SpaceMismatchError(
                f"matrix shape {mat.shape} does not match space dim {space.dim}"
            )
        self.space = space
        self.mat = mat
        self.hermitian_hint = hermitian_hint

    def __repr__(self):
        return f"OperatorMatrix({self.space}, nnz={self.mat.nnz})"

    def _other(self, other: "OperatorMatrix") -> sp.csr_matrix:
        if not isinstance(other, OperatorMatrix):
            return NotImplemented
        if other.space != self.space:
            raise SpaceMismatchError(f"{self.space} vs {other.space}")
        return other.mat

    def __add__(self, other):
        m = self._other(other)
        if m is NotImplemented:
            return m
        return OperatorMatrix(self.space, self.mat + m)

    def __sub__(self, other):
        m = self._other(other)
        if m is NotImplemented:
            return m
        return OperatorMatrix(self.space, self.mat - m)

    def __neg__(self):
        return OperatorMatrix(self.space, -self.mat, self.hermitian_hint)

    def __mul__(self, scalar):
        if isinstance(scalar, OperatorMatrix):
            return self @ scalar
        if not np.isscalar(scalar):
            return NotImplemented
        hint = self.hermitian_hint if np.isreal(scalar) else None
        return OperatorMatrix(self.space, self.mat * scalar, hint)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.space, self.mat @ self._other(other))
        return self.mat @ other

    def dag(self) -> "OperatorMatrix":
        return OperatorMatrix(self.space, self.mat.conj().T, self.hermitian_hint)

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()

    @property
    def nnz(self) -> int:
        return self.mat.nnz

    def is_zero(self) -> bool:
        return self.mat.nnz == 0

    def is_hermitian(self, atol: float = 0.0) -> bool:
        diff = self.mat - self.mat.conj().T
        if diff.nnz == 0:
            return True
        return bool(np.abs(diff.data).max() <= atol)


Operand = Union[OperatorMatrix, np.ndarray, sp.spmatrix]


def as_array(x: Operand) -> np.ndarray:
    """Dense ndarray view of an operator, sparse matrix or array."""
    if isinstance(x, OperatorMatrix):
        return x.toarray()
    if sp.issparse(x):
        return x.toarray()
    return np.asarray(x)


def ladder(k: int) -> sp.csr_matrix:
    """Single-mode truncated annihilation operator, <n-1|a|n> = sqrt(n)."""
    return sp.diags(np.sqrt(np.arange(1, k, dtype=float)), 1, shape=(k, k), format="csr", dtype=complex)


def embed(space: FockSpace, mode: str, single) -> OperatorMatrix:
    """Lift a single-mode matrix into the two-mode space (identity on the other mode)."""
    _check_mode(mode)
    if mode == "B":
        mat = sp.kron(single, sp.identity(space.k_a, format="csr"), format="csr")
    else:
        mat = sp.kron(sp.identity(space.k_b, format="csr"), single, format="csr")
    return OperatorMatrix(space, mat)


def identity(space: FockSpace) -> OperatorMatrix:
    return OperatorMatrix(space, sp.identity(space.dim, dtype=complex, format="csr"), True)


def zero(space: FockSpace) -> OperatorMatrix:
    return OperatorMatrix(space, sp.csr_matrix((space.dim, space.dim), dtype=complex), True)


def destroy(space: FockSpace, mode: str) -> OperatorMatrix:
    return embed(space, mode, ladder(space.cutoff(mode)))


def create(space: FockSpace, mode: str) -> OperatorMatrix:
    return destroy(space, mode).dag()


def number(space: FockSpace, mode: str) -> OperatorMatrix:
    occ = space.n_b if _check_mode(mode) == "B" else space.n_a
    return OperatorMatrix(space, sp.diags(occ.astype(complex), format="csr"), True)


def parity_operator(space: FockSpace) -> OperatorMatrix:
    """P = sum (-1)^{n_a} |n_b, n_a><n_b, n_a|."""
    signs = np.where(space.n_a % 2 == 0, 1.0, -1.0).astype(complex)
    return OperatorMatrix(space, sp.diags(signs, format="csr"), True)


def commutator(x: OperatorMatrix, y: OperatorMatrix) -> OperatorMatrix:
    return x @ y - y @ x


def displacement_matrix(k: int, alpha: complex) -> np.ndarray:
    """Dense single-mode D(alpha) = exp(alpha a^dag - conj(alpha) a) at cutoff k.

    Warns with :class:`TruncationWarning` if D(alpha)|0> puts more than 1e-6
    of its population on the top level.
    """
    a = ladder(k).toarray()
    gen = alpha * a.conj().T - np.conj(alpha) * a
    d = la.expm(gen)
    leak = abs(d[k - 1, 0]) ** 2
    if leak > 1e-6:
        warnings.warn(
            f"D({alpha:.3g}) leaks {leak:.2e} onto level {k - 1}", TruncationWarning, stacklevel=2
        )
    return d


def displacement(space: FockSpace, mode: str, alpha: complex) -> OperatorMatrix:
    """Displacement of one mode of the two-mode space."""
    single = displacement_matrix(space.cutoff(mode), alpha)
    # drop round-off so the sparse carrier stays exact for alpha = 0
    single[np.abs(single) < 1e-15] = 0.0
    return embed(space, mode, sp.csr_matrix(single))
