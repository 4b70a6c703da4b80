"""Vectorized Lindblad generator and its exact parity-sector blocks.

Density matrices are vectorized by column stacking, vec(A X B) = (B^T kron A) vec(X),
so vectorized index ``col * dim + row`` holds X[row, col].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .fock import FockSpace, OperatorMatrix, SpaceMismatchError, as_array

SECTORS = ("ee", "eo", "oe", "oo")
VECTORIZATION = "column-stacking"

TRIPLET_DTYPE = np.dtype([("row", "<u8"), ("col", "<u8"), ("re", "<f8"), ("im", "<f8")])


class SymmetryViolationError(RuntimeError):
    """A generator couples different parity sectors."""

    def __init__(self, row: int, col: int, value: complex, sectors: tuple[str, str]):
        self.row, self.col, self.value, self.sectors = row, col, value, sectors
        super().__init__(
            f"entry ({row}, {col}) = {value:.3e} couples sector {sectors[1]} into {sectors[0]}"
        )


def vectorize(rho) -> np.ndarray:
    x = as_array(rho)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {x.shape}")
    return x.reshape(-1, order="F")


def devectorize(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if v.size != dim * dim:
        raise ValueError(f"vector of length {v.size} is not a vectorized {dim}x{dim} matrix")
    return v.reshape(dim, dim, order="F")


def sector_labels(space: FockSpace) -> np.ndarray:
    """Sector code per vectorized index: 2*p_row + p_col with p = n_a mod 2."""
    p = space.n_a % 2
    col, row = np.divmod(np.arange(space.dim**2), space.dim)
    return 2 * p[row] + p[col]


def sector_masks(space: FockSpace) -> dict[str, np.ndarray]:
    """Ascending vectorized indices of each (row parity, column parity) sector."""
    codes = sector_labels(space)
    return {name: np.flatnonzero(codes == k) for k, name in enumerate(SECTORS)}


@dataclass
class SectorBlock:
    sector: str
    matrix: sp.csr_matrix
    index_map: np.ndarray
    space: FockSpace

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def scatter(self, v: np.ndarray) -> np.ndarray:
        """Embed a block vector as a full dim x dim operator."""
        full = np.zeros(self.space.dim**2, dtype=complex)
        full[self.index_map] = v
        return devectorize(full, self.space.dim)

    def gather(self, op) -> np.ndarray:
        return vectorize(op)[self.index_map]


@dataclass
class Superoperator:
    space: FockSpace
    matrix: sp.csr_matrix
    sector_masks: dict[str, np.ndarray] = field(repr=False)
    vectorization: str = VECTORIZATION
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        n = self.space.dim**2
        if self.matrix.shape != (n, n):
            raise ValueError(f"superoperator shape {self.matrix.shape} != ({n}, {n})")

    def apply(self, rho) -> np.ndarray:
        return devectorize(self.matrix @ vectorize(rho), self.space.dim)

    def check_symmetry(self) -> None:
        """Raise :class:`SymmetryViolationError` on the first cross-sector entry."""
        if self._checked:
            return
        codes = sector_labels(self.space)
        coo = self.matrix.tocoo()
        bad = np.flatnonzero((codes[coo.row] != codes[coo.col]) & (coo.data != 0))
        if bad.size:
            k = bad[np.argmax(np.abs(coo.data[bad]))]
            r, c = int(coo.row[k]), int(coo.col[k])
            raise SymmetryViolationError(r, c, complex(coo.data[k]), (SECTORS[codes[r]], SECTORS[codes[c]]))
        self._checked = True


def _single_matrix(op, space: FockSpace) -> sp.csr_matrix:
    if isinstance(op, OperatorMatrix):
        if op.space != space:
            raise SpaceMismatchError(f"{op.space} vs {space}")
        return op.mat
    m = sp.csr_matrix(op, dtype=complex)
    if m.shape != (space.dim, space.dim):
        raise SpaceMismatchError(f"operator shape {m.shape} vs space dim {space.dim}")
    return m


def dissipator(L, space: FockSpace) -> sp.csr_matrix:
    """Vectorized D[L] rho = L rho L^dag - (1/2){L^dag L, rho}."""
    L = _single_matrix(L, space)
    eye = sp.identity(space.dim, dtype=complex, format="csr")
    ldl = (L.conj().T @ L).tocsr()
    out = sp.kron(L.conj(), L) - 0.5 * sp.kron(eye, ldl) - 0.5 * sp.kron(ldl.T, eye)
    return out.tocsr()


def hamiltonian_part(H, space: FockSpace) -> sp.csr_matrix:
    """Vectorized -i[H, rho]."""
    H = _single_matrix(H, space)
    eye = sp.identity(space.dim, dtype=complex, format="csr")
    return (-1j * (sp.kron(eye, H) - sp.kron(H.T, eye))).tocsr()


def build_liouvillian(H: OperatorMatrix, jumps: Iterable[tuple[float, OperatorMatrix]]) -> Superoperator:
    space = H.space
    mat = hamiltonian_part(H, space)
    for rate, L in jumps:
        if rate:
            mat = mat + rate * dissipator(L, space)
    mat = sp.csr_matrix(mat)
    mat.eliminate_zeros()
    mat.sort_indices()
    return Superoperator(space, mat, sector_masks(space))


def extract_block(superop: Superoperator, sector: str) -> SectorBlock:
    if sector not in SECTORS:
        raise ValueError(f"unknown sector {sector!r}")
    superop.check_symmetry()
    idx = superop.sector_masks[sector]
    block = superop.matrix[idx][:, idx].tocsr()
    return SectorBlock(sector, block, idx, superop.space)


def block_diagonal(superop: Superoperator, sectors: Sequence[str] = SECTORS) -> list[SectorBlock]:
    return [extract_block(superop, s) for s in sectors]


def save_triplets(path, matrix: sp.spmatrix, **meta) -> Path:
    """Dump a sparse matrix as little-endian (u64 row, u64 col, f64 re, f64 im) records.

    Shape and any extra metadata go to a ``.json`` sidecar next to the binary.
    """
    path = Path(path)
    coo = sp.coo_matrix(matrix)
    rec = np.empty(coo.nnz, dtype=TRIPLET_DTYPE)
    rec["row"], rec["col"] = coo.row, coo.col
    rec["re"], rec["im"] = coo.data.real, coo.data.imag
    path.write_bytes(rec.tobytes())
    side = {"shape": list(coo.shape), "nnz": int(coo.nnz), "format": "u64,u64,f64,f64 little-endian"}
    side.update(meta)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def load_triplets(path, shape: tuple[int, int] | None = None) -> sp.csr_matrix:
    path = Path(path)
    if shape is None:
        shape = tuple(json.loads(path.with_suffix(path.suffix + ".json").read_text())["shape"])
    rec = np.frombuffer(path.read_bytes(), dtype=TRIPLET_DTYPE)
    data = rec["re"] + 1j * rec["im"]
    return sp.csr_matrix((data, (rec["row"].astype(np.int64), rec["col"].astype(np.int64))), shape=shape)
