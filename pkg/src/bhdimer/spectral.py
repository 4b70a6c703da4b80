"""Quantities derived from Liouvillian eigenoperators.

Selection of the steady and non-stationary eigenoperators per parity sector,
partial traces, purities, normalized Hilbert-Schmidt distances, the
parity-adapted common basis used for noiseless-subsystem checks, amplitude
expectations and Wigner functions.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .eigensolver import EigenPair, EigenSystem, solve_block
from .fock import FockSpace, as_array, ladder
from .liouvillian import SECTORS, build_liouvillian, extract_block
from .model import ModelParams, hamiltonian_bs, jump_operators

log = logging.getLogger(__name__)

PAIRS = (("ee", "oo"), ("ee", "eo"), ("oo", "eo"), ("ee", "oe"), ("oo", "oe"), ("eo", "oe"))


class SelectionError(ValueError):
    pass


class HermiticityWarning(UserWarning):
    pass


# ---- selection ---------------------------------------------------------------


def select_nonstationary(
    system: EigenSystem,
    previous: np.ndarray | None = None,
    re_tol: float = 1e-8,
) -> EigenPair:
    """Pair with the largest real part.

    Candidates within ``re_tol`` of the maximum are disambiguated by overlap
    with ``previous`` (the selection at the neighbouring sweep point) when
    given, otherwise by the sign of Im: positive for eo, negative for oe.
    """
    if len(system) == 0:
        raise SelectionError(f"empty eigensystem for sector {system.sector}")
    re = system.values.real
    cand = np.flatnonzero(re >= re.max() - re_tol)
    if len(cand) > 1:
        if previous is not None:
            scores = [abs(hs_overlap(system.pair(int(k)).right, previous)) for k in cand]
            j = int(cand[int(np.argmax(scores))])
        else:
            sign = -1.0 if system.sector == "oe" else 1.0
            j = int(cand[int(np.argmax(sign * system.values[cand].imag))])
    else:
        j = int(cand[0])
    return system.pair(j)


def select_steady(system: EigenSystem, zero_tol: float = 1e-8) -> EigenPair:
    zeros = np.flatnonzero(np.abs(system.values) < zero_tol)
    if len(zeros) != 1:
        raise SelectionError(
            f"sector {system.sector} has {len(zeros)} eigenvalues with |lambda| < {zero_tol}, expected 1"
        )
    return system.pair(int(zeros[0]))


def branch_labels(selected: list[EigenPair]) -> list[int]:
    """Branch index per sweep point; a new branch starts where the overlap with the previous selection drops below 1/2."""
    labels = [0]
    for prev, cur in zip(selected, selected[1:]):
        same = abs(hs_overlap(prev.right, cur.right)) >= 0.5
        labels.append(labels[-1] if same else labels[-1] + 1)
    return labels


# ---- operator helpers -----------------------------------------------------------


def _four(op, space: FockSpace) -> np.ndarray:
    x = as_array(op)
    return x.reshape(space.k_b, space.k_a, space.k_b, space.k_a)


def partial_trace(op, space: FockSpace, keep: str) -> np.ndarray:
    t = _four(op, space)
    if keep == "B":
        return np.einsum("iaja->ij", t)
    if keep == "A":
        return np.einsum("bibj->ij", t)
    raise ValueError(f"keep must be 'B' or 'A', got {keep!r}")


def a_sector_block(op, space: FockSpace, row_na: int, col_na: int) -> np.ndarray:
    """Bonding-mode matrix <. , row_na| op |. , col_na>."""
    if not (0 <= row_na < space.k_a and 0 <= col_na < space.k_a):
        raise IndexError(f"antibonding indices ({row_na}, {col_na}) outside k_a={space.k_a}")
    return _four(op, space)[:, row_na, :, col_na].copy()


def hs_inner(x, y) -> complex:
    return complex(np.vdot(as_array(x), as_array(y)))


def hs_norm(x) -> float:
    return float(np.linalg.norm(as_array(x)))


def hs_overlap(x, y) -> complex:
    """Tr[x^dag y] of the unit-Frobenius-normalized arguments."""
    x, y = as_array(x), as_array(y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("zero operator has no direction")
    return complex(np.vdot(x, y) / (nx * ny))


def hs_distance(z1, z2) -> float:
    """1 - |Tr[z1^dag z2]| with both arguments scaled to unit Frobenius norm."""
    d = 1.0 - abs(hs_overlap(z1, z2))
    return float(min(max(d, 0.0), 1.0))


def trace_norm(x) -> float:
    return float(np.linalg.svd(as_array(x), compute_uv=False).sum())


def purity(x) -> float:
    """Tr[x x^dag] / (sum of singular values)^2; Tr[rho^2] for a density matrix."""
    x = as_array(x)
    s = np.linalg.svd(x, compute_uv=False)
    if s.sum() == 0:
        raise ValueError("purity of the zero operator is undefined")
    return float((s**2).sum() / s.sum() ** 2)


def expectation(op, observable, space: FockSpace | None = None, normalization: str = "trace") -> complex:
    """Normalized expectation value.

    ``trace``: Tr[observable op] / Tr[op].  ``block-trace``: for traceless
    eo/oe operators; ``observable`` acts on the bonding mode only and is
    applied to the (0, 1) antibonding block, normalized by that block's trace.
    """
    if normalization == "trace":
        x, o = as_array(op), as_array(observable)
        tr = np.trace(x)
        if abs(tr) < 1e-12:
            raise ValueError("operator trace vanishes; use normalization='block-trace'")
        return complex(np.trace(o @ x) / tr)
    if normalization == "block-trace":
        if space is None:
            raise ValueError("block-trace normalization needs the Fock space")
        blk = a_sector_block(op, space, 0, 1)
        tr = np.trace(blk)
        if abs(tr) < 1e-12:
            raise ValueError("(0,1) antibonding block is traceless")
        return complex(np.trace(as_array(observable) @ blk) / tr)
    raise ValueError(f"unknown normalization {normalization!r}")


# ---- eigenoperator sets ----------------------------------------------------------


@dataclass
class EigenOperatorSet:
    """Steady (ee, oo) and slowest non-stationary (eo, oe) eigenoperators.

    ``ee``/``oo`` are scaled to unit trace, ``eo``/``oe`` to unit trace norm
    with the largest entry of ``eo`` real positive and ``oe`` its image under
    the same rule.  Left operators are rescaled to keep Tr[l^dag r] = 1.
    """

    space: FockSpace
    params: ModelParams
    right: dict[str, np.ndarray] = field(repr=False)
    left: dict[str, np.ndarray] = field(repr=False)
    lambdas: dict[str, complex]
    residuals: dict[str, float] = field(default_factory=dict)
    normalization: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, sector: str) -> np.ndarray:
        return self.right[sector]

    @property
    def r_ee(self):
        return self.right["ee"]

    @property
    def r_oo(self):
        return self.right["oo"]

    @property
    def r_eo(self):
        return self.right["eo"]

    @property
    def r_oe(self):
        return self.right["oe"]


def _phase_fix(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1)
    top = flat[np.argmax(np.abs(flat))]
    return x * (abs(top) / top)


def normalize_pair(pair: EigenPair) -> tuple[np.ndarray, np.ndarray | None, str]:
    """Scale a right/left pair per sector convention, keeping Tr[l^dag r] = 1."""
    r = pair.right
    if pair.sector in ("ee", "oo"):
        r, tag = r / np.trace(r), "trace"
    else:
        r = _phase_fix(r)
        r, tag = r / trace_norm(r), "trace-norm"
    l = pair.left
    if l is not None:
        l = l / np.conj(np.vdot(l, r))
    return r, l, tag


def eigenoperator_set(
    params: ModelParams,
    space: FockSpace,
    method: str = "auto",
    n_pairs: int = 6,
    derive_oe: bool = False,
    systems: Mapping[str, EigenSystem] | None = None,
    previous: "EigenOperatorSet | None" = None,
    **solver_kw,
) -> tuple[EigenOperatorSet, dict[str, EigenSystem]]:
    """Solve the four sectors and pick r_ee, r_oo, r_eo, r_oe.

    With ``derive_oe`` the oe operator is taken as the adjoint of r_eo (exact
    for Lindblad generators) instead of being solved separately.
    """
    superop = build_liouvillian(hamiltonian_bs(space, params), jump_operators(space, params))
    systems = dict(systems or {})
    sectors = ("ee", "oo", "eo") if derive_oe else SECTORS
    for s in sectors:
        if s not in systems:
            systems[s] = solve_block(extract_block(superop, s), method=method, n_pairs=n_pairs, **solver_kw)
    right, left, lam, res, tags = {}, {}, {}, {}, {}
    for s in sectors:
        if s in ("ee", "oo"):
            pair = select_steady(systems[s])
        else:
            prev = None if previous is None else previous.right[s]
            pair = select_nonstationary(systems[s], previous=prev)
        right[s], left[s], tags[s] = normalize_pair(pair)
        lam[s], res[s] = pair.lam, pair.residual
    if derive_oe:
        right["oe"] = right["eo"].conj().T
        left["oe"] = None if left["eo"] is None else left["eo"].conj().T
        lam["oe"], res["oe"], tags["oe"] = np.conj(lam["eo"]), res["eo"], "adjoint-of-eo"
    return EigenOperatorSet(space, params, right, left, lam, res, tags), systems


# ---- noiseless-subsystem analysis -------------------------------------------------


@dataclass
class CommonBasis:
    """Parity-adapted eigenbasis of r_ee (even block) and r_oo (odd block).

    ``even``/``odd`` hold basis-state indices of each parity; ``w_even``/``w_odd``
    are the eigenvector matrices sorted by descending eigenvalue, with the odd
    vectors' phases chosen so the paired diagonal of r_eo is real nonnegative.
    """

    even: np.ndarray
    odd: np.ndarray
    w_even: np.ndarray
    w_odd: np.ndarray

    def unitary(self, dim: int) -> np.ndarray:
        u = np.zeros((dim, dim), dtype=complex)
        u[np.ix_(self.even, np.arange(len(self.even)))] = self.w_even
        u[np.ix_(self.odd, len(self.even) + np.arange(len(self.odd)))] = self.w_odd
        return u

    def factor(self, op: np.ndarray, rows: str, cols: str) -> np.ndarray:
        """The (rows, cols) parity block of ``op`` expressed in the common basis."""
        ri, wr = (self.even, self.w_even) if rows == "e" else (self.odd, self.w_odd)
        ci, wc = (self.even, self.w_even) if cols == "e" else (self.odd, self.w_odd)
        return wr.conj().T @ op[np.ix_(ri, ci)] @ wc


def _hermitian_eig(x: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    anti = np.linalg.norm(x - x.conj().T) / max(np.linalg.norm(x), 1e-300)
    if anti > 1e-6:
        warnings.warn(f"{name} has relative anti-Hermitian part {anti:.1e}", HermiticityWarning, stacklevel=3)
    vals, vecs = np.linalg.eigh(0.5 * (x + x.conj().T))
    o = np.argsort(-vals, kind="stable")
    return vals[o], vecs[:, o]


def common_basis(ops: EigenOperatorSet) -> CommonBasis:
    """Basis diagonalizing r_ee and r_oo simultaneously.

    r_ee and r_oo live on the even and odd antibonding-parity subspaces, so the
    eigenbasis of their Hermitian average splits into an even and an odd part.
    Eigenvectors are paired across parities by descending eigenvalue.
    """
    space = ops.space
    even = np.flatnonzero(space.n_a % 2 == 0)
    odd = np.flatnonzero(space.n_a % 2 == 1)
    _, we = _hermitian_eig(ops.r_ee[np.ix_(even, even)], "r_ee")
    _, wo = _hermitian_eig(ops.r_oo[np.ix_(odd, odd)], "r_oo")
    m = min(len(even), len(odd))
    diag = np.einsum("ij,ik,kj->j", we[:, :m].conj(), ops.r_eo[np.ix_(even, odd)], wo[:, :m])
    phase = np.ones(len(odd), dtype=complex)
    nz = np.abs(diag) > 0
    phase[:m][nz] = np.abs(diag[nz]) / diag[nz]
    return CommonBasis(even, odd, we, wo * phase)


def _pad(x: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n), dtype=complex)
    out[: x.shape[0], : x.shape[1]] = x
    return out


def factor_matrices(ops: EigenOperatorSet, basis: CommonBasis | None = None) -> dict[str, np.ndarray]:
    """The z matrices: each eigenoperator's parity block in the common basis.

    Stripping the parity label leaves operators on the same index set, so
    z_ee = z_oo = z_eo = z_oe (up to scale) exactly when the four share one
    factor, i.e. a noiseless subsystem.
    """
    basis = basis or common_basis(ops)
    n = max(len(basis.even), len(basis.odd))
    return {s: _pad(basis.factor(ops.right[s], s[0], s[1]), n) for s in SECTORS}


def ns_distances(ops: EigenOperatorSet, pairs=PAIRS) -> dict[str, float]:
    z = factor_matrices(ops)
    return {f"{a}-{b}": hs_distance(z[a], z[b]) for a, b in pairs}


def bonding_operators(ops: EigenOperatorSet) -> dict[str, np.ndarray]:
    """Bonding-mode reductions: Tr_A for ee/oo, the (0,1)/(1,0) antibonding blocks for eo/oe."""
    sp_ = ops.space
    return {
        "ee": partial_trace(ops.r_ee, sp_, "B"),
        "oo": partial_trace(ops.r_oo, sp_, "B"),
        "eo": a_sector_block(ops.r_eo, sp_, 0, 1),
        "oe": a_sector_block(ops.r_oe, sp_, 1, 0),
    }


def bonding_distances(ops: EigenOperatorSet, pairs=PAIRS) -> dict[str, float]:
    z = bonding_operators(ops)
    return {f"{a}-{b}": hs_distance(z[a], z[b]) for a, b in pairs}


def antibonding_purities(ops: EigenOperatorSet) -> dict[str, float]:
    return {s: purity(partial_trace(ops.right[s], ops.space, "A")) for s in SECTORS}


def bonding_amplitudes(ops: EigenOperatorSet) -> dict[str, complex]:
    """<a_B> per eigenoperator (block-trace normalization for eo/oe)."""
    sp_ = ops.space
    a_b = ladder(sp_.k_b).toarray()
    out = {}
    for s in ("ee", "oo"):
        out[s] = expectation(partial_trace(ops.right[s], sp_, "B"), a_b)
    out["eo"] = expectation(ops.r_eo, a_b, sp_, "block-trace")
    out["oe"] = expectation(a_sector_block(ops.r_oe, sp_, 1, 0), a_b)
    return out


# ---- Wigner function -----------------------------------------------------------------


def default_grid(extent: float = 4.0, step: float = 0.05) -> np.ndarray:
    return np.arange(-extent, extent + step / 2, step)


def wigner(rho, xvec: np.ndarray, yvec: np.ndarray | None = None) -> np.ndarray:
    """W(alpha) = (2/pi) Tr[D(alpha) Pi D(alpha)^dag rho] on the grid alpha = x + i y.

    Uses the closed-form displaced-parity matrix elements (generalized
    Laguerre polynomials), exact for any operator supported on the truncated
    space.  Returns a real array for Hermitian ``rho`` and a complex one
    otherwise; rows index ``yvec``.
    """
    rho = as_array(rho)
    yvec = xvec if yvec is None else yvec
    x, y = np.meshgrid(xvec, yvec)
    alpha = x + 1j * y
    r2 = 4 * np.abs(alpha) ** 2
    logabs = np.log(np.where(alpha == 0, 1.0, 2 * np.abs(alpha)))
    phase = np.exp(1j * np.angle(alpha))
    k = rho.shape[0]
    w = np.zeros(alpha.shape, dtype=complex)
    tiny = 1e-14 * max(np.abs(rho).max(), 1e-300)
    for m in range(k):
        if abs(rho[m, m]) > tiny:
            w += rho[m, m] * (-1) ** m * eval_genlaguerre(m, 0, r2) * np.exp(-r2 / 2)
        for n in range(m + 1, k):
            lo, hi = rho[m, n], rho[n, m]
            if abs(lo) <= tiny and abs(hi) <= tiny:
                continue
            d = n - m
            mag = np.exp(d * logabs + 0.5 * (gammaln(m + 1) - gammaln(n + 1)) - r2 / 2)
            if d > 0:
                mag = np.where(alpha == 0, 0.0, mag)
            lag = eval_genlaguerre(m, d, r2) * (-1) ** m * mag
            w += lo * lag * phase**d + hi * lag * np.conj(phase) ** d
    w *= 2 / np.pi
    if np.allclose(rho, rho.conj().T, atol=1e-12):
        return w.real
    return w
