"""Eigenpairs of Liouvillian sector blocks.

Two main routes: full dense diagonalization (LAPACK) for small blocks and
implicitly restarted Arnoldi (ARPACK) targeting the largest real parts for
large ones.  A third, shift-invert Arnoldi around a chosen complex shift,
exists for blocks where largest-real-part Arnoldi is too slow (N = 20); it
must be requested explicitly.  All return right and left eigenvectors, biorthonormalized so
that Tr[l_j^dag r_k] = delta_jk, with each right vector rotated so its
largest-magnitude entry is real positive.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .fock import FockSpace
from .liouvillian import SectorBlock, build_liouvillian, extract_block
from .model import ModelParams, hamiltonian_bs, jump_operators

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DENSE_LIMIT = 20000
CLUSTER_TOL = 1e-10
# measured: ~850 restarts for 6 pairs at N=2 with the default Krylov dimension
DEFAULT_MAX_RESTARTS = 3000


class DenseLimitError(ValueError):
    """Block too large for dense diagonalization."""


class NonConvergenceError(RuntimeError):
    """Krylov solve did not reach the requested residuals."""

    def __init__(self, msg: str, values=None, residuals=None):
        super().__init__(msg)
        self.values = values
        self.residuals = residuals


class AmbiguousMatchError(RuntimeError):
    """Left/right eigenvalue matching could not be resolved."""


@dataclass
class SolveReport:
    method: str
    krylov_dim: int
    restarts: int
    converged: bool
    cutoffs_used: tuple[int, int]
    tol: float = DEFAULT_TOL
    matvecs: int = 0
    seconds: float = 0.0


@dataclass
class EigenPair:
    lam: complex
    right: np.ndarray
    left: np.ndarray | None
    sector: str
    residual: float


@dataclass
class EigenSystem:
    """Eigenpairs of one sector block, vectors kept in block coordinates.

    ``right[:, j]`` and ``left[:, j]`` belong to ``values[j]``; values are
    sorted by descending real part.
    """

    block: SectorBlock = field(repr=False)
    values: np.ndarray
    right: np.ndarray = field(repr=False)
    left: np.ndarray | None = field(repr=False)
    residuals: np.ndarray
    report: SolveReport

    @property
    def sector(self) -> str:
        return self.block.sector

    def __len__(self) -> int:
        return len(self.values)

    def pair(self, j: int) -> EigenPair:
        left = None if self.left is None else self.block.scatter(self.left[:, j])
        return EigenPair(
            complex(self.values[j]),
            self.block.scatter(self.right[:, j]),
            left,
            self.sector,
            float(self.residuals[j]),
        )

    def pairs(self) -> Iterator[EigenPair]:
        for j in range(len(self)):
            yield self.pair(j)

    def overlap_matrix(self) -> np.ndarray:
        return self.left.conj().T @ self.right


def _order(values: np.ndarray) -> np.ndarray:
    # descending Re, then descending Im for a reproducible order
    return np.lexsort((-values.imag, -values.real))


def fix_phases(right: np.ndarray) -> np.ndarray:
    """Unit-norm columns whose largest-magnitude entry is real positive."""
    right = right / np.linalg.norm(right, axis=0)
    k = np.argmax(np.abs(right), axis=0)
    top = right[k, np.arange(right.shape[1])]
    return right * (np.abs(top) / top)


def clusters(values: np.ndarray, tol: float = CLUSTER_TOL) -> list[np.ndarray]:
    """Group indices whose eigenvalues are within ``tol`` (single linkage)."""
    n = len(values)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        close = np.flatnonzero(np.abs(values[i + 1 :] - values[i]) <= tol) + i + 1
        for j in close:
            parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [np.array(g) for g in groups.values()]


def biorthonormalize(values: np.ndarray, right: np.ndarray, left: np.ndarray) -> np.ndarray:
    """Rescale left vectors clusterwise so that left^H right = I."""
    left = left.copy()
    for idx in clusters(values):
        s = left[:, idx].conj().T @ right[:, idx]
        if np.linalg.cond(s) > 1e12:
            raise AmbiguousMatchError(f"near-defective cluster at {values[idx]}: overlap {s}")
        left[:, idx] = left[:, idx] @ np.linalg.inv(s).conj().T
    return left


def residuals(block: SectorBlock, values: np.ndarray, right: np.ndarray) -> np.ndarray:
    r = block.matrix @ right - right * values
    return np.linalg.norm(r, axis=0) / np.linalg.norm(right, axis=0)


def dense_eig(block: SectorBlock, dense_limit: int = DENSE_LIMIT, with_left: bool = True) -> EigenSystem:
    if block.dim > dense_limit:
        raise DenseLimitError(
            f"{block.sector} block has dimension {block.dim} > dense limit {dense_limit}; use krylov_eig"
        )
    t0 = time.perf_counter()
    a = block.matrix.toarray()
    if with_left:
        w, vl, vr = la.eig(a, left=True, right=True, check_finite=False)
    else:
        w, vr = la.eig(a, right=True, check_finite=False)
        vl = None
    del a
    o = _order(w)
    w, vr = w[o], fix_phases(vr[:, o])
    if vl is not None:
        vl = biorthonormalize(w, vr, vl[:, o])
    res = residuals(block, w, vr)
    report = SolveReport(
        "dense", block.dim, 0, True, (block.space.k_b, block.space.k_a), seconds=time.perf_counter() - t0
    )
    return EigenSystem(block, w, vr, vl, res, report)


def _start_vector(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def default_krylov_dim(n_pairs: int) -> int:
    return 4 * n_pairs + 20


def _arnoldi(matrix, n_pairs, krylov_dim, max_restarts, seed, arpack_tol, which="LR", partial=False):
    n = matrix.shape[0]
    count = [0]

    def mv(x):
        count[0] += 1
        return matrix @ x

    op = sla.LinearOperator(matrix.shape, matvec=mv, dtype=complex)
    ncv = min(krylov_dim, n - 1)
    try:
        w, v = sla.eigs(
            op, k=n_pairs, which=which, v0=_start_vector(n, seed), ncv=ncv, maxiter=max_restarts, tol=arpack_tol
        )
    except sla.ArpackNoConvergence as exc:
        if partial and len(exc.eigenvalues):
            return exc.eigenvalues, exc.eigenvectors, ncv, count[0], max_restarts
        raise NonConvergenceError(
            f"ARPACK did not converge {n_pairs} pairs within {max_restarts} restarts "
            f"(krylov_dim={ncv}); {len(exc.eigenvalues)} converged",
            values=exc.eigenvalues,
        ) from None
    restarts = max(0, int(np.ceil((count[0] - ncv) / max(1, ncv - n_pairs))))
    return w, v, ncv, count[0], restarts


def krylov_eig(
    block: SectorBlock,
    n_pairs: int = 6,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    krylov_dim: int | None = None,
    max_restarts: int = DEFAULT_MAX_RESTARTS,
    with_left: bool = True,
    arpack_tol: float = 0.0,
) -> EigenSystem:
    """Leading ``n_pairs`` eigenpairs by real part.

    Raises :class:`NonConvergenceError` if ARPACK stalls or any residual
    exceeds ``tol`` on the post-hoc check.
    """
    if n_pairs >= block.dim - 1:
        raise ValueError(f"n_pairs={n_pairs} too large for block dimension {block.dim}; use dense_eig")
    krylov_dim = krylov_dim or default_krylov_dim(n_pairs)
    t0 = time.perf_counter()
    w, v, ncv, nmv, restarts = _arnoldi(block.matrix, n_pairs, krylov_dim, max_restarts, seed, arpack_tol)
    o = _order(w)
    w, v = w[o], fix_phases(v[:, o])
    res = residuals(block, w, v)
    report = SolveReport(
        "krylov", ncv, restarts, bool(np.all(res <= tol)), (block.space.k_b, block.space.k_a), tol, nmv
    )
    if not report.converged:
        raise NonConvergenceError(
            f"post-hoc residuals {res.max():.2e} exceed tol {tol:.0e} in sector {block.sector}",
            values=w,
            residuals=res,
        )
    system = EigenSystem(block, w, v, None, res, report)
    if with_left:
        system = left_eigs(system, seed=seed, krylov_dim=krylov_dim, max_restarts=max_restarts)
    report.seconds = time.perf_counter() - t0
    log.info("krylov %s dim=%d pairs=%d matvecs=%d %.1fs", block.sector, block.dim, n_pairs, nmv, report.seconds)
    return system


def shift_invert_eig(
    block: SectorBlock,
    sigma: complex,
    n_pairs: int = 8,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    krylov_dim: int | None = None,
    max_restarts: int = DEFAULT_MAX_RESTARTS,
    with_left: bool = False,
) -> EigenSystem:
    """The ``n_pairs`` eigenvalues closest to ``sigma``, via one sparse LU of (block - sigma).

    Left vectors reuse the same factorization through conjugate-transpose
    solves.  Returned pairs are sorted by descending real part like the other
    routes, but only cover a neighbourhood of ``sigma``: picking the slowest
    mode this way relies on a good shift.
    """
    if n_pairs >= block.dim - 1:
        raise ValueError(f"n_pairs={n_pairs} too large for block dimension {block.dim}; use dense_eig")
    krylov_dim = krylov_dim or default_krylov_dim(n_pairs)
    t0 = time.perf_counter()
    shifted = (block.matrix - sigma * sp.identity(block.dim, dtype=complex, format="csr")).tocsc()
    lu = sla.splu(shifted, permc_spec="COLAMD")
    del shifted
    inv = _InverseOperator(lu, "N")
    mu, v, ncv, nmv, restarts = _arnoldi(inv, n_pairs, krylov_dim, max_restarts, seed, 0.0, which="LM")
    w = sigma + 1.0 / mu
    o = _order(w)
    w, v = w[o], fix_phases(v[:, o])
    res = residuals(block, w, v)
    report = SolveReport(
        f"shift-invert(sigma={sigma})", ncv, restarts, bool(np.all(res <= tol)), (block.space.k_b, block.space.k_a), tol, nmv
    )
    if not report.converged:
        raise NonConvergenceError(
            f"post-hoc residuals {res.max():.2e} exceed tol {tol:.0e} in sector {block.sector}", values=w, residuals=res
        )
    left = None
    if with_left:
        k = min(n_pairs + 2, block.dim - 2)
        nu, lv, _, nmv_l, _ = _arnoldi(
            _InverseOperator(lu, "H"), k, max(krylov_dim, default_krylov_dim(k)), max_restarts, seed + 1, 0.0, which="LM"
        )
        report.matvecs += nmv_l
        left = biorthonormalize(w, v, lv[:, match_left(w, np.conj(sigma) + 1.0 / nu)])
    report.seconds = time.perf_counter() - t0
    log.info("shift-invert %s dim=%d sigma=%s %.1fs", block.sector, block.dim, sigma, report.seconds)
    return EigenSystem(block, w, v, left, res, report)


class _InverseOperator(sla.LinearOperator):
    def __init__(self, lu, trans: str):
        super().__init__(dtype=np.dtype(complex), shape=lu.shape)
        self.lu, self.trans = lu, trans

    def _matvec(self, x):
        return self.lu.solve(np.asarray(x, dtype=complex).ravel(), trans=self.trans)


def match_left(values: np.ndarray, left_values: np.ndarray, tol: float = CLUSTER_TOL, strict: bool = True) -> np.ndarray:
    """Index into ``left_values`` (eigenvalues of the adjoint) for every right eigenvalue.

    Matching minimizes |conj(mu) - lambda| clusterwise.  With ``strict=False``
    a right eigenvalue without a partner gets index -1 instead of an error.
    """
    target = np.conj(left_values)
    out = np.empty(len(values), dtype=int)
    used: set[int] = set()
    for idx in clusters(values, tol):
        center = values[idx].mean()
        dist = np.abs(target - center)
        cand = [c for c in np.argsort(dist) if c not in used]
        m = len(idx)
        if len(cand) < m:
            raise AmbiguousMatchError(f"no left partner for cluster {values[idx]}")
        if len(cand) > m and dist[cand[m]] - dist[cand[m - 1]] <= tol and dist[cand[m]] <= 1e-6:
            raise AmbiguousMatchError(
                f"ambiguous left match for {values[idx]}: candidates {np.conj(target[cand[: m + 1]])}"
            )
        chosen = cand[:m]
        worst = dist[chosen].max()
        if worst > 1e-6 * max(1.0, abs(center)):
            if strict:
                raise AmbiguousMatchError(f"left spectrum misses {center:.6g} (closest {worst:.2e} away)")
            out[idx] = -1
            continue
        out[idx] = chosen
        used.update(chosen)
    return out


def inverse_iteration_left(block: SectorBlock, lam: complex, seed: int = 0, iters: int = 3) -> np.ndarray:
    """Left eigenvector for an isolated eigenvalue ``lam`` via inverse iteration on the adjoint block."""
    n = block.dim
    shift = np.conj(lam) + 1e-10 * max(1.0, abs(lam))
    adj = block.matrix.conj().T.tocsc()
    lu = sla.splu((adj - shift * sp.identity(n, dtype=complex, format="csc")).tocsc(), permc_spec="COLAMD")
    x = _start_vector(n, seed)
    for _ in range(iters):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
    res = np.linalg.norm(adj @ x - np.conj(lam) * x)
    if res > 1e-6 * max(1.0, abs(lam)):
        raise AmbiguousMatchError(f"inverse iteration for the left partner of {lam:.6g} left residual {res:.1e}")
    return x


def left_eigs(
    system: EigenSystem,
    seed: int = 0,
    krylov_dim: int | None = None,
    max_restarts: int = DEFAULT_MAX_RESTARTS,
    extra: int = 2,
) -> EigenSystem:
    """Fill left eigenvectors from an Arnoldi solve of the adjoint block."""
    block = system.block
    adj = block.matrix.conj().T.tocsr()
    k = min(len(system) + extra, block.dim - 2)
    kd = max(krylov_dim or 0, default_krylov_dim(k))
    # the extra pairs only pad the search; partially converged runs are fine if they cover the matches
    mu, lv, _, nmv, _ = _arnoldi(adj, k, kd, max_restarts, seed + 1, 0.0, partial=True)
    pick = match_left(system.values, mu, strict=False)
    left = np.empty_like(system.right)
    left[:, pick >= 0] = lv[:, pick[pick >= 0]]
    for idx in clusters(system.values):
        if pick[idx[0]] >= 0:
            continue
        if len(idx) > 1:
            raise AmbiguousMatchError(f"no left partners for degenerate cluster {system.values[idx]}")
        log.info("left partner of %s recovered by inverse iteration", system.values[idx[0]])
        left[:, idx[0]] = inverse_iteration_left(block, system.values[idx[0]], seed=seed + 2)
    left = biorthonormalize(system.values, system.right, left)
    system.left = left
    system.report.matvecs += nmv
    return system


def solve_block(block: SectorBlock, method: str = "auto", n_pairs: int = 6, auto_dense_max: int = 2000, **kw) -> EigenSystem:
    """Dispatch on ``method`` in {"dense", "krylov", "shift-invert", "auto"}.

    "auto" never picks shift-invert; that route needs ``sigma``.
    """
    if method == "auto":
        method = "dense" if block.dim <= auto_dense_max else "krylov"
    if method == "dense":
        return dense_eig(block, dense_limit=kw.get("dense_limit", DENSE_LIMIT))
    if method == "krylov":
        kw.pop("dense_limit", None)
        return krylov_eig(block, n_pairs=n_pairs, **kw)
    if method == "shift-invert":
        kw.pop("dense_limit", None)
        return shift_invert_eig(block, n_pairs=n_pairs, **kw)
    raise ValueError(f"unknown method {method!r}")


def model_block(params: ModelParams, space: FockSpace, sector: str) -> SectorBlock:
    superop = build_liouvillian(hamiltonian_bs(space, params), jump_operators(space, params))
    return extract_block(superop, sector)


@dataclass
class SweepPoint:
    k_b: int
    values: np.ndarray
    report: SolveReport
    stable: bool | None = None


def convergence_sweep(
    params: ModelParams,
    k_b_ladder: Sequence[int],
    k_a: int = 6,
    sector: str = "eo",
    n_pairs: int = 4,
    method: str = "auto",
    stability_tol: float = 1e-6,
    **solver_kw,
) -> list[SweepPoint]:
    """Leading eigenvalues per bonding cutoff; ``stable`` compares with the previous rung."""
    points: list[SweepPoint] = []
    for k_b in k_b_ladder:
        block = model_block(params, FockSpace(k_b, k_a), sector)
        if method != "dense":
            solver_kw.setdefault("with_left", False)
        system = solve_block(block, method=method, n_pairs=n_pairs, **solver_kw)
        vals = system.values[:n_pairs]
        stable = None
        if points:
            stable = bool(np.abs(points[-1].values[0] - vals[0]) < stability_tol)
        points.append(SweepPoint(k_b, vals, system.report, stable))
    return points


# ---- on-disk cache ---------------------------------------------------------


def cache_key(params: ModelParams, space: FockSpace, sector: str, settings: dict) -> str:
    payload = json.dumps(
        {"params": params.as_dict(), "cutoffs": [space.k_b, space.k_a], "sector": sector, "settings": settings},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def save_system(directory, key: str, system: EigenSystem) -> Path:
    d = Path(directory) / key
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "values.npy", system.values)
    np.save(d / "right.npy", system.right)
    np.save(d / "residuals.npy", system.residuals)
    if system.left is not None:
        np.save(d / "left.npy", system.left)
    manifest = {"sector": system.sector, "report": asdict(system.report), "n": len(system)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_system(directory, key: str, block: SectorBlock) -> EigenSystem | None:
    d = Path(directory) / key
    if not (d / "manifest.json").exists():
        return None
    manifest = json.loads((d / "manifest.json").read_text())
    rep = manifest["report"]
    rep["cutoffs_used"] = tuple(rep["cutoffs_used"])
    left = np.load(d / "left.npy") if (d / "left.npy").exists() else None
    return EigenSystem(
        block, np.load(d / "values.npy"), np.load(d / "right.npy"), left, np.load(d / "residuals.npy"), SolveReport(**rep)
    )
