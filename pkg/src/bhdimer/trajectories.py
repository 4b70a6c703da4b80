"""Quantum-jump trajectories, master-equation propagation and the phase-kick protocol."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.linalg as la
from scipy.integrate import DOP853
from scipy.optimize import brentq

from .fock import FockSpace, as_array
from .liouvillian import Superoperator, build_liouvillian, devectorize, vectorize
from .model import hamiltonian_bs, jump_operators
from .spectral import EigenOperatorSet, default_grid, partial_trace, wigner

log = logging.getLogger(__name__)

NEGATIVITY_TOL = 1e-8
MAX_REPAIR = 0.05


class PositivityError(ValueError):
    """Assembled initial state needs a positivity repair larger than allowed."""


class IntegrationError(RuntimeError):
    pass


# ---- initial state ---------------------------------------------------------------------


@dataclass(frozen=True)
class InitialStateSpec:
    b: float
    c0: complex
    source: EigenOperatorSet = field(repr=False)

    def __post_init__(self):
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


@dataclass
class InitialState:
    rho: np.ndarray
    repair: float
    min_eigenvalue: float


def assemble_initial(spec: InitialStateSpec, max_repair: float = MAX_REPAIR) -> InitialState:
    """b r_ee + (1-b) r_oo + c0 r_eo + conj(c0) r_oe, made a valid density matrix.

    Negative eigenvalues below -1e-8 are clipped and the trace renormalized;
    ``repair`` is the total clipped weight.
    """
    ops = spec.source
    rho = spec.b * ops.r_ee + (1 - spec.b) * ops.r_oo + spec.c0 * ops.r_eo + np.conj(spec.c0) * ops.r_oe
    rho = 0.5 * (rho + rho.conj().T)
    vals, vecs = np.linalg.eigh(rho)
    lo = float(vals.min())
    repair = 0.0
    if lo < -NEGATIVITY_TOL:
        repair = float(-vals[vals < 0].sum())
        if repair > max_repair:
            raise PositivityError(
                f"positivity repair {repair:.3g} exceeds {max_repair}; |c0| = {abs(spec.c0):.3g} is too large "
                "for these eigenoperators"
            )
        vals = np.clip(vals, 0.0, None)
        rho = (vecs * vals) @ vecs.conj().T
    rho = rho / np.trace(rho).real
    return InitialState(rho, repair, lo)


def sample_pure_states(rho: np.ndarray, rngs: Sequence[np.random.Generator]) -> list[np.ndarray]:
    """One pure state per generator, drawn from the spectral decomposition of ``rho``."""
    vals, vecs = np.linalg.eigh(rho)
    p = np.clip(vals, 0.0, None)
    p /= p.sum()
    return [vecs[:, rng.choice(len(p), p=p)].astype(complex) for rng in rngs]


# ---- kicks -------------------------------------------------------------------------------


@dataclass(frozen=True)
class KickProtocol:
    t_kick: float
    delta_phi: float


def kick_phases(space: FockSpace, delta_phi: float) -> np.ndarray:
    """Diagonal of exp(i delta_phi (n_B + n_A))."""
    return np.exp(1j * delta_phi * (space.n_b + space.n_a))


def apply_kick(psi: np.ndarray, space: FockSpace, protocol: KickProtocol | float) -> np.ndarray:
    dphi = protocol.delta_phi if isinstance(protocol, KickProtocol) else float(protocol)
    return kick_phases(space, dphi) * psi


def kick_density(rho: np.ndarray, space: FockSpace, protocol: KickProtocol | float) -> np.ndarray:
    dphi = protocol.delta_phi if isinstance(protocol, KickProtocol) else float(protocol)
    d = kick_phases(space, dphi)
    return d[:, None] * rho * d.conj()[None, :]


# ---- quantum jumps --------------------------------------------------------------------------


class JumpPropagator:
    """Exact no-jump propagation under H_eff = H - (i/2) sum rate L^dag L.

    Uses the eigendecomposition of H_eff when it is well conditioned and
    falls back to the matrix exponential otherwise.
    """

    def __init__(self, H, jumps, cond_max: float = 1e8):
        h = as_array(H).astype(complex)
        self.ops = [(float(r), as_array(L).astype(complex)) for r, L in jumps if r]
        self.h_eff = h - 0.5j * sum(r * (L.conj().T @ L) for r, L in self.ops) if self.ops else h
        self.dim = h.shape[0]
        e, v = la.eig(self.h_eff)
        self.cond = float(np.linalg.cond(v))
        self.exact = self.cond < cond_max
        if self.exact:
            self.e, self.v, self.vinv = e, v, la.inv(v)
        else:
            log.warning("H_eff eigenvectors ill-conditioned (cond %.1e); using expm stepping", self.cond)

    def coefficients(self, psi: np.ndarray) -> np.ndarray:
        return self.vinv @ psi if self.exact else psi

    def state(self, coef: np.ndarray, s) -> np.ndarray:
        """Unnormalized state a time ``s`` after the reference point; rows per time if ``s`` is 1-D."""
        if np.ndim(s):
            s = np.asarray(s, dtype=float)
            if self.exact:
                return (np.exp(-1j * np.outer(s, self.e)) * coef) @ self.v.T
            return np.array([la.expm(-1j * self.h_eff * si) @ coef for si in s])
        if self.exact:
            return self.v @ (np.exp(-1j * self.e * s) * coef)
        return la.expm(-1j * self.h_eff * s) @ coef

    def norm2(self, coef, s: float) -> float:
        x = self.state(coef, s)
        return float(np.vdot(x, x).real)

    def jump(self, psi: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        outs = [L @ psi for _, L in self.ops]
        w = np.array([r * np.vdot(o, o).real for (r, _), o in zip(self.ops, outs)])
        k = int(rng.choice(len(w), p=w / w.sum()))
        return outs[k] / np.sqrt(np.vdot(outs[k], outs[k]).real), k


@dataclass
class _Walker:
    """Current position of one trajectory: last reference state and pending threshold."""

    psi: np.ndarray
    t: float
    threshold: float
    rng: np.random.Generator
    jumps: list = field(default_factory=list)


def _advance(prop: JumpPropagator, w: _Walker, t_end: float, record: np.ndarray, out: list, norm_tol: float = 1e-6):
    """Move ``w`` to ``t_end``, appending normalized states at ``record`` times in (w.t, t_end]."""
    coef = prop.coefficients(w.psi)
    todo = record[(record > w.t) & (record <= t_end)]
    while True:
        if not prop.ops or prop.norm2(coef, t_end - w.t) > w.threshold:
            t_jump = None
        else:
            f = lambda s: prop.norm2(coef, s) - w.threshold
            s = brentq(f, 0.0, t_end - w.t, xtol=1e-13, rtol=1e-13)
            t_jump = w.t + s
        upto = todo if t_jump is None else todo[todo < t_jump]
        if len(upto):
            states = prop.state(coef, upto - w.t)
            out.extend(states / np.linalg.norm(states, axis=1, keepdims=True))
            todo = todo[len(upto) :]
        if t_jump is None:
            x = prop.state(coef, t_end - w.t)
            w.psi = x / np.sqrt(np.vdot(x, x).real)
            w.threshold /= float(np.vdot(x, x).real)
            w.t = t_end
            return
        x = prop.state(coef, t_jump - w.t)
        drift = abs(np.vdot(x, x).real - w.threshold)
        if drift > norm_tol:
            raise IntegrationError(f"norm {np.vdot(x, x).real:.8f} misses threshold {w.threshold:.8f} at t={t_jump}")
        w.psi, k = prop.jump(x, w.rng)
        w.jumps.append((t_jump, k))
        w.t = t_jump
        w.threshold = w.rng.uniform()
        coef = prop.coefficients(w.psi)


@dataclass
class PureTrajectory:
    times: np.ndarray
    states: np.ndarray
    jump_times: np.ndarray
    jump_channels: np.ndarray


def trajectory_rng(seed: int, index: int, branch: int | None = None) -> np.random.Generator:
    """Generator for trajectory ``index``: SeedSequence(seed, spawn_key=(index,)) [+ (branch,)]."""
    key = (index,) if branch is None else (index, branch)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def qjump_evolve(psi0, H, jumps, t_grid, rng_seed, propagator: JumpPropagator | None = None) -> PureTrajectory:
    """Monte Carlo wave-function trajectory sampled at ``t_grid`` (must start at or after 0)."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-10:
        raise ValueError("psi0 must have unit norm")
    prop = propagator or JumpPropagator(H, jumps)
    t_grid = np.asarray(t_grid, dtype=float)
    w = _Walker(psi0, 0.0, rng.uniform(), rng)
    out: list = [psi0] if t_grid[0] == 0 else []
    _advance(prop, w, float(t_grid[-1]), t_grid, out)
    jt = np.array([j[0] for j in w.jumps])
    jc = np.array([j[1] for j in w.jumps], dtype=int)
    return PureTrajectory(t_grid, np.array(out), jt, jc)


@dataclass
class TrajectoryEnsemble:
    """Ensemble sampled at ``sample_times``.

    ``states`` (n_traj, n_times, dim) is kept when requested; ``rho`` is the
    ensemble-mean density matrix per sample time, accumulated in index order.
    """

    n_traj: int
    seed: int
    sample_times: np.ndarray
    rho: np.ndarray
    states: np.ndarray | None = None
    jump_log: list = field(default_factory=list)

    def subset_rho(self, n: int) -> np.ndarray:
        if self.states is None:
            raise ValueError("states were not kept")
        s = self.states[:n]
        return np.einsum("kti,ktj->tij", s, s.conj()) / n

    def standard_error(self, n: int | None = None) -> np.ndarray:
        """Per-time Frobenius standard error of the mean density matrix, sqrt(sum of entrywise variances / n)."""
        if self.states is None:
            raise ValueError("states were not kept")
        n = n or self.n_traj
        s = self.states[:n]
        mean = np.einsum("kti,ktj->tij", s, s.conj()) / n
        # sum_ij E|psi_i psi_j^*|^2 = E[<psi|psi>^2] = 1 for unit states
        second = np.mean(np.einsum("kti,kti->kt", s, s.conj()).real ** 2, axis=0)
        var = (second - np.einsum("tij,tij->t", mean, mean.conj()).real) * n / (n - 1)
        return np.sqrt(np.clip(var, 0.0, None) / n)


def run_ensemble(
    rho0: np.ndarray,
    H,
    jumps,
    sample_times,
    n_traj: int,
    seed: int = 0,
    keep_states: bool = False,
    propagator: JumpPropagator | None = None,
) -> TrajectoryEnsemble:
    sample_times = np.asarray(sample_times, dtype=float)
    prop = propagator or JumpPropagator(H, jumps)
    dim = prop.dim
    rho = np.zeros((len(sample_times), dim, dim), dtype=complex)
    states = np.empty((n_traj, len(sample_times), dim), dtype=complex) if keep_states else None
    log_ = []
    for i in range(n_traj):
        rng = trajectory_rng(seed, i)
        (psi0,) = sample_pure_states(rho0, [rng])
        tr = qjump_evolve(psi0, None, None, sample_times, rng, propagator=prop)
        rho += np.einsum("ti,tj->tij", tr.states, tr.states.conj())
        if keep_states:
            states[i] = tr.states
        log_.append(tr.jump_times)
    return TrajectoryEnsemble(n_traj, seed, sample_times, rho / n_traj, states, log_)


# ---- master equation --------------------------------------------------------------------------


@dataclass
class DensityTrajectory:
    times: np.ndarray
    states: np.ndarray
    trace_drift: float
    hermiticity_drift: float


def iter_master(
    rho0, superop: Superoperator, t_grid, rtol: float = 1e-10, atol: float = 1e-12, t0: float | None = None
) -> Iterator[tuple[float, np.ndarray]]:
    """Yield (t, rho(t)) for each grid time, integrating vec(rho)' = L vec(rho) with DOP853 dense output."""
    dim = superop.space.dim
    mat = superop.matrix
    t_grid = np.asarray(t_grid, dtype=float)
    start = float(t_grid[0]) if t0 is None else t0
    y0 = vectorize(rho0).astype(complex)
    k = 0
    while k < len(t_grid) and t_grid[k] <= start:
        yield float(t_grid[k]), devectorize(y0, dim).copy()
        k += 1
    if k == len(t_grid):
        return
    solver = DOP853(lambda t, y: mat @ y, start, y0, float(t_grid[-1]), rtol=rtol, atol=atol)
    while k < len(t_grid):
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"master-equation integration failed at t={solver.t}: {msg}")
        if solver.t >= t_grid[k]:
            interp = solver.dense_output()
            while k < len(t_grid) and t_grid[k] <= solver.t:
                y = solver.y if t_grid[k] == solver.t else interp(t_grid[k])
                yield float(t_grid[k]), devectorize(y, dim).copy()
                k += 1


def master_evolve(rho0, superop: Superoperator, t_grid, rtol: float = 1e-10, atol: float = 1e-12) -> DensityTrajectory:
    states = np.array([r for _, r in iter_master(rho0, superop, t_grid, rtol, atol)])
    tr = np.trace(states, axis1=1, axis2=2)
    herm = np.abs(states - states.conj().transpose(0, 2, 1)).max(axis=(1, 2))
    return DensityTrajectory(np.asarray(t_grid, float), states, float(np.abs(tr - tr[0]).max()), float(herm.max()))


def distance(rho1, rho2) -> float:
    """Tr[(rho1 - rho2)^dag (rho1 - rho2)]."""
    d = as_array(rho1) - as_array(rho2)
    return float(np.vdot(d, d).real)


# ---- kick experiment --------------------------------------------------------------------------------


def co_rotate(rho_single: np.ndarray, omega: float, t: float) -> np.ndarray:
    """Undo a rotation at ``omega``: R rho R^dag with R = exp(i omega t n)."""
    ph = np.exp(1j * omega * t * np.arange(rho_single.shape[0]))
    return ph[:, None] * rho_single * ph.conj()[None, :]


@dataclass
class KickResult:
    times: np.ndarray
    d_err_vs_clean: np.ndarray
    d_clean_vs_init: np.ndarray
    d_err_vs_init: np.ndarray
    a_b_clean: np.ndarray
    a_b_err: np.ndarray
    snapshots: dict = field(default_factory=dict, repr=False)
    grid: np.ndarray | None = field(default=None, repr=False)
    repair: float = 0.0
    mode: str = "master"
    seconds: float = 0.0

    def rows(self):
        for k, t in enumerate(self.times):
            yield t, self.d_err_vs_clean[k], self.d_clean_vs_init[k], self.d_err_vs_init[k]


def _snap(rho, space, t, label, grid, omega, store):
    for mode, keep in (("B", "B"), ("A", "A")):
        red = partial_trace(rho, space, keep)
        if omega is not None and mode == "A":
            red = co_rotate(red, omega, t)
        store[(round(float(t), 12), mode, label)] = wigner(red, grid)


def kick_experiment(
    spec: InitialStateSpec,
    protocol: KickProtocol,
    t_grid,
    mode: str = "master",
    snapshot_times: Sequence[float] = (),
    wigner_grid: np.ndarray | None = None,
    co_rotate_omega: float | None = None,
    n_traj: int = 200,
    seed: int = 0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    progress: Callable[[float], None] | None = None,
) -> KickResult:
    """Paired kicked/unkicked evolutions of the assembled initial state.

    ``mode="master"`` integrates the master equation; both runs share the
    pre-kick segment exactly.  ``mode="trajectories"`` uses ``n_traj``
    quantum-jump trajectories per run; each kicked trajectory is the unkicked
    one up to ``t_kick`` and then continues from a copy of its random stream.
    """
    t0 = time.perf_counter()
    ops = spec.source
    space, params = ops.space, ops.params
    t_grid = np.asarray(t_grid, dtype=float)
    if not t_grid[0] <= protocol.t_kick <= t_grid[-1]:
        raise ValueError(f"kick time {protocol.t_kick} outside the window [{t_grid[0]}, {t_grid[-1]}]")
    init = assemble_initial(spec)
    rho0 = init.rho
    grid = default_grid() if wigner_grid is None else wigner_grid
    snap_set = {round(float(s), 12) for s in snapshot_times}
    a_b = np.kron(np.diag(np.sqrt(np.arange(1, space.k_b)), 1), np.eye(space.k_a))
    H = hamiltonian_bs(space, params)
    jumps = jump_operators(space, params)

    n = len(t_grid)
    d_ec, d_ci, d_ei = np.zeros(n), np.zeros(n), np.zeros(n)
    ab_c, ab_e = np.zeros(n, complex), np.zeros(n, complex)
    snaps: dict = {}

    def record(k, t, clean, err):
        d_ec[k], d_ci[k], d_ei[k] = distance(err, clean), distance(clean, rho0), distance(err, rho0)
        ab_c[k], ab_e[k] = np.trace(a_b @ clean), np.trace(a_b @ err)
        if round(float(t), 12) in snap_set:
            _snap(clean, space, t, "clean", grid, co_rotate_omega, snaps)
            _snap(err, space, t, "kicked", grid, co_rotate_omega, snaps)
        if progress:
            progress(t)

    if mode == "master":
        superop = build_liouvillian(H, jumps)
        pre = t_grid[t_grid <= protocol.t_kick]
        post = t_grid[t_grid > protocol.t_kick]
        rho_k = rho0
        for k, (t, rho) in enumerate(iter_master(rho0, superop, np.append(pre, protocol.t_kick), rtol, atol)):
            if k < len(pre):
                kicked = kick_density(rho, space, protocol) if t == protocol.t_kick else rho
                record(k, t, rho, kicked)
            rho_k = rho
        if len(post):
            grid_post = np.concatenate([[protocol.t_kick], post])
            clean_it = iter_master(rho_k, superop, grid_post, rtol, atol)
            err_it = iter_master(kick_density(rho_k, space, protocol), superop, grid_post, rtol, atol)
            next(clean_it), next(err_it)
            for j, ((t, c), (_, e)) in enumerate(zip(clean_it, err_it)):
                record(len(pre) + j, t, c, e)
    elif mode == "trajectories":
        prop = JumpPropagator(H, jumps)
        acc_c = np.zeros((n, space.dim, space.dim), complex)
        acc_e = np.zeros_like(acc_c)
        pre_mask = t_grid < protocol.t_kick
        at_kick = np.any(t_grid == protocol.t_kick)
        post_times = t_grid[t_grid > protocol.t_kick]
        for i in range(n_traj):
            rng = trajectory_rng(seed, i)
            (psi0,) = sample_pure_states(rho0, [rng])
            w = _Walker(psi0, 0.0, rng.uniform(), rng)
            pre: list = [psi0] if t_grid[0] == 0 else []
            _advance(prop, w, protocol.t_kick, t_grid[pre_mask], pre)
            twin = _Walker(apply_kick(w.psi, space, protocol), w.t, w.threshold, copy.deepcopy(w.rng))
            post_c: list = [w.psi] if at_kick else []
            post_e: list = [twin.psi] if at_kick else []
            _advance(prop, w, float(t_grid[-1]), post_times, post_c)
            _advance(prop, twin, float(t_grid[-1]), post_times, post_e)
            sc = np.array(pre + post_c)
            se = np.array(pre + post_e)
            acc_c += np.einsum("ti,tj->tij", sc, sc.conj())
            acc_e += np.einsum("ti,tj->tij", se, se.conj())
        for k, t in enumerate(t_grid):
            record(k, t, acc_c[k] / n_traj, acc_e[k] / n_traj)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return KickResult(
        t_grid, d_ec, d_ci, d_ei, ab_c, ab_e, snaps, grid, init.repair, mode, time.perf_counter() - t0
    )
