"""Mean-field dynamics of the bonding/antibonding amplitudes.

Equations of motion, with the loss entering as ``-gamma * alpha_B``::

    d alpha_B/dt = (i(Delta+J) - gamma) alpha_B
                   - i U (alpha_B |alpha_B|^2 + 2 |alpha_A|^2 alpha_B + alpha_A^2 conj(alpha_B))
                   - i sqrt(2) F
    d alpha_A/dt = i(Delta-J) alpha_A
                   - i U (alpha_B^2 conj(alpha_A) + 2 |alpha_B|^2 alpha_A + alpha_A |alpha_A|^2)

In scaled mode (the default) F and U are replaced by F~ and U~; the equations
are invariant under the N-scaling, so amplitudes come out in units of sqrt(N).
Note that a Lindblad loss channel of rate gamma damps <a_B> at gamma/2; pass
``params.replace(gamma=params.gamma / 2)`` for that convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .model import ModelParams


class SteadyStateError(RuntimeError):
    pass


class DynamicalInstabilityWarning(UserWarning):
    """Linearized antibonding dynamics has a real (growing) eigenvalue."""


@dataclass(frozen=True)
class MeanFieldState:
    alpha_b: complex
    alpha_a: complex = 0j

    def as_real(self) -> np.ndarray:
        return np.array([self.alpha_b.real, self.alpha_b.imag, self.alpha_a.real, self.alpha_a.imag])

    @classmethod
    def from_real(cls, y) -> "MeanFieldState":
        return cls(complex(y[0], y[1]), complex(y[2], y[3]))


def _coefficients(p: ModelParams, scaled: bool) -> tuple[float, float]:
    if scaled:
        return p.f_tilde, p.u_tilde
    return p.drive, p.nonlinearity


def _rhs_complex(ab, aa, p: ModelParams, F: float, U: float):
    nb, na = abs(ab) ** 2, abs(aa) ** 2
    dab = (1j * (p.delta + p.j) - p.gamma) * ab - 1j * U * (ab * nb + 2 * na * ab + aa**2 * np.conj(ab)) - 1j * np.sqrt(2) * F
    daa = 1j * (p.delta - p.j) * aa - 1j * U * (ab**2 * np.conj(aa) + 2 * nb * aa + aa * na)
    return dab, daa


def mf_rhs(s: MeanFieldState, p: ModelParams, scaled: bool = True) -> MeanFieldState:
    F, U = _coefficients(p, scaled)
    dab, daa = _rhs_complex(s.alpha_b, s.alpha_a, p, F, U)
    return MeanFieldState(complex(dab), complex(daa))


@dataclass
class MeanFieldTrajectory:
    t: np.ndarray
    alpha_b: np.ndarray
    alpha_a: np.ndarray
    nfev: int = 0

    def state(self, k: int) -> MeanFieldState:
        return MeanFieldState(complex(self.alpha_b[k]), complex(self.alpha_a[k]))


def integrate(
    s0: MeanFieldState,
    p: ModelParams,
    t_final: float,
    t_eval: Sequence[float] | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    scaled: bool = True,
    method: str = "DOP853",
) -> MeanFieldTrajectory:
    """Adaptive Runge-Kutta integration of the mean-field equations."""
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    F, U = _coefficients(p, scaled)

    def f(_t, y):
        dab, daa = _rhs_complex(complex(y[0], y[1]), complex(y[2], y[3]), p, F, U)
        return [dab.real, dab.imag, daa.real, daa.imag]

    sol = solve_ivp(f, (0.0, t_final), s0.as_real(), method=method, t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"mean-field integration failed: {sol.message}")
    y = sol.y
    return MeanFieldTrajectory(sol.t, y[0] + 1j * y[1], y[2] + 1j * y[3], sol.nfev)


def _bonding_residual(x: np.ndarray, p: ModelParams, F: float, U: float) -> np.ndarray:
    dab, _ = _rhs_complex(complex(x[0], x[1]), 0j, p, F, U)
    return np.array([dab.real, dab.imag])


def _bonding_jacobian(x: np.ndarray, p: ModelParams, U: float) -> np.ndarray:
    # f = c*b - iU|b|^2 b + const, c = -gamma + i(Delta+J); Wirtinger: df/db = c - 2iU|b|^2, df/db* = -iU b^2
    b = complex(x[0], x[1])
    c = -p.gamma + 1j * (p.delta + p.j)
    d1 = c - 2j * U * abs(b) ** 2
    d2 = -1j * U * b**2
    # real Jacobian of (Re f, Im f) wrt (x, y): df/dx = d1 + d2, df/dy = i(d1 - d2)
    dx, dy = d1 + d2, 1j * (d1 - d2)
    return np.array([[dx.real, dy.real], [dx.imag, dy.imag]])


def steady_state(
    p: ModelParams,
    guess: complex = 0j,
    scaled: bool = True,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> tuple[MeanFieldState, np.ndarray]:
    """Newton solve for a fixed point on the alpha_A = 0 manifold.

    Returns the state and the 2x2 real Jacobian of the bonding equation at it.
    """
    F, U = _coefficients(p, scaled)
    x = np.array([complex(guess).real, complex(guess).imag])
    for _ in range(max_iter):
        r = _bonding_residual(x, p, F, U)
        if np.linalg.norm(r) < tol:
            return MeanFieldState(complex(x[0], x[1])), _bonding_jacobian(x, p, U)
        jac = _bonding_jacobian(x, p, U)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        # damp large steps; the cubic has far-away basins
        scale = min(1.0, 1.0 / max(np.linalg.norm(step), 1e-300))
        x = x + step * scale
        if not np.all(np.isfinite(x)):
            break
    r = _bonding_residual(x, p, F, U)
    if np.linalg.norm(r) < tol:
        return MeanFieldState(complex(x[0], x[1])), _bonding_jacobian(x, p, U)
    raise SteadyStateError(f"Newton did not converge from guess {guess} (|rhs| = {np.linalg.norm(r):.2e})")


def steady_state_full(p: ModelParams, guess: MeanFieldState, scaled: bool = True, tol: float = 1e-12) -> MeanFieldState:
    """Fixed point of all four real equations (alpha_A free); exploratory."""
    from scipy.optimize import root

    F, U = _coefficients(p, scaled)

    def f(y):
        dab, daa = _rhs_complex(complex(y[0], y[1]), complex(y[2], y[3]), p, F, U)
        return [dab.real, dab.imag, daa.real, daa.imag]

    sol = root(f, guess.as_real(), tol=tol)
    if not sol.success or np.linalg.norm(f(sol.x)) > 1e-10:
        raise SteadyStateError(sol.message)
    return MeanFieldState.from_real(sol.x)


@dataclass
class SteadyBranch:
    f_tilde: np.ndarray
    alpha_b: np.ndarray
    converged: np.ndarray
    n_solutions: np.ndarray
    omega_a: np.ndarray
    jump_location: float | None = None
    jump_indices: list[int] = field(default_factory=list)

    def rows(self):
        for f, a, w, ok in zip(self.f_tilde, self.alpha_b, self.omega_a, self.converged):
            yield {"f_tilde": f, "re_alpha_b": a.real, "im_alpha_b": a.imag, "omega_a": w, "converged": bool(ok)}


def continuation(
    p: ModelParams,
    f_grid: Sequence[float],
    direction: str = "down",
    guesses: Sequence[complex] = (0j, 1 + 0j, 3 + 0j),
    jump_factor: float = 10.0,
) -> SteadyBranch:
    """Follow the alpha_A = 0 fixed point across a drive grid.

    Each point is seeded by the previous solution; the fixed guesses are tried
    as well so multistable points are counted in ``n_solutions``.  The sweep runs
    from the high-drive end by default.  A jump is a successive change in
    alpha_B larger than ``jump_factor`` times the median change that survives
    re-walking the interval on a finer grid (steep but continuous stretches
    near a fold do not); ``jump_location`` is the midpoint of the largest one.
    """
    grid = np.asarray(sorted(f_grid), dtype=float)
    order = np.arange(len(grid))[::-1] if direction == "down" else np.arange(len(grid))
    alpha = np.full(len(grid), np.nan + 0j)
    ok = np.zeros(len(grid), bool)
    nsol = np.zeros(len(grid), int)
    prev = None
    for i in order:
        q = p.replace(f_tilde=float(grid[i]))
        found: list[complex] = []
        for g in ([prev] if prev is not None else []) + list(guesses):
            try:
                s, _ = steady_state(q, g)
            except SteadyStateError:
                continue
            if all(abs(s.alpha_b - f) > 1e-8 for f in found):
                found.append(s.alpha_b)
        nsol[i] = len(found)
        if found:
            alpha[i] = found[0]
            ok[i] = True
            prev = found[0]
    omega = np.array([omega_a(a, p, warn=False) if np.isfinite(a) else np.nan for a in alpha], dtype=complex)
    omega = np.where(np.abs(omega.imag) > 0, np.nan, omega.real)
    steps = np.abs(np.diff(alpha))
    jumps: list[int] = []
    loc = None
    if len(steps) > 2:
        med = np.nanmedian(steps)
        for k in np.flatnonzero(steps > jump_factor * med):
            if _is_discontinuous(p, grid[k], grid[k + 1], alpha[k], alpha[k + 1], direction):
                jumps.append(int(k))
        if jumps:
            k = max(jumps, key=lambda i: steps[i])
            loc = 0.5 * (grid[k] + grid[k + 1])
    return SteadyBranch(grid, alpha, ok, nsol, omega, loc, jumps)


def _is_discontinuous(p, f_lo, f_hi, a_lo, a_hi, direction, substeps: int = 32) -> bool:
    """Re-walk one grid interval finely; a true jump keeps a sub-step comparable to the full step."""
    sub = np.linspace(f_lo, f_hi, substeps + 1)
    if direction == "down":
        sub, prev = sub[::-1], a_hi
    else:
        prev = a_lo
    biggest = 0.0
    for f in sub[1:]:
        try:
            s, _ = steady_state(p.replace(f_tilde=float(f)), prev)
        except SteadyStateError:
            return True
        biggest = max(biggest, abs(s.alpha_b - prev))
        prev = s.alpha_b
    return biggest > 0.5 * abs(a_hi - a_lo)


def linearized_matrix(alpha_b: complex, p: ModelParams, scaled: bool = True) -> np.ndarray:
    """Generator of (alpha_A, conj(alpha_A)) at fixed alpha_B, to first order in alpha_A.

    Equal to -i times [[(J-D)+2U|b|^2, U b^2], [-U conj(b)^2, -(J-D)-2U|b|^2]], so
    its eigenvalues are +-i omega_A on the stable side.
    """
    _, U = _coefficients(p, scaled)
    n = abs(alpha_b) ** 2
    d = (p.j - p.delta) + 2 * U * n
    v = np.array([[d, U * alpha_b**2], [-U * np.conj(alpha_b) ** 2, -d]], dtype=complex)
    return -1j * v


def frequency_radicand(alpha_b: complex, p: ModelParams, scaled: bool = True) -> float:
    _, U = _coefficients(p, scaled)
    n = abs(alpha_b) ** 2
    return (U * n - p.delta + p.j) * (3 * U * n - p.delta + p.j)


def omega_a(alpha_b: complex, p: ModelParams, scaled: bool = True, warn: bool = True):
    """Antibonding oscillation frequency sqrt((U|b|^2 - D + J)(3U|b|^2 - D + J)).

    A negative radicand means the antibonding amplitude grows; the result is
    then returned as the purely imaginary value ``1j * sqrt(-radicand)``.
    """
    rad = frequency_radicand(alpha_b, p, scaled)
    if rad >= 0:
        return float(np.sqrt(rad))
    if warn:
        warnings.warn(f"negative radicand {rad:.3g} at alpha_B={alpha_b}", DynamicalInstabilityWarning, stacklevel=2)
    return 1j * float(np.sqrt(-rad))
