"""Driven-dissipative Bose-Hubbard dimer: parameters, Hamiltonians, jump operators.

The beam-splitter (bonding/antibonding) basis is the computational basis.  The
lab-basis Hamiltonian is kept only for cross-checks.  With lab modes
a_1,2 = (a_B +- a_A)/sqrt(2), the lab on-site term U a_i^dag^2 a_i^2 maps onto
the U/2 prefactor of the beam-splitter form, so both constructors use the same
``U`` and agree exactly on the untruncated space.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .fock import FockSpace, OperatorMatrix, destroy, number

K_A_DEFAULT = 6
# bonding cutoff per scaling parameter N, antibonding fixed at K_A_DEFAULT
CUTOFF_LADDER = {1: 14, 2: 20, 3: 24, 4: 30, 10: 50, 20: 100}


@dataclass(frozen=True)
class ModelParams:
    j: float = 1.1
    delta: float = 0.8
    u_tilde: float = 1.0
    f_tilde: float = 1.8
    gamma: float = 1.0
    dephase_rate: float = 0.0
    n_scale: int = 1

    def __post_init__(self):
        if self.n_scale < 1:
            raise ValueError(f"n_scale must be >= 1, got {self.n_scale}")
        for name in ("u_tilde", "f_tilde", "gamma", "dephase_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def drive(self) -> float:
        """Physical drive F = F~ sqrt(N)."""
        return self.f_tilde * np.sqrt(self.n_scale)

    @property
    def nonlinearity(self) -> float:
        """Physical nonlinearity U = U~ / N."""
        return self.u_tilde / self.n_scale

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS = {
    "paper-monostable": ModelParams(),
}


def preset(name: str, **overrides) -> ModelParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    return base.replace(**overrides)


def scaled_params(p: ModelParams) -> tuple[float, float]:
    return p.drive, p.nonlinearity


def default_space(n_scale: int, k_a: int = K_A_DEFAULT) -> FockSpace:
    """Asymmetric truncation from the cutoff ladder."""
    try:
        k_b = CUTOFF_LADDER[n_scale]
    except KeyError:
        raise KeyError(
            f"no preset cutoff for N={n_scale}; pass an explicit FockSpace (ladder: {CUTOFF_LADDER})"
        ) from None
    return FockSpace(k_b, k_a)


def hamiltonian_bs(space: FockSpace, p: ModelParams) -> OperatorMatrix:
    """Beam-splitter-basis Hamiltonian."""
    F, U = scaled_params(p)
    b, a = destroy(space, "B"), destroy(space, "A")
    bd, ad = b.dag(), a.dag()
    nb, na = number(space, "B"), number(space, "A")
    drive = np.sqrt(2.0) * F * (bd + b)
    quad = (-p.delta - p.j) * nb + (-p.delta + p.j) * na
    kerr = bd @ bd @ b @ b + ad @ ad @ a @ a + bd @ bd @ a @ a + b @ b @ ad @ ad + 4.0 * (nb @ na)
    h = drive + quad + (U / 2.0) * kerr
    h.hermitian_hint = True
    return h


def hamiltonian_lab(space: FockSpace, p: ModelParams) -> OperatorMatrix:
    """Lab-basis Hamiltonian; the two slots of ``space`` hold lab modes 1 and 2."""
    F, U = scaled_params(p)
    a1, a2 = destroy(space, "B"), destroy(space, "A")
    a1d, a2d = a1.dag(), a2.dag()
    h = F * (a1 + a2 + a1d + a2d)
    h = h - p.delta * (a1d @ a1) - p.delta * (a2d @ a2)
    h = h - p.j * (a1d @ a2 + a1 @ a2d)
    h = h + U * (a1d @ a1d @ a1 @ a1) + U * (a2d @ a2d @ a2 @ a2)
    h.hermitian_hint = True
    return h


def dephasing_operator(space: FockSpace) -> OperatorMatrix:
    """Collective dephasing jump n_B + n_A (= n_1 + n_2)."""
    return number(space, "B") + number(space, "A")


def jump_operators(space: FockSpace, p: ModelParams) -> list[tuple[float, OperatorMatrix]]:
    jumps = [(p.gamma, destroy(space, "B"))]
    if p.dephase_rate > 0:
        jumps.append((p.dephase_rate, dephasing_operator(space)))
    return jumps


def lab_mode_number(space: FockSpace, which: int = 1) -> OperatorMatrix:
    """n_1 (or n_2) written in the beam-splitter basis.

    Breaks the parity symmetry; used as a local-dephasing negative control.
    """
    sign = {1: 1.0, 2: -1.0}[which]
    b, a = destroy(space, "B"), destroy(space, "A")
    mode = (b + sign * a) * (1 / np.sqrt(2.0))
    return mode.dag() @ mode

