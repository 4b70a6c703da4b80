"""First-order Liouvillian perturbation theory for collective dephasing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .fock import FockSpace, as_array
from .liouvillian import Superoperator, devectorize, dissipator, sector_masks, vectorize
from .model import ModelParams, dephasing_operator, default_space
from .spectral import EigenOperatorSet, eigenoperator_set

NORMALIZATION_TOL = 1e-8


class NormalizationError(ValueError):
    """Left/right pair is not biorthonormalized."""


@dataclass(frozen=True)
class PerturbationResult:
    lambda0: complex
    delta_lambda: complex
    alpha: float
    sector: str

    @property
    def extra_decay(self) -> float:
        """Additional decay rate -Re(lambda1) per unit alpha."""
        return -self.delta_lambda.real

    @property
    def frequency_shift(self) -> float:
        return self.delta_lambda.imag

    def predicted(self, alpha: float | None = None) -> complex:
        a = self.alpha if alpha is None else alpha
        return self.lambda0 + a * self.delta_lambda


def dephasing_superop(space: FockSpace) -> Superoperator:
    """Vectorized D[n_B + n_A]."""
    mat = dissipator(dephasing_operator(space), space)
    return Superoperator(space, mat, sector_masks(space))


def first_order_shift(l0, r0, perturbation, tol: float = NORMALIZATION_TOL) -> complex:
    """Tr[l0^dag L1(r0)]; ``perturbation`` is a Superoperator, sparse matrix or callable on matrices."""
    l0, r0 = as_array(l0), as_array(r0)
    norm = np.vdot(l0, r0)
    if abs(norm - 1) > tol:
        raise NormalizationError(f"Tr[l0^dag r0] = {norm:.3e}, expected 1 within {tol:.0e}; biorthonormalize first")
    if isinstance(perturbation, Superoperator):
        image = perturbation.apply(r0)
    elif sp.issparse(perturbation) or isinstance(perturbation, np.ndarray):
        image = devectorize(perturbation @ vectorize(r0), r0.shape[0])
    else:
        image = as_array(perturbation(r0))
    return complex(np.vdot(l0, image))


def sector_shifts(ops: EigenOperatorSet, alpha: float, sectors: Iterable[str] = ("ee", "oo", "eo", "oe")) -> list[PerturbationResult]:
    l1 = dephasing_superop(ops.space)
    out = []
    for s in sectors:
        if ops.left.get(s) is None:
            raise NormalizationError(f"no left eigenoperator for sector {s}")
        shift = first_order_shift(ops.left[s], ops.right[s], l1)
        out.append(PerturbationResult(ops.lambdas[s], shift, alpha, s))
    return out


@dataclass(frozen=True)
class DephasingRow:
    n_scale: int
    sector: str
    re_lambda0: float
    im_lambda0: float
    re_shift: float
    im_shift: float
    rate: float


def dephasing_sweep(
    params: ModelParams,
    n_values: Iterable[int],
    rate: float | None = None,
    sectors: Iterable[str] = ("eo", "oe"),
    spaces: dict[int, FockSpace] | None = None,
    **solver_kw,
) -> list[DephasingRow]:
    """First-order dephasing shifts per N from the undephased eigenpairs (rate defaults to gamma/10)."""
    rate = params.gamma / 10 if rate is None else rate
    sectors = tuple(sectors)
    rows = []
    for n in n_values:
        p = params.replace(n_scale=n, dephase_rate=0.0)
        space = (spaces or {}).get(n) or default_space(n)
        ops, _ = eigenoperator_set(p, space, **solver_kw)
        for res in sector_shifts(ops, rate, sectors):
            rows.append(
                DephasingRow(
                    n, res.sector, res.lambda0.real, res.lambda0.imag, res.delta_lambda.real, res.delta_lambda.imag, rate
                )
            )
    return rows


def dephased_eigensystem(params: ModelParams, space: FockSpace, rate: float | None = None, **solver_kw) -> EigenOperatorSet:
    """Nonperturbative eigenoperators of L + rate * D[n_B + n_A]."""
    rate = params.gamma / 10 if rate is None else rate
    ops, _ = eigenoperator_set(params.replace(dephase_rate=rate), space, **solver_kw)
    return ops
