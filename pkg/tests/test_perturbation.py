import numpy as np
import pytest

from bhdimer.fock import FockSpace
from bhdimer.liouvillian import vectorize
from bhdimer.model import ModelParams
from bhdimer.perturbation import (
    NormalizationError,
    dephased_eigensystem,
    dephasing_superop,
    dephasing_sweep,
    first_order_shift,
    sector_shifts,
)
from bhdimer.spectral import eigenoperator_set

from conftest import random_density, random_matrix

P = ModelParams()
SPACE = FockSpace(8, 4)


@pytest.fixture(scope="module")
def ops():
    o, _ = eigenoperator_set(P, SPACE, method="dense")
    return o


def test_steady_shift_vanishes(ops):
    # trace preservation of the dephasing generator: Tr[L1(r)] = 0 and l_ee = projector
    (res,) = sector_shifts(ops, 0.1, ["ee"])
    assert abs(res.delta_lambda) < 1e-10


def test_scalar_perturbation(ops):
    c = 0.37 - 1.2j
    for s in ("eo", "oe"):
        assert first_order_shift(ops.left[s], ops.right[s], lambda r: c * r) == pytest.approx(c, abs=1e-10)


def test_linear_in_perturbation(ops):
    l1 = dephasing_superop(SPACE)
    mat = l1.matrix
    a = first_order_shift(ops.left["eo"], ops.right["eo"], mat)
    b = first_order_shift(ops.left["eo"], ops.right["eo"], 2.5 * mat)
    assert b == pytest.approx(2.5 * a, rel=1e-12)
    assert first_order_shift(ops.left["eo"], ops.right["eo"], l1) == pytest.approx(a, rel=1e-12)


def test_dephasing_adds_decay(ops):
    (res,) = sector_shifts(ops, 0.1, ["eo"])
    assert res.extra_decay > 0
    assert res.predicted(0.0) == ops.lambdas["eo"]
    assert res.predicted() == ops.lambdas["eo"] + 0.1 * res.delta_lambda


def test_unnormalized_pair_rejected(rng):
    r = random_density(rng, 4)
    l = random_matrix(rng, 4)
    with pytest.raises(NormalizationError):
        first_order_shift(l, r, lambda x: x)


def test_dephasing_superop_annihilates_number_diagonal(rng):
    l1 = dephasing_superop(SPACE)
    diag = np.diag(rng.random(SPACE.dim))
    assert np.abs(l1.matrix @ vectorize(diag)).max() < 1e-14


def test_ratio_test_against_exact(ops):
    (res,) = sector_shifts(ops, 1.0, ["eo"])
    ratios = []
    for alpha in (1e-3, 1e-2):
        exact = dephased_eigensystem(P, SPACE, rate=alpha, method="dense", previous=ops)
        ratios.append(abs(exact.lambdas["eo"] - ops.lambdas["eo"] - alpha * res.delta_lambda) / alpha**2)
    assert max(ratios) < 10 * max(1.0, abs(res.delta_lambda))
    assert ratios[0] == pytest.approx(ratios[1], rel=0.5)


def test_zero_rate_reproduces_undephased(ops):
    same = dephased_eigensystem(P, SPACE, rate=0.0, method="dense")
    assert same.lambdas["eo"] == pytest.approx(ops.lambdas["eo"], abs=1e-10)


def test_dephasing_sweep_rows():
    rows = dephasing_sweep(P, [1], spaces={1: FockSpace(6, 4)}, method="dense")
    assert [r.sector for r in rows] == ["eo", "oe"]
    assert rows[0].rate == pytest.approx(P.gamma / 10)
    assert rows[0].re_shift == pytest.approx(rows[1].re_shift, abs=1e-10)
    assert rows[0].im_shift == pytest.approx(-rows[1].im_shift, abs=1e-10)
