import numpy as np
import pytest
import scipy.linalg as la

from bhdimer.eigensolver import (
    AmbiguousMatchError,
    DenseLimitError,
    NonConvergenceError,
    biorthonormalize,
    cache_key,
    clusters,
    convergence_sweep,
    dense_eig,
    inverse_iteration_left,
    krylov_eig,
    load_system,
    match_left,
    model_block,
    save_system,
    shift_invert_eig,
    solve_block,
)
from bhdimer.fock import FockSpace, destroy, number
from bhdimer.liouvillian import build_liouvillian, extract_block
from bhdimer.model import ModelParams

SPACE = FockSpace(8, 4)
P = ModelParams()


@pytest.fixture(scope="module")
def eo_block():
    return model_block(P, SPACE, "eo")


@pytest.fixture(scope="module")
def eo_dense(eo_block):
    return dense_eig(eo_block)


def test_amplitude_damping_spectrum():
    # lossy mode in the B slot so the whole problem sits in the ee sector
    s = FockSpace(2, 1)
    sup = build_liouvillian(0 * number(s, "B"), [(1.0, destroy(s, "B"))])
    vals = dense_eig(extract_block(sup, "ee")).values
    assert np.allclose(vals, [0, -0.5, -0.5, -1], atol=1e-14)


def test_dense_sorted_and_biorthonormal(eo_dense):
    v = eo_dense.values
    assert np.all(np.diff(v.real) <= 1e-12)
    assert np.abs(eo_dense.overlap_matrix() - np.eye(len(v))).max() < 1e-8
    assert eo_dense.residuals.max() < 1e-9
    assert np.all(v.real <= 1e-10)


def test_phase_fixing(eo_dense):
    r = eo_dense.right
    top = r[np.argmax(np.abs(r), axis=0), np.arange(r.shape[1])]
    assert np.allclose(top.imag, 0, atol=1e-14) and np.all(top.real > 0)


def test_eo_oe_conjugate():
    a = np.sort_complex(dense_eig(model_block(P, SPACE, "eo")).values)
    b = np.sort_complex(np.conj(dense_eig(model_block(P, SPACE, "oe")).values))
    assert np.abs(a - b).max() < 1e-8


def test_krylov_matches_dense(eo_block, eo_dense):
    kr = krylov_eig(eo_block, n_pairs=6, seed=3)
    assert np.abs(kr.values - eo_dense.values[:6]).max() < 1e-8
    assert np.abs(kr.overlap_matrix() - np.eye(6)).max() < 1e-8
    assert kr.report.method == "krylov" and kr.report.converged
    assert kr.report.cutoffs_used == (8, 4)


def test_krylov_seeded_determinism(eo_block):
    a = krylov_eig(eo_block, n_pairs=4, seed=11, with_left=False)
    b = krylov_eig(eo_block, n_pairs=4, seed=11, with_left=False)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.right, b.right)


def test_krylov_steady_state_zero():
    kr = krylov_eig(model_block(P.replace(n_scale=2), FockSpace(10, 4), "ee"), n_pairs=3)
    assert abs(kr.values[0]) < 1e-8


def test_krylov_nonconvergence_carries_state(eo_block):
    with pytest.raises(NonConvergenceError) as err:
        krylov_eig(eo_block, n_pairs=6, max_restarts=1)
    assert "restarts" in str(err.value)


def test_shift_invert_matches_dense(eo_block, eo_dense):
    lead = eo_dense.values[0]
    si = shift_invert_eig(eo_block, sigma=1j * lead.imag, n_pairs=4, with_left=True)
    assert np.min(np.abs(si.values - lead)) < 1e-8
    assert np.abs(si.overlap_matrix() - np.eye(4)).max() < 1e-8
    assert si.report.method.startswith("shift-invert")


def test_dense_limit(eo_block):
    with pytest.raises(DenseLimitError):
        dense_eig(eo_block, dense_limit=10)


def test_solve_block_dispatch(eo_block):
    assert solve_block(eo_block, method="auto", auto_dense_max=10**6).report.method == "dense"
    assert solve_block(eo_block, method="auto", n_pairs=3, auto_dense_max=10).report.method == "krylov"
    with pytest.raises(ValueError):
        solve_block(eo_block, method="magic")


def test_left_equals_right_for_normal_generator():
    # H = 0 and a Hermitian jump operator give a Hermitian Liouvillian
    s = FockSpace(3, 2)
    sup = build_liouvillian(0 * number(s, "B"), [(0.7, number(s, "B") + 0.3 * number(s, "A"))])
    sys_ = dense_eig(extract_block(sup, "ee"))
    for pair in sys_.pairs():
        ov = np.vdot(pair.left, pair.right)
        assert abs(ov) > 0
    # with distinct eigenvalues, left and right agree up to scale
    nondeg = [c[0] for c in clusters(sys_.values) if len(c) == 1]
    for j in nondeg:
        pr = sys_.pair(j)
        cos = abs(np.vdot(pr.left, pr.right)) / (np.linalg.norm(pr.left) * np.linalg.norm(pr.right))
        assert cos == pytest.approx(1.0, abs=1e-10)


def test_match_left_ambiguity():
    vals = np.array([-1.0 + 0j, -2.0 + 0j])
    with pytest.raises(AmbiguousMatchError):
        match_left(vals, np.array([-1.0 + 0j, -1.0 + 1e-12j, -2.0 + 0j]))
    assert list(match_left(vals, np.array([-2.0 + 0j, -1.0 + 0j]))) == [1, 0]
    with pytest.raises(AmbiguousMatchError):
        match_left(vals, np.array([-2.0 + 0j, -5.0 + 0j]))
    assert list(match_left(vals, np.array([-2.0 + 0j, -5.0 + 0j]), strict=False)) == [-1, 0]


def test_inverse_iteration_left(eo_block, eo_dense):
    for j in (0, 3):
        x = inverse_iteration_left(eo_block, eo_dense.values[j])
        ref = eo_dense.left[:, j]
        cos = abs(np.vdot(x, ref)) / np.linalg.norm(ref)
        assert cos == pytest.approx(1.0, abs=1e-8)


def test_biorthonormalize_cluster():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 5))
    a = a @ np.diag([1, 1, 2, 3, 4.0]) @ np.linalg.inv(a)
    w, vl, vr = la.eig(a, left=True)
    left = biorthonormalize(w, vr, vl)
    assert np.allclose(left.conj().T @ vr, np.eye(5), atol=1e-10)


def test_cache_roundtrip(tmp_path, eo_block):
    kr = krylov_eig(eo_block, n_pairs=3)
    key = cache_key(P, SPACE, "eo", {"n_pairs": 3})
    save_system(tmp_path, key, kr)
    back = load_system(tmp_path, key, eo_block)
    assert np.array_equal(back.values, kr.values)
    assert np.array_equal(back.right, kr.right)
    assert np.array_equal(back.left, kr.left)
    assert back.report == kr.report
    assert load_system(tmp_path, "missing", eo_block) is None
    assert cache_key(P, SPACE, "eo", {"n_pairs": 4}) != key


def test_convergence_sweep_n1():
    pts = convergence_sweep(P, [10, 14, 18], k_a=6, sector="eo", n_pairs=2, method="dense")
    assert pts[0].stable is None
    assert pts[2].stable
    assert abs(pts[2].values[0] - pts[1].values[0]) < 1e-6


def test_convergence_sweep_undriven():
    pts = convergence_sweep(P.replace(f_tilde=0.0), [3, 4], k_a=3, sector="ee", n_pairs=2, method="dense")
    assert pts[1].stable
