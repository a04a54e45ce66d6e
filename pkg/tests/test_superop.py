"""Column-stacking superoperator algebra."""

import numpy as np
import pytest
import scipy.linalg

from qfeedback import superop
from conftest import random_density, random_hermitian

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SM = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |g><e|


def test_vec_stacks_columns():
    m = np.array([[1.0, 3.0], [2.0, 4.0]])
    assert np.array_equal(superop.vec(m), np.array([1.0, 2.0, 3.0, 4.0]))


def test_vec_unvec_round_trip(rng):
    for d in (2, 3, 5):
        m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        assert np.array_equal(superop.unvec(superop.vec(m), d), m)
        # dim inferred from length
        assert np.array_equal(superop.unvec(superop.vec(m)), m)


def test_spre_spost_sandwich(rng):
    for _ in range(20):
        d = int(rng.integers(2, 5))
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        b = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        r = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        v = superop.vec(r)
        assert np.allclose(superop.unvec(superop.spre(a) @ v, d), a @ r)
        assert np.allclose(superop.unvec(superop.spost(b) @ v, d), r @ b)
        assert np.allclose(
            superop.unvec(superop.sandwich(a, b) @ v, d), a @ r @ b)


def test_hamiltonian_superop_is_commutator(rng):
    h = random_hermitian(rng, 3)
    r = random_density(rng, 3)
    out = superop.unvec(superop.hamiltonian_superop(h) @ superop.vec(r), 3)
    assert np.allclose(out, -1j * (h @ r - r @ h))


def test_dissipator_action(rng):
    l_op = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    r = random_density(rng)
    out = superop.unvec(superop.dissipator(l_op) @ superop.vec(r), 2)
    ld = l_op.conj().T
    want = l_op @ r @ ld - 0.5 * (ld @ l_op @ r + r @ ld @ l_op)
    assert np.allclose(out, want)


def test_liouvillian_preserves_trace_and_hermiticity(rng):
    h = random_hermitian(rng)
    lv = superop.liouvillian(h, [0.3 * SM, 0.1 * SM.conj().T])
    tvec = superop.trace_vector(2)
    assert np.max(np.abs(tvec @ lv)) < 1e-12     # d/dt Tr rho = 0
    r = random_density(rng)
    dr = superop.unvec(lv @ superop.vec(r), 2)
    assert np.allclose(dr, dr.conj().T)


def test_superop_from_map_matches_direct(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    m = superop.superop_from_map(lambda r: a @ r @ a.conj().T, 2)
    assert np.allclose(m, superop.conjugation(a))


def test_expm_matches_scipy(rng):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.allclose(superop.expm(m, 0.37),
                       scipy.linalg.expm(0.37 * m), atol=1e-12)


def test_expm_exact_on_degenerate_commutator():
    # resonant-drive commutator superop: degenerate spectrum, the
    # regression case for eigendecomposition shortcuts
    lv = superop.hamiltonian_superop(SX)
    got = superop.expm(lv, 1e-4)
    want = scipy.linalg.expm(1e-4 * lv)
    assert np.max(np.abs(got - want)) < 1e-14


def test_trace_vector(rng):
    r = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.isclose(superop.trace_vector(3) @ superop.vec(r), np.trace(r))


def test_is_trace_preserving():
    u = scipy.linalg.expm(-1j * 0.3 * SX)
    assert superop.is_trace_preserving(superop.conjugation(u))
    assert not superop.is_trace_preserving(1.1 * superop.conjugation(u))


def test_choi_and_complete_positivity(rng):
    u = scipy.linalg.expm(-1j * 0.7 * SX)
    assert superop.is_completely_positive(superop.conjugation(u))
    # transpose map is positive but not completely positive
    transpose = superop.superop_from_map(lambda r: r.T, 2)
    assert not superop.is_completely_positive(transpose)
    choi = superop.choi_matrix(superop.conjugation(u))
    assert np.allclose(choi, choi.conj().T)


def test_apply_superop(rng):
    m = rng.normal(size=(4, 4))
    r = random_density(rng)
    assert np.allclose(superop.apply_superop(m, r),
                       superop.unvec(m @ superop.vec(r), 2))


def test_inverse_guards_singularity():
    with pytest.raises(superop.SingularSuperoperatorError):
        superop.inverse(np.zeros((4, 4)))
    m = np.diag([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(superop.inverse(m) @ m, np.eye(4))


def test_steady_density_of_map(rng):
    # unitary kicks mixed with a reset channel: unique fixed point
    u = scipy.linalg.expm(-1j * 0.4 * SX)
    target = random_density(rng)
    reset = np.outer(superop.vec(target), superop.trace_vector(2))
    chan = 0.7 * superop.conjugation(u) + 0.3 * reset
    rho = superop.steady_density(chan, kind="map")
    assert np.isclose(np.trace(rho), 1.0)
    assert np.max(np.abs(superop.apply_superop(chan, rho) - rho)) < 1e-9


def test_steady_density_of_generator():
    gamma, nbar = 0.8, 0.4
    lv = superop.liouvillian(
        np.zeros((2, 2)),
        [np.sqrt(gamma * (nbar + 1)) * SM, np.sqrt(gamma * nbar) * SM.conj().T])
    rho = superop.steady_density(lv, kind="generator")
    p_exc = nbar / (2 * nbar + 1)
    assert abs(rho[1, 1].real - p_exc) < 1e-12
    with pytest.raises(superop.NoFixedPointError):
        superop.steady_density(lv, kind="map")


def test_steady_density_rejects_unknown_kind():
    with pytest.raises(ValueError):
        superop.steady_density(np.eye(4), kind="spectral")


def test_fixed_point_targets_requested_eigenvalue():
    m = np.diag([0.5, 1.0, 2.0, 3.0])
    v = superop.fixed_point_eigenvector(m, eigenvalue=2.0)
    assert np.max(np.abs(m @ v - 2.0 * v)) < 1e-12


def test_no_fixed_point_error():
    with pytest.raises(superop.NoFixedPointError):
        superop.fixed_point_eigenvector(0.5 * np.eye(4))


def test_ensure_density_hermitizes_and_clips(rng):
    r = random_density(rng)
    noisy = r + 1e-13 * np.array([[0, 1j], [0, 0]])
    out = superop.ensure_density(noisy)
    assert np.allclose(out, out.conj().T)
    assert np.isclose(np.trace(out).real, 1.0)
    with pytest.raises(ValueError):
        superop.ensure_density(r + 0.1 * np.array([[0, 1j], [0, 0]]))


def test_superop_dim():
    assert superop.superop_dim(np.eye(9)) == 3
    with pytest.raises(ValueError):
        superop.superop_dim(np.eye(5))
