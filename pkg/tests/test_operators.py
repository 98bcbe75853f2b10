import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from cqht import operators as ops


def random_state(rng, d):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


def test_annihilation_lowers_fock_states():
    a = ops.build_annihilation(6)
    for n in range(1, 6):
        ket = np.zeros(6)
        ket[n] = 1
        out = a @ ket
        assert out[n - 1] == pytest.approx(np.sqrt(n))
        assert np.count_nonzero(out) == 1


def test_commutator_identity_except_top_level():
    d = 7
    a = ops.build_annihilation(d)
    comm = a @ a.conj().T - a.conj().T @ a
    expected = np.eye(d)
    expected[-1, -1] = 1 - d
    assert np.allclose(comm, expected)


def test_quadratures_canonical_below_truncation():
    d = 12
    q, p = ops.position_op(d), ops.momentum_op(d)
    comm = q @ p - p @ q
    assert np.allclose(comm[:-1, :-1], 1j * np.eye(d - 1))
    assert np.allclose(ops.quadrature(0.0, d), q)
    assert np.allclose(ops.quadrature(np.pi / 2, d), p)


def test_quadrature_is_rotated_position():
    # a -> a e^{-i theta} maps q to q cos + p sin
    d, th = 10, 0.37
    U = np.diag(np.exp(1j * th * np.arange(d)))
    assert np.allclose(U @ ops.position_op(d) @ U.conj().T, ops.quadrature(th, d))


def test_energy_levels():
    d = 6
    e = np.real(np.diag(ops.energy_op(d)))
    assert np.allclose(e[:-1], np.arange(d - 1) + 0.5)
    assert e[-1] == pytest.approx((d - 1) / 2)
    assert np.allclose(ops.energy_op(d), np.diag(e))


def test_dimension_errors():
    with pytest.raises(ops.DimensionError):
        ops.build_annihilation(1)
    with pytest.raises(ops.DimensionError):
        ops.fock_state(5, 5)
    with pytest.raises(ops.DimensionError):
        ops.LindbladSpec(np.eye(2), ((1.0, np.eye(3)),))
    with pytest.raises(ValueError):
        ops.LindbladSpec(np.eye(2), ((-1.0, np.eye(2)),))


def test_thermal_state_is_geometric():
    rho = ops.thermal_state(0.5, 30)
    p = np.real(np.diag(rho))
    assert p.sum() == pytest.approx(1.0)
    assert np.allclose(p[1:] / p[:-1], 1 / 3)
    assert np.real(np.trace(ops.number_op(30) @ rho)) == pytest.approx(0.5, rel=1e-9)


@pytest.mark.parametrize("nbar", [0.0, 0.3, 1.2])
def test_thermal_state_is_stationary(nbar):
    # detailed balance holds level by level, so the truncated thermal state is exact
    spec = ops.thermal_lindblad(0.8, nbar, 15)
    assert np.abs(ops.lindblad_apply(spec, ops.thermal_state(nbar, 15))).max() < 1e-13


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_liouvillian_matches_direct_application(d, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = h + h.conj().T
    jump = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    spec = ops.LindbladSpec(h, ((0.7, jump),))
    rho = random_state(rng, d)
    direct = ops.lindblad_apply(spec, rho)
    via_sup = (ops.liouvillian(spec) @ rho.ravel()).reshape(d, d)
    assert np.allclose(direct, via_sup, atol=1e-12)
    # trace preserving and Hermiticity preserving
    assert abs(np.trace(direct)) < 1e-12
    assert np.allclose(direct, direct.conj().T, atol=1e-12)


def test_propagator_matches_ode_solution():
    d = 5
    a = ops.build_annihilation(d)
    h = 0.4 * (a + a.conj().T)
    spec = ops.thermal_lindblad(0.6, 0.4, d, hamiltonian=h)
    rho0 = ops.fock_state(1, d)
    prop = ops.LindbladPropagator(spec, 0.3)

    def rhs(t, y):
        return ops.lindblad_apply(spec, y.reshape(d, d)).ravel()

    sol = solve_ivp(rhs, (0, 0.3), rho0.ravel(), rtol=1e-11, atol=1e-13)
    assert np.allclose(prop(rho0), sol.y[:, -1].reshape(d, d), atol=1e-9)


def test_propagator_blocks_agree_with_dense_expm():
    spec = ops.thermal_lindblad(1.0, 0.5, 8)
    dense = scipy.linalg.expm(0.05 * ops.liouvillian(spec))
    rho = random_state(np.random.default_rng(3), 8)
    prop = ops.LindbladPropagator(spec, 0.05)
    assert len(prop.blocks) > 1
    assert np.allclose(prop(rho), (dense @ rho.ravel()).reshape(8, 8), atol=1e-13)
    batch = np.stack([rho, rho.conj()])
    assert np.allclose(prop(batch)[1], prop(rho.conj()))


def test_moments_of_thermal_and_ground_states():
    m = ops.moments(ops.fock_state(0, 20))
    assert (m.mean_q, m.mean_p) == pytest.approx((0.0, 0.0), abs=1e-12)
    assert np.allclose(m.cov, 0.5 * np.eye(2))
    m = ops.moments(ops.thermal_state(1.0, 60))
    assert np.allclose(m.cov, 1.5 * np.eye(2), atol=1e-9)
    with pytest.raises(ValueError):
        ops.moments(2 * ops.fock_state(0, 4))


def test_top_population():
    rho = ops.thermal_state(0.5, 10)
    assert ops.top_population(rho) == pytest.approx(np.real(rho[-1, -1]))
