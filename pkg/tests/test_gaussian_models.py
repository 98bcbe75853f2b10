import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec

from cqht.gaussian_models import (
    KalmanBucyFilter,
    LinearGaussianModel,
    build_force_models,
    chernoff_bounds,
    chernoff_curve,
    chernoff_exponent,
    filter_time_constant,
    integrate_riccati,
    scalar_steady_state,
)

GROUND = np.diag([0.5, 0.5])


def force_pair(C=2.0, T=None):
    m0, m1 = build_force_models(1.0, 1.0, C, -0.5, 1.0, 1.0)
    sig1 = scipy.linalg.block_diag(GROUND, [[1.0]])
    return m0, m1, GROUND, sig1


def test_model_validation():
    with pytest.raises(ValueError):
        LinearGaussianModel([[0.0]], [[-1.0]], [[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        LinearGaussianModel([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    with pytest.raises(ValueError):
        LinearGaussianModel(np.eye(2), np.eye(3), [[1.0, 0.0]], [[1.0]])
    with pytest.raises(ValueError):
        build_force_models(1.0, 1.0, [1.0, 2.0], -0.5, 1.0, 1.0)


def test_force_model_structure():
    m0, m1 = build_force_models(2.0, 3.0, 0.5, -0.4, 0.7, 0.25, hbar=1.0)
    assert m0.n == 2 and m1.n == 3
    assert np.allclose(m1.J[:2, :2], m0.J)
    assert m1.J[1, 2] == 0.5 and m1.J[2, 2] == -0.4
    assert m0.S[1, 1] == pytest.approx(1 / (4 * 0.25))
    assert m1.S[2, 2] == 0.7
    assert np.allclose(m1.backaction[:2, :2], m0.backaction)


@pytest.mark.parametrize("J,S,R", [(-0.7, 2.0, 0.5), (0.3, 1.0, 2.0), (0.0, 0.4, 1.0)])
def test_scalar_steady_state_is_quadratic_root(J, S, R):
    root = max(np.roots([-1 / R, 2 * J, S]).real)
    assert scalar_steady_state(J, S, R) == pytest.approx(root, rel=1e-12)


def test_scalar_riccati_transient_matches_closed_form():
    J, S, R = -0.4, 1.5, 0.8
    rp = scalar_steady_state(J, S, R)
    rm = R * (J - math.sqrt(J * J + S / R))
    sig0 = 3.0
    model = LinearGaussianModel([[J]], [[S]], [[1.0]], [[R]])
    errs = []
    for dt in (0.02, 0.01):
        t = np.arange(int(round(4 / dt)) + 1) * dt
        u = (sig0 - rp) / (sig0 - rm) * np.exp(-(rp - rm) * t / R)
        exact = (rp - u * rm) / (1 - u)
        errs.append(np.abs(integrate_riccati(model, [[sig0]], 4.0, dt)[:, 0, 0] - exact).max())
    assert errs[1] < 1e-6
    # fourth order
    assert errs[0] / errs[1] > 12


def test_riccati_steady_state_matches_care():
    m0, m1, s0, s1 = force_pair()
    for m, s in ((m0, s0), (m1, s1)):
        care = scipy.linalg.solve_continuous_are(m.J.T, m.K.T, m.S, m.R)
        num = integrate_riccati(m, s, 80.0, 0.01)[-1]
        assert np.allclose(num, care, atol=1e-8)


def test_filter_time_constant_scalar():
    J, S, R = -0.5, 1.0, 1.0
    sig = scalar_steady_state(J, S, R)
    model = LinearGaussianModel([[J]], [[S]], [[1.0]], [[R]])
    assert filter_time_constant(model, np.array([[sig]])) == pytest.approx(1 / (-J + sig / R))


def batch_posterior_mean(model, Sigma0, dys, dt):
    """Posterior mean of the final state by conditioning the joint Gaussian of the split discretization."""
    n = model.n
    F = scipy.linalg.expm(model.J * dt)
    S_rest = model.S - model.backaction
    Qd = quad_vec(lambda s: scipy.linalg.expm(model.J * s) @ S_rest @ scipy.linalg.expm(model.J.T * s), 0, dt, epsabs=1e-14)[0]
    M = len(dys)
    # primitives: x0, then per step a_k (backaction kick), b_k (process noise), v_k (record noise)
    blocks = [Sigma0] + [dt * model.backaction, Qd, model.R * dt] * M
    P = scipy.linalg.block_diag(*blocks)
    size = P.shape[0]
    x = np.zeros((n, size))
    x[:, :n] = np.eye(n)
    Y = np.zeros((M, size))
    col = n
    for k in range(M):
        Y[k] = dt * (model.K @ x)[0]
        Y[k, col + 2 * n] = 1.0
        a = np.zeros((n, size))
        a[:, col:col + n] = np.eye(n)
        b = np.zeros((n, size))
        b[:, col + n:col + 2 * n] = np.eye(n)
        x = F @ (x + a) + b
        col += 2 * n + 1
    Cxy = x @ P @ Y.T
    Cyy = Y @ P @ Y.T
    return Cxy @ np.linalg.solve(Cyy, dys)


def test_split_kalman_equals_batch_conditioning():
    m0, m1, s0, s1 = force_pair()
    dt, M = 0.05, 40
    dys = np.random.default_rng(3).normal(0, math.sqrt(dt), M)
    for m, s in ((m0, s0), (m1, s1)):
        kf = KalmanBucyFilter(m, dt, s, M, "split")
        z = kf.initial(np.zeros(m.n))
        for d in dys:
            z = kf.step(z, d)
        assert np.allclose(z.mean, batch_posterior_mean(m, s, dys, dt), atol=1e-10)


def test_euler_and_split_kalman_converge():
    m0, m1, s0, s1 = force_pair()
    T, fine = 4.0, 5e-4
    dW = np.random.default_rng(8).normal(0, math.sqrt(fine), int(T / fine))
    final = {}
    for method in ("euler", "split"):
        for agg in (8, 1):
            dt = fine * agg
            kf = KalmanBucyFilter(m1, dt, s1, dW.size // agg, method)
            z = kf.initial(np.zeros(3))
            for d in dW.reshape(-1, agg).sum(axis=1):
                z = kf.step(z, d)
            final[method, agg] = kf.estimate(z)
    gap_coarse = abs(final["euler", 8] - final["split", 8])
    gap_fine = abs(final["euler", 1] - final["split", 1])
    assert gap_fine < gap_coarse / 4


def test_batched_trials_match_single():
    m0, _, s0, _ = force_pair()
    kf = KalmanBucyFilter(m0, 0.01, s0, 50)
    dys = np.random.default_rng(0).normal(0, 0.1, (50, 3))
    zb = kf.initial(np.zeros(2), 3)
    singles = [kf.initial(np.zeros(2)) for _ in range(3)]
    for row in dys:
        zb = kf.step(zb, row)
        singles = [kf.step(z, d) for z, d in zip(singles, row)]
    assert np.allclose(zb.mean, np.array([z.mean for z in singles]))
    with pytest.raises(IndexError):
        kf.step(zb, dys[0])


def test_chernoff_endpoints_vanish():
    m0, m1, s0, s1 = force_pair()
    mu = chernoff_curve([0.0, 1.0], m0, m1, 3.0, 0.01, s0, s1)
    assert np.abs(mu).max() < 1e-12
    with pytest.raises(ValueError):
        chernoff_exponent(1.5, m0, m1, 1.0, 0.01, s0, s1)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.02, 0.09))
def test_chernoff_curve_convex_and_negative(s, h):
    m0, m1, s0, s1 = force_pair()
    mu = chernoff_curve([s - 0.5 * h, s, s + 0.5 * h], m0, m1, 2.0, 0.01, s0, s1)
    assert mu[1] <= 0
    assert mu[0] + mu[2] - 2 * mu[1] >= -1e-10


def discrete_chernoff(model0, model1, s0, s1, T, dt, s):
    """ln E0[Lambda^s] for the sampled record dy_k = K x_k dt + noise, by Gaussian determinants."""
    M = int(round(T / dt))

    def record_cov(m, sig):
        F = scipy.linalg.expm(m.J * dt)
        Qd = quad_vec(lambda u: scipy.linalg.expm(m.J * u) @ m.S @ scipy.linalg.expm(m.J.T * u), 0, dt, epsabs=1e-14)[0]
        covs = [np.array(sig)]
        for _ in range(M - 1):
            covs.append(F @ covs[-1] @ F.T + Qd)
        C = np.empty((M, M))
        Fk = [np.eye(m.n)]
        for _ in range(M):
            Fk.append(F @ Fk[-1])
        K = m.K[0]
        for i in range(M):
            for j in range(i + 1):
                C[i, j] = C[j, i] = dt * dt * K @ Fk[i - j] @ covs[j] @ K
        return C + m.R[0, 0] * dt * np.eye(M)

    C0, C1 = record_cov(model0, s0), record_cov(model1, s1)
    _, ld0 = np.linalg.slogdet(C0)
    _, ld1 = np.linalg.slogdet(C1)
    _, ldm = np.linalg.slogdet(s * np.linalg.inv(C1) + (1 - s) * np.linalg.inv(C0))
    return -0.5 * (s * ld1 + (1 - s) * ld0 + ldm)


def test_chernoff_curve_matches_gaussian_determinant_oracle():
    m0, m1, s0, s1 = force_pair()
    T = 2.0
    for s in (0.25, 0.5, 0.75):
        ref = discrete_chernoff(m0, m1, s0, s1, T, 0.01, s)
        assert chernoff_exponent(s, m0, m1, T, 0.01, s0, s1) == pytest.approx(ref, rel=2e-2)


def test_chernoff_bounds_behaviour():
    m0, m1, s0, s1 = force_pair()
    cb = chernoff_bounds(0.0, m0, m1, 3.0, 0.01, s0, s1)
    assert 0 < cb.bound_P10 <= 1 and 0 < cb.bound_P01 <= 1
    # at gamma = 0 both bounds reduce to exp(min mu)
    assert cb.bound_P10 == pytest.approx(math.exp(cb.mu_s), rel=1e-9)
    hi = chernoff_bounds(1.0, m0, m1, 3.0, 0.01, s0, s1)
    assert hi.bound_P10 < cb.bound_P10 and hi.bound_P01 > cb.bound_P01
    # refinement never loosens the bounds
    coarse = chernoff_bounds(1.0, m0, m1, 3.0, 0.01, s0, s1, refine=False)
    assert hi.bound_P10 <= coarse.bound_P10 and hi.bound_P01 <= coarse.bound_P01
