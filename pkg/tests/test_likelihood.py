import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from cqht.likelihood import (
    Decision,
    LLRAccumulator,
    bayes_threshold,
    decide,
    gaussian_llr_increment,
    neyman_pearson_threshold,
    poisson_llr_increment,
    posterior,
    posterior_from_log,
)

finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60)
@given(finite, finite, st.floats(-1, 1), st.floats(1e-4, 0.1), st.floats(0.1, 5))
def test_gaussian_increment_is_density_ratio(mu1, mu0, dy, dt, R):
    sd = math.sqrt(R * dt)
    direct = norm.logpdf(dy, mu1 * dt, sd) - norm.logpdf(dy, mu0 * dt, sd)
    assert gaussian_llr_increment(mu1, mu0, dy, dt, R) == pytest.approx(direct, rel=1e-9, abs=1e-9)


def test_gaussian_increment_matrix_noise():
    R = np.array([[2.0, 0.3], [0.3, 0.5]])
    mu1, mu0, dy, dt = np.array([0.4, -1.0]), np.array([0.1, 0.2]), np.array([0.02, -0.01]), 0.01
    direct = multivariate_normal.logpdf(dy, mu1 * dt, R * dt) - multivariate_normal.logpdf(dy, mu0 * dt, R * dt)
    assert gaussian_llr_increment(mu1, mu0, dy, dt, R) == pytest.approx(direct, rel=1e-10)
    with pytest.raises(ValueError):
        gaussian_llr_increment(mu1, mu0, dy, dt, -R)


@settings(max_examples=60)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.sampled_from([0.0, 1.0]))
def test_poisson_increment_matches_bernoulli_to_first_order(mu1, mu0, dy):
    dt = 1e-5
    p1, p0 = mu1 * dt, mu0 * dt
    direct = math.log(p1 / p0) if dy else math.log((1 - p1) / (1 - p0))
    # a click differs by the O(dt) compensator, an empty step only at O(dt^2)
    tol = 2 * dt * max(mu1, mu0) if dy else 1e-8
    assert poisson_llr_increment(mu1, mu0, dy, dt) == pytest.approx(direct, abs=tol)


def test_poisson_increment_edge_cases():
    assert poisson_llr_increment(0.0, 1.0, 1.0, 0.01) == -math.inf
    assert poisson_llr_increment(1.0, 0.0, 1.0, 0.01) == math.inf
    assert poisson_llr_increment(0.0, 0.0, 1.0, 0.01) == 0.0
    assert poisson_llr_increment(0.0, 1.0, 0.0, 0.01) == pytest.approx(0.01)
    out = poisson_llr_increment(np.array([1.0, 2.0]), np.array([1.0, 1.0]), np.array([1.0, 0.0]), 0.1)
    assert np.allclose(out, [0.0, -0.1])


@settings(max_examples=60)
@given(st.floats(0.01, 0.99), st.floats(-30, 30))
def test_two_hypothesis_posterior(P1, log_lam):
    lam = math.exp(log_lam)
    p1, p0 = posterior((1 - P1, P1), lam)
    assert p1 + p0 == pytest.approx(1.0)
    assert p1 == pytest.approx(P1 * lam / (P1 * lam + 1 - P1), rel=1e-9)


@settings(max_examples=40)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=5))
def test_posterior_from_log_is_a_distribution(log_ratios):
    k = len(log_ratios) + 1
    post = posterior_from_log(np.full(k, 1 / k), log_ratios)
    assert post.sum() == pytest.approx(1.0)
    assert np.all(post >= 0)
    best = int(np.argmax(np.concatenate([[0.0], log_ratios])))
    assert post[best] == post.max()


def test_posterior_limits_and_errors():
    assert posterior((0.5, 0.5), math.inf) == (1.0, 0.0)
    assert posterior((0.5, 0.5), 0.0) == (0.0, 1.0)
    with pytest.raises(ValueError):
        posterior((0.6, 0.6), 1.0)
    with pytest.raises(ValueError):
        posterior((0.5, 0.5), -1.0)
    assert posterior((0.2, 0.3, 0.5), [1.0, 1.0]) == pytest.approx([0.2, 0.3, 0.5])


def test_bayes_threshold_minimizes_risk():
    # on a pair of unit Gaussians the Bayes rule beats nearby thresholds
    a, b, P0, P1 = 2.0, 1.0, 0.7, 0.3
    g = bayes_threshold(a, b, P0, P1)
    assert g == pytest.approx(b * P0 / (a * P1))

    def risk(log_gamma):
        # log Lambda(y) = y - 1/2 for H0 ~ N(0,1), H1 ~ N(1,1)
        cut = log_gamma + 0.5
        return a * P1 * norm.cdf(cut, 1) + b * P0 * norm.sf(cut)

    best = risk(math.log(g))
    assert best <= risk(math.log(g) + 0.1) and best <= risk(math.log(g) - 0.1)
    with pytest.raises(ValueError):
        bayes_threshold(0.0, 1.0, 0.5, 0.5)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.5))
def test_neyman_pearson_size(seed, size):
    v = np.random.default_rng(seed).normal(size=200)
    g = neyman_pearson_threshold(v, size)
    rate = np.mean(v >= math.log(g))
    assert rate <= size
    assume(math.floor(size * 200) >= 1)
    # one more false alarm would exceed the size
    assert np.mean(v >= np.sort(v)[-(math.floor(size * 200) + 1)]) > size


def test_decide_tie_goes_to_h1():
    assert decide(2.0, 2.0).chosen == "H1"
    assert decide(math.log(2.0), 2.0, log=True).chosen == "H1"
    assert decide(1.99, 2.0).chosen == "H0"
    assert decide(0.0, 1.0).chosen == "H0"
    with pytest.raises(ValueError):
        Decision("H1", 0.0, 0.0)
    with pytest.raises(ValueError):
        decide(1.0, 1.0, P0=0.5, P1=0.6)


def test_accumulator():
    acc = LLRAccumulator(keep_history=True)
    acc.add_gaussian(1.0, 0.0, 0.1, 0.01)
    assert acc.log_lambda == pytest.approx(0.1 - 0.005)
    acc.add_poisson(0.0, 1.0, 1.0, 0.01)
    assert acc.flagged and acc.log_lambda == -math.inf
    acc.add_gaussian(1.0, 0.0, 0.1, 0.01)
    assert acc.log_lambda == -math.inf
    assert len(acc.history) == 3 and acc.t == pytest.approx(0.03)
