"""Log-likelihood ratios from assumptive estimates, posteriors and decisions.

The stored quantity is always ``log Lambda``; ``Lambda`` itself is only formed
when a decision or posterior needs it.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "Decision",
    "LLRAccumulator",
    "gaussian_llr_increment",
    "poisson_llr_increment",
    "posterior",
    "posterior_from_log",
    "decide",
    "bayes_threshold",
    "neyman_pearson_threshold",
]


def gaussian_llr_increment(mu1, mu0, dy, dt, R=1.0):
    """``dy^T R^-1 (mu1 - mu0) - dt/2 (mu1^T R^-1 mu1 - mu0^T R^-1 mu0)``.

    With scalar ``R`` the inputs may be arrays of trials.  With a matrix ``R``
    the last axis of ``mu1``, ``mu0`` and ``dy`` indexes observation channels.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim == 0:
        if not R > 0:
            raise ValueError("R must be positive")
        return (dy * (mu1 - mu0) - 0.5 * dt * (mu1 * mu1 - mu0 * mu0)) / R
    try:
        chol = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ValueError("R must be symmetric positive definite") from exc
    mu1, mu0, dy = (np.asarray(v, dtype=float) for v in (mu1, mu0, dy))

    def whiten(v):
        return np.linalg.solve(chol, v[..., None])[..., 0]

    w1, w0, wy = whiten(mu1), whiten(mu0), whiten(dy)
    return np.sum(wy * (w1 - w0), axis=-1) - 0.5 * dt * np.sum(w1 * w1 - w0 * w0, axis=-1)


def poisson_llr_increment(mu1, mu0, dy, dt):
    """``dy ln(mu1/mu0) - dt (mu1 - mu0)``; impossible clicks give signed infinities."""
    mu1 = np.asarray(mu1, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    dy = np.asarray(dy, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(mu1) - np.log(mu0)
        # both rates zero at a click: neither hypothesis allows it, no evidence either way
        log_ratio = np.where((mu1 <= 0) & (mu0 <= 0), 0.0, log_ratio)
        out = np.where(dy != 0, dy * log_ratio, 0.0) - dt * (mu1 - mu0)
    return out if out.ndim else float(out)


def posterior_from_log(priors, log_ratios):
    """Posterior over ``K`` hypotheses from ``K-1`` log-ratios ``ln P(Y|H_k)/P(Y|H_0)``.

    Returns an array ordered like ``priors``.
    """
    priors = np.asarray(priors, dtype=float)
    log_ratios = np.atleast_1d(np.asarray(log_ratios, dtype=float))
    if priors.ndim != 1 or priors.size != log_ratios.size + 1:
        raise ValueError("need one more prior than likelihood ratios")
    if np.any(priors < 0) or not math.isclose(priors.sum(), 1.0, rel_tol=1e-9):
        raise ValueError("priors must be non-negative and sum to one")
    with np.errstate(divide="ignore"):
        logp = np.log(priors) + np.concatenate([[0.0], log_ratios])
    if np.all(np.isneginf(logp)):
        raise ValueError("posterior has zero total mass")
    if np.any(np.isposinf(logp)):
        inf = np.isposinf(logp)
        return inf / inf.sum()
    return np.exp(logp - logsumexp(logp))


def posterior(priors, lam):
    """``(P(H1|Y), P(H0|Y))`` for two hypotheses with ``priors = (P0, P1)``.

    For more hypotheses pass ``lam`` as the sequence of ratios against ``H0``;
    the full posterior array is returned instead.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam < 0):
        raise ValueError("likelihood ratios are non-negative")
    with np.errstate(divide="ignore"):
        post = posterior_from_log(priors, np.log(lam))
    if post.size == 2:
        return float(post[1]), float(post[0])
    return post


def bayes_threshold(a, b, P0, P1):
    """Threshold on ``Lambda`` minimizing ``a P01 + b P10``: ``b P0 / (a P1)``."""
    if not (a > 0 and b > 0 and P0 > 0 and P1 > 0):
        raise ValueError("costs and priors must be positive")
    return b * P0 / (a * P1)


def neyman_pearson_threshold(log_lambda_h0, size):
    """Smallest threshold on ``Lambda`` whose empirical false-alarm rate is at most ``size``.

    ``log_lambda_h0`` are log-likelihood ratios of records generated under H0.
    """
    v = np.sort(np.asarray(log_lambda_h0, dtype=float))
    if v.size == 0:
        raise ValueError("need H0 samples")
    if not 0 < size < 1:
        raise ValueError("size must lie in (0, 1)")
    allowed = int(math.floor(size * v.size))
    # log-threshold strictly above the (allowed+1)-th largest value
    lo = v[v.size - allowed - 1]
    above = v[v > lo]
    t = 0.5 * (lo + above[0]) if above.size else lo + max(1.0, abs(lo)) * 1e-9
    gamma = math.exp(t)
    while math.log(gamma) <= lo:
        gamma = float(np.nextafter(gamma, np.inf))
    return gamma


@dataclass(frozen=True)
class Decision:
    chosen: str
    threshold: float
    log_lambda: float
    P0: float = 0.5
    P1: float = 0.5

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not math.isclose(self.P0 + self.P1, 1.0, rel_tol=1e-9):
            raise ValueError("priors must sum to one")


def decide(lam, gamma, P0=0.5, P1=0.5, log=False):
    """Choose H1 iff ``Lambda >= gamma`` (pass ``log=True`` if ``lam`` is ``log Lambda``)."""
    if not gamma > 0:
        raise ValueError("threshold must be positive")
    log_lambda = float(lam) if log else (math.log(lam) if lam > 0 else -math.inf)
    chosen = "H1" if log_lambda >= math.log(gamma) else "H0"
    return Decision(chosen, float(gamma), log_lambda, P0, P1)


@dataclass
class LLRAccumulator:
    """Running ``log Lambda`` with optional ``(t, mu1, mu0, log_lambda)`` history."""

    log_lambda: float = 0.0
    t: float = 0.0
    keep_history: bool = False
    history: list = field(default_factory=list)

    @property
    def flagged(self):
        return math.isinf(self.log_lambda)

    def _push(self, incr, dt, mu1, mu0):
        if not math.isnan(incr) and not self.flagged:
            self.log_lambda += incr
        self.t += dt
        if self.keep_history:
            self.history.append((self.t, mu1, mu0, self.log_lambda))
        return self.log_lambda

    def add_gaussian(self, mu1, mu0, dy, dt, R=1.0):
        return self._push(float(gaussian_llr_increment(mu1, mu0, dy, dt, R)), dt, mu1, mu0)

    def add_poisson(self, mu1, mu0, dy, dt):
        return self._push(float(poisson_llr_increment(mu1, mu0, dy, dt)), dt, mu1, mu0)
