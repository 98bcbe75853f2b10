"""Measurement records generated from a designated true model.

Records are produced in the innovations representation: the true model's
normalized filter is propagated alongside the record and each increment is
``dy = mu_true dt + dV`` (Gaussian) or a Bernoulli count with probability
``mu_true dt`` (counting).  Every trial draws from its own counter-based
stream keyed by ``(seed, trial)``.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .filters import GaussianFilter, HypothesisModel, PoissonFilter, StepSizeError

__all__ = [
    "MeasurementRecord",
    "TruthSpec",
    "make_rng",
    "simulate_gaussian_record",
    "simulate_poisson_record",
    "simulate_innovations",
    "simulate_ou_path",
]

# the counting model is first order in mu dt; beyond this the Bernoulli picture degrades
WEAK_COUNT_LIMIT = 0.1


def make_rng(seed, trial=0, stream=0):
    """Independent generator for ``(seed, trial)`` (Philox counter-based bit generator).

    A non-zero ``stream`` gives a further independent generator for the same trial.
    """
    key = [int(seed), int(trial)] + ([int(stream)] if stream else [])
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Increments ``dy_k`` over ``(t0 + (k-1) dt, t0 + k dt]`` for ``k = 1..M``."""

    t0: float
    dt: float
    kind: str
    increments: np.ndarray
    channels: int = 1
    truth_estimates: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if self.kind not in ("gaussian", "poisson"):
            raise ValueError(f"unknown record kind {self.kind!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.kind == "poisson":
            if self.channels != 1:
                raise ValueError("counting records have a single channel")
            if not np.all((inc == 0) | (inc == 1)):
                raise ValueError("counting increments must be 0 or 1")
        elif not np.all(np.isfinite(inc)):
            raise ValueError("gaussian increments must be finite")
        object.__setattr__(self, "increments", inc)

    def __len__(self):
        return self.increments.shape[0]

    @property
    def times(self):
        """End time of each increment."""
        return self.t0 + self.dt * np.arange(1, len(self) + 1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["dy"] if self.channels == 1 else [f"dy{i}" for i in range(self.channels)]
            w.writerow(["t"] + cols)
            inc = self.increments.reshape(len(self), -1)
            for t, row in zip(self.times, inc):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, kind="gaussian"):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        if t.size < 2:
            raise ValueError("need at least two samples to infer dt")
        dt = float(t[1] - t[0])
        inc = data[:, 1:]
        channels = inc.shape[1]
        if channels == 1:
            inc = inc[:, 0]
        return cls(float(t[0] - dt), dt, kind, inc, channels)


@dataclass(frozen=True, eq=False)
class TruthSpec:
    """True model, its initial state and the seed that fixes the record."""

    model: HypothesisModel
    initial_state: np.ndarray
    seed: int
    trial: int = 0

    def rng(self):
        return make_rng(self.seed, self.trial)


def _n_steps(T, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("T must be at least one step")
    return int(round(T / dt))


def simulate_innovations(filt, state, n_steps, dt, R, rng):
    """Drive a normalized filter with its own innovations.

    ``filt`` needs ``estimate(state)`` and ``step(state, dy)``; this covers the
    quantum, classical-grid and hybrid filters.  Returns the increments and the
    true estimate before each step.
    """
    dys = np.empty(n_steps)
    mus = np.empty(n_steps)
    noise = rng.standard_normal(n_steps) * np.sqrt(R * dt)
    for k in range(n_steps):
        mu = filt.estimate(state)
        dy = mu * dt + noise[k]
        dys[k] = dy
        mus[k] = mu
        state = filt.step(state, dy)
    return dys, mus, state


def simulate_gaussian_record(truth, T, dt, scheme="kraus", leakage_ceiling=1e-6):
    """Gaussian record from a quantum true model (``dV ~ Normal(0, R dt)``)."""
    model = truth.model
    if model.kind != "gaussian":
        raise ValueError("simulate_gaussian_record needs a gaussian model")
    n = _n_steps(T, dt)
    filt = GaussianFilter(model, dt, scheme=scheme, leakage_ceiling=leakage_ceiling)
    state = filt.initial(truth.initial_state)
    dys, mus, _ = simulate_innovations(filt, state, n, dt, model.R, truth.rng())
    return MeasurementRecord(0.0, dt, "gaussian", dys, truth_estimates=mus)


def simulate_poisson_record(truth, T, dt, leakage_ceiling=1e-6):
    """Counting record: a click with probability ``mu_true dt`` in each step."""
    model = truth.model
    if model.kind != "poisson":
        raise ValueError("simulate_poisson_record needs a poisson model")
    n = _n_steps(T, dt)
    filt = PoissonFilter(model, dt, leakage_ceiling=leakage_ceiling)
    state = filt.initial(truth.initial_state)
    rng = truth.rng()
    u = rng.random(n)
    dys = np.zeros(n)
    mus = np.empty(n)
    warned = False
    for k in range(n):
        mu = filt.estimate(state)
        p = mu * dt
        if p >= 1:
            raise StepSizeError(f"click probability {p:.3g} per step; reduce dt")
        if p > WEAK_COUNT_LIMIT and not warned:
            warnings.warn(f"click probability {p:.3g} per step exceeds {WEAK_COUNT_LIMIT}", RuntimeWarning, stacklevel=2)
            warned = True
        mus[k] = mu
        dys[k] = float(u[k] < p)
        state = filt.step(state, dys[k])
    return MeasurementRecord(0.0, dt, "poisson", dys, truth_estimates=mus)


def simulate_ou_path(A, B, x0, T, dt, seed, trial=0):
    """Euler-Maruyama path of ``dx = A x dt + dW`` with ``dW dW^T = B dt``.

    Returns an array of shape ``(M + 1, n)`` including ``x0``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not np.allclose(B, B.T, atol=1e-12):
        raise ValueError("B must be symmetric")
    w, v = np.linalg.eigh(B)
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ValueError("B must be positive semidefinite")
    root = v * np.sqrt(np.clip(w, 0.0, None))
    n = _n_steps(T, dt)
    xi = make_rng(seed, trial).standard_normal((n, x.size)) * np.sqrt(dt)
    path = np.empty((n + 1, x.size))
    path[0] = x
    for k in range(n):
        x = x + dt * (A @ x) + root @ xi[k]
        path[k + 1] = x
    return path

