"""Linear-Gaussian hypotheses: Kalman-Bucy filters, Riccati equations and Chernoff bounds.

Observations are ``dy = K z dt + dV`` with ``dV dV^T = R dt`` and states follow
``dz = J z dt + dW`` with ``dW dW^T = S dt``.  For the optomechanical force
models ``z = (q, p, x)`` and the measurement backaction enters ``S`` as the
momentum diffusion ``hbar^2 / 4R``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid

from .filters import StepSizeError

__all__ = [
    "LinearGaussianModel",
    "KalmanState",
    "ChernoffResult",
    "riccati_rhs",
    "integrate_riccati",
    "scalar_steady_state",
    "kalman_bucy_step",
    "kalman_split_step",
    "KalmanBucyFilter",
    "build_force_models",
    "chernoff_exponent",
    "chernoff_curve",
    "chernoff_bounds",
    "filter_time_constant",
]

PSD_TOL = 1e-10


def _as_matrix(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return a


@dataclass(frozen=True)
class LinearGaussianModel:
    """Drift ``J``, process noise ``S``, observation rows ``K`` and noise ``R``.

    ``backaction`` optionally marks the part of ``S`` caused by the
    measurement itself; only :func:`kalman_split_step` uses it, applying that
    diffusion together with the observation update.
    """

    J: np.ndarray
    S: np.ndarray
    K: np.ndarray
    R: np.ndarray
    backaction: np.ndarray = None
    label: str = ""

    def __post_init__(self):
        J = _as_matrix(self.J)
        S = _as_matrix(self.S)
        K = _as_matrix(self.K)
        R = _as_matrix(self.R)
        n = J.shape[0]
        if J.shape != (n, n) or S.shape != (n, n):
            raise ValueError("J and S must be square matrices of the same size")
        if K.shape[1] != n or R.shape != (K.shape[0], K.shape[0]):
            raise ValueError("K must have one column per state and R must match the observation count")
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("S must be symmetric")
        if np.linalg.eigvalsh(S).min() < -PSD_TOL:
            raise ValueError("S must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        ba = np.zeros((n, n)) if self.backaction is None else _as_matrix(self.backaction)
        for name, val in (("J", J), ("S", S), ("K", K), ("R", R), ("backaction", ba)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.J.shape[0]

    @property
    def Rinv(self):
        return np.linalg.inv(self.R)


@dataclass(frozen=True)
class KalmanState:
    """Posterior mean (``(n,)`` or batched ``(trials, n)``) and shared covariance."""

    mean: np.ndarray
    cov: np.ndarray
    index: int = 0


@dataclass(frozen=True)
class ChernoffResult:
    """Chernoff bounds at log-threshold ``gamma``.

    ``s_star``/``mu_s`` locate the minimum of the exponent itself; the two
    bounds are minimized separately over ``s`` (``s_P10``, ``s_P01``).
    """

    gamma: float
    s_grid: np.ndarray
    mu_grid: np.ndarray
    s_star: float
    mu_s: float
    s_P10: float
    s_P01: float
    bound_P10: float
    bound_P01: float


def riccati_rhs(model, Sigma):
    """``J Sigma + Sigma J^T - Sigma K^T R^-1 K Sigma^T + S``."""
    J, K = model.J, model.K
    return J @ Sigma + Sigma @ J.T - Sigma @ K.T @ model.Rinv @ K @ Sigma.T + model.S


def _rk4_riccati(J, S, KtRK, Sigma, dt):
    def f(X):
        return J @ X + X @ np.swapaxes(J, -1, -2) - X @ KtRK @ np.swapaxes(X, -1, -2) + S

    k1 = f(Sigma)
    k2 = f(Sigma + 0.5 * dt * k1)
    k3 = f(Sigma + 0.5 * dt * k2)
    k4 = f(Sigma + dt * k3)
    out = Sigma + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def integrate_riccati(model, Sigma0, T, dt):
    """Tabulate ``Sigma(t_k)`` for ``t_k = k dt``, ``k = 0..round(T/dt)`` with classical RK4."""
    n_steps = int(round(T / dt))
    Sigma = np.array(Sigma0, dtype=float)
    KtRK = model.K.T @ model.Rinv @ model.K
    out = np.empty((n_steps + 1,) + Sigma.shape)
    out[0] = Sigma
    for k in range(n_steps):
        Sigma = _rk4_riccati(model.J, model.S, KtRK, Sigma, dt)
        out[k + 1] = Sigma
    return out


def scalar_steady_state(J, S, R):
    """Positive root of ``2 J Sigma - Sigma^2 / R + S = 0``."""
    return R * (J + np.sqrt(J * J + S / R))


def _check_psd(Sigma):
    if np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T)).min() < -PSD_TOL * max(1.0, np.abs(Sigma).max()):
        raise StepSizeError("covariance lost positive semidefiniteness; reduce dt")


def kalman_bucy_step(model, kstate, dy, dt):
    """Euler step of the Kalman-Bucy mean and Riccati covariance."""
    z = np.asarray(kstate.mean, dtype=float)
    Sigma = kstate.cov
    K = model.K
    gain = Sigma @ K.T @ model.Rinv
    dy = np.asarray(dy, dtype=float).reshape(z.shape[:-1] + (K.shape[0],))
    innov = dy - z @ K.T * dt
    z_new = z + z @ model.J.T * dt + innov @ gain.T
    Sigma_new = Sigma + dt * riccati_rhs(model, Sigma)
    Sigma_new = 0.5 * (Sigma_new + Sigma_new.T)
    _check_psd(Sigma_new)
    return KalmanState(z_new, Sigma_new, kstate.index + 1)


def _discrete_noise(J, S, dt):
    """Van Loan: ``int_0^dt e^{J s} S e^{J^T s} ds``."""
    n = J.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -J
    M[:n, n:] = S
    M[n:, n:] = J.T
    E = scipy.linalg.expm(M * dt)
    F = E[n:, n:].T
    return F @ E[:n, n:], F


def kalman_split_step(model, kstate, dy, dt):
    """Exact discrete step: Bayes update on ``dy`` plus backaction, then exact prediction.

    This mirrors the operator splitting of the hybrid density-matrix filter,
    so the two agree up to Fock truncation and grid effects.
    """
    z = np.asarray(kstate.mean, dtype=float)
    Sigma = kstate.cov
    K = model.K
    dy = np.asarray(dy, dtype=float).reshape(z.shape[:-1] + (K.shape[0],))
    cov_y = dt * dt * K @ Sigma @ K.T + dt * model.R
    G = dt * Sigma @ K.T @ np.linalg.inv(cov_y)
    z = z + (dy - dt * z @ K.T) @ G.T
    Sigma = Sigma - dt * G @ K @ Sigma + dt * model.backaction
    Qd, F = _discrete_noise(model.J, model.S - model.backaction, dt)
    z = z @ F.T
    Sigma = F @ Sigma @ F.T + Qd
    Sigma = 0.5 * (Sigma + Sigma.T)
    _check_psd(Sigma)
    return KalmanState(z, Sigma, kstate.index + 1)


class KalmanBucyFilter:
    """Kalman-Bucy filter with the (record independent) covariance pre-tabulated.

    ``method="euler"`` tabulates the Riccati solution with RK4 and steps the
    mean with Itô-Euler; ``method="split"`` uses :func:`kalman_split_step`.
    Means may carry a leading trial axis so whole ensembles step together.
    """

    def __init__(self, model, dt, Sigma0, n_steps, method="euler"):
        self.model = model
        self.dt = float(dt)
        self.method = method
        self.n_steps = int(n_steps)
        K, Rinv = model.K, model.Rinv
        if method == "euler":
            self.covs = integrate_riccati(model, Sigma0, self.n_steps * self.dt, self.dt)
            self.gains = self.covs @ K.T @ Rinv
            self.F = None
        elif method == "split":
            covs = [np.array(Sigma0, dtype=float)]
            gains = []
            Sigma = covs[0]
            Qd, F = _discrete_noise(model.J, model.S - model.backaction, self.dt)
            for _ in range(self.n_steps):
                cov_y = dt * dt * K @ Sigma @ K.T + dt * model.R
                G = dt * Sigma @ K.T @ np.linalg.inv(cov_y)
                gains.append(G)
                Sigma = Sigma - dt * G @ K @ Sigma + dt * model.backaction
                Sigma = F @ Sigma @ F.T + Qd
                covs.append(0.5 * (Sigma + Sigma.T))
            self.covs = np.array(covs)
            self.gains = np.array(gains)
            self.F = F
        else:
            raise ValueError(f"unknown Kalman method {method!r}")

    def initial(self, mean0, n_trials=None):
        mean0 = np.asarray(mean0, dtype=float)
        if n_trials is not None:
            mean0 = np.broadcast_to(mean0, (n_trials, self.model.n)).copy()
        return KalmanState(mean0, self.covs[0], 0)

    def estimate(self, state):
        mu = state.mean @ self.model.K.T
        return mu[..., 0] if mu.shape[-1] == 1 else mu

    def step(self, state, dy):
        k = state.index
        if k >= self.n_steps:
            raise IndexError("filter stepped beyond its tabulated horizon")
        z = state.mean
        K = self.model.K
        dy = np.asarray(dy, dtype=float).reshape(z.shape[:-1] + (K.shape[0],))
        if self.method == "euler":
            z = z + self.dt * z @ self.model.J.T + (dy - self.dt * z @ K.T) @ self.gains[k].T
        else:
            z = z + (dy - self.dt * z @ K.T) @ self.gains[k].T
            z = z @ self.F.T
        return KalmanState(z, self.covs[k + 1], k + 1)


def build_force_models(m, omega, C, A, B, R, hbar=1.0):
    """Null (oscillator only) and signal (oscillator plus force ``C x``) models.

    The signal ``x`` follows ``dx = A x dt + dW``, ``dW dW^T = B dt``.  Both
    models observe the mirror position with noise ``R`` and carry momentum
    backaction diffusion ``hbar^2 / 4R``.
    """
    if not (m > 0 and omega > 0 and R > 0 and hbar > 0):
        raise ValueError("mass, frequency, noise variance and hbar must be positive")
    A = _as_matrix(A)
    B = _as_matrix(B)
    C = np.atleast_1d(np.asarray(C, dtype=float)).reshape(-1)
    k = A.shape[0]
    if C.size != k or B.shape != (k, k):
        raise ValueError(f"coupling row of length {C.size} does not match signal dimension {k}")
    diff = hbar**2 / (4 * R)
    J0 = np.array([[0.0, 1.0 / m], [-m * omega**2, 0.0]])
    S0 = np.diag([0.0, diff])
    K0 = np.array([[1.0, 0.0]])
    model0 = LinearGaussianModel(J0, S0, K0, R, backaction=S0, label="H0")
    n = 2 + k
    J1 = np.zeros((n, n))
    J1[:2, :2] = J0
    J1[1, 2:] = C
    J1[2:, 2:] = A
    S1 = np.zeros((n, n))
    S1[1, 1] = diff
    S1[2:, 2:] = B
    ba1 = np.zeros((n, n))
    ba1[1, 1] = diff
    K1 = np.zeros((1, n))
    K1[0, 0] = 1.0
    model1 = LinearGaussianModel(J1, S1, K1, R, backaction=ba1, label="H1")
    return model0, model1


def _scalar_R(model0, model1):
    R0, R1 = model0.R, model1.R
    if R0.shape != (1, 1) or R1.shape != (1, 1) or not np.isclose(R0[0, 0], R1[0, 0]):
        raise ValueError("Chernoff exponent needs a common scalar observation noise R")
    return float(R0[0, 0])


def _q_variance(model, covs):
    K = model.K
    return np.einsum("i,kij,j->k", K[0], covs, K[0])


def chernoff_curve(s_values, model0, model1, T, dt, Sigma0_0, Sigma0_1):
    """``mu(s)`` for an array of ``s`` (all augmented Riccatis integrated together)."""
    s = np.atleast_1d(np.asarray(s_values, dtype=float))
    if np.any((s < 0) | (s > 1)):
        raise ValueError("s must lie in [0, 1]")
    R = _scalar_R(model0, model1)
    n0, n1 = model0.n, model1.n
    n = n0 + n1
    Jt = scipy.linalg.block_diag(model0.J, model1.J)
    St = scipy.linalg.block_diag(model0.S, model1.S)
    Kt = np.zeros((s.size, 1, n))
    Kt[:, 0, :n0] = np.sqrt(s)[:, None] * model0.K[0]
    Kt[:, 0, n0:] = np.sqrt(1 - s)[:, None] * model1.K[0]
    KtRK = np.swapaxes(Kt, -1, -2) @ Kt / R
    S0 = np.broadcast_to(scipy.linalg.block_diag(Sigma0_0, Sigma0_1), (s.size, n, n)).copy()
    n_steps = int(round(T / dt))
    cov0 = integrate_riccati(model0, Sigma0_0, n_steps * dt, dt)
    cov1 = integrate_riccati(model1, Sigma0_1, n_steps * dt, dt)
    v0 = _q_variance(model0, cov0)
    v1 = _q_variance(model1, cov1)
    vt = np.empty((n_steps + 1, s.size))
    Sig = S0
    vt[0] = (Kt @ Sig @ np.swapaxes(Kt, -1, -2))[:, 0, 0]
    for k in range(n_steps):
        Sig = _rk4_riccati(Jt, St, KtRK, Sig, dt)
        vt[k + 1] = (Kt @ Sig @ np.swapaxes(Kt, -1, -2))[:, 0, 0]
    integrand = (1 - s)[None, :] * v1[:, None] + s[None, :] * v0[:, None] - vt
    return trapezoid(integrand, dx=dt, axis=0) / (2 * R)


def chernoff_exponent(s, model0, model1, T, dt, Sigma0_0, Sigma0_1):
    """Log moment-generating function ``mu(s) = ln E[Lambda^s | H0]``."""
    if not 0 <= s <= 1:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    return float(chernoff_curve([s], model0, model1, T, dt, Sigma0_0, Sigma0_1)[0])


def chernoff_bounds(gamma, model0, model1, T, dt, Sigma0_0, Sigma0_1, s_grid=21, refine=True):
    """Tightest Chernoff bounds on ``P10`` and ``P01`` for a log-threshold ``gamma``.

    ``ln P10 <= mu(s) - s gamma`` and ``ln P01 <= mu(s) + (1 - s) gamma``.
    Each objective is minimized over ``s_grid`` and then, if ``refine``, over
    a finer grid spanning the neighbours of the best coarse point.
    """
    if np.isscalar(s_grid):
        s_grid = np.linspace(0.0, 1.0, int(s_grid))
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.size == 0:
        raise ValueError("empty s grid")
    mu = chernoff_curve(s_grid, model0, model1, T, dt, Sigma0_0, Sigma0_1)
    objectives = (
        lambda s, m: m,
        lambda s, m: m - s * gamma,
        lambda s, m: m + (1 - s) * gamma,
    )
    picks = []
    fine_grids = []
    for obj in objectives:
        i = int(np.argmin(obj(s_grid, mu)))
        picks.append((s_grid[i], obj(s_grid[i], mu[i])))
        lo = s_grid[max(i - 1, 0)]
        hi = s_grid[min(i + 1, s_grid.size - 1)]
        fine_grids.append(np.linspace(lo, hi, 41) if refine and hi > lo else np.array([]))
    if refine and any(g.size for g in fine_grids):
        fine_mu = chernoff_curve(np.concatenate(fine_grids), model0, model1, T, dt, Sigma0_0, Sigma0_1)
        start = 0
        for j, (obj, g) in enumerate(zip(objectives, fine_grids)):
            vals = obj(g, fine_mu[start:start + g.size])
            start += g.size
            if g.size and vals.min() < picks[j][1]:
                k = int(np.argmin(vals))
                picks[j] = (g[k], vals[k])
    (s_star, mu_s), (s10, l10), (s01, l01) = picks
    return ChernoffResult(
        gamma=float(gamma),
        s_grid=s_grid,
        mu_grid=mu,
        s_star=float(s_star),
        mu_s=float(mu_s),
        s_P10=float(s10),
        s_P01=float(s01),
        bound_P10=float(min(1.0, np.exp(l10))),
        bound_P01=float(min(1.0, np.exp(l01))),
    )


def filter_time_constant(model, Sigma):
    """Slowest decay time of the closed-loop filter matrix ``J - Sigma K^T R^-1 K``."""
    A = model.J - Sigma @ model.K.T @ model.Rinv @ model.K
    rates = -np.real(np.linalg.eigvals(A))
    return float(1.0 / rates.min())
