"""Assumptive filters for continuous Gaussian and Poissonian measurements.

Every filter stores the unnormalized assumptive state in factored form: a
normalized state plus the accumulated ``log tr f``.  The raw linear
propagation (which under/overflows exponentially in the record length) is
kept only in the discrete Kraus oracle steps :func:`kraus_gaussian_step` and
:func:`kraus_poisson_step`.

Two time-stepping schemes are provided for Gaussian measurements:

``"euler"``
    Itô-Euler step of the linear filter equation followed by renormalization.
``"kraus"``
    Finite-``dt`` Gaussian Kraus map applied exactly in the eigenbasis of a
    Hermitian measurement operator, followed by the exact Lindblad
    propagator.  Completely positive at any ``dt`` and consistent with the
    exact discrete Bayes update used by the grid and Kalman filters.

In both schemes ``log tr f`` is accumulated with the Itô estimator-correlator
increment ``dy mu / R - dt mu^2 / (2R)``.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .operators import LindbladPropagator, LindbladSpec, dagger, lindblad_apply, liouvillian

__all__ = [
    "NumericalFault",
    "StepSizeError",
    "TruncationError",
    "GridTooSmallError",
    "HypothesisModel",
    "AssumptiveState",
    "HybridState",
    "ClassicalGridState",
    "assumptive_estimate",
    "poisson_estimate",
    "gaussian_filter_step",
    "poisson_filter_step",
    "kraus_gaussian_step",
    "kraus_poisson_step",
    "GaussianKraus",
    "GaussianFilter",
    "PoissonFilter",
    "EnsembleState",
    "EnsembleGaussianFilter",
    "EnsemblePoissonFilter",
    "gaussian_superoperators",
    "cell_grid",
    "ou_generator",
    "GridPropagator",
    "gaussian_grid_density",
    "classical_estimate",
    "classical_dmz_step",
    "ClassicalDMZFilter",
    "HybridFilter",
    "hybrid_gaussian_step",
]

POSITIVITY_TOL = 1e-8


class NumericalFault(RuntimeError):
    """A filter step produced a state that cannot be trusted."""


class StepSizeError(NumericalFault):
    pass


class TruncationError(NumericalFault):
    pass


class GridTooSmallError(NumericalFault):
    pass


@dataclass(frozen=True)
class HypothesisModel:
    """Everything a filter needs to know about one hypothesis.

    For Gaussian records ``R`` must equal ``Q + S``; pass ``R=None`` to have it
    computed.  ``eta`` and ``alpha`` are only used for Poissonian records.
    """

    lindblad: LindbladSpec
    c: np.ndarray
    kind: str = "gaussian"
    Q: float = 1.0
    S: float = 0.0
    R: float = None
    eta: float = 1.0
    alpha: float = 1.0
    label: str = ""

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex)
        if c.shape != (self.lindblad.dim, self.lindblad.dim):
            raise ValueError("measurement operator does not match the generator dimension")
        object.__setattr__(self, "c", c)
        if self.kind == "gaussian":
            if not self.Q > 0:
                raise ValueError(f"Q must be positive, got {self.Q}")
            if self.S < 0:
                raise ValueError(f"S must be non-negative, got {self.S}")
            if self.R is None:
                object.__setattr__(self, "R", self.Q + self.S)
            elif not math.isclose(self.R, self.Q + self.S, rel_tol=1e-12, abs_tol=0.0):
                raise ValueError(f"total noise R={self.R} must equal Q+S={self.Q + self.S}")
        elif self.kind == "poisson":
            if not 0 < self.eta <= 1:
                raise ValueError(f"eta must lie in (0,1], got {self.eta}")
            if not self.alpha > 0:
                raise ValueError(f"alpha must be positive, got {self.alpha}")
        else:
            raise ValueError(f"unknown measurement kind {self.kind!r}")

    @property
    def dim(self):
        return self.lindblad.dim

    @property
    def is_hermitian(self):
        return np.allclose(self.c, self.c.conj().T, atol=1e-12, rtol=0)


@dataclass(frozen=True)
class AssumptiveState:
    """Normalized state ``rho`` and ``log tr f``; ``f = exp(log_trace) * rho``."""

    rho: np.ndarray
    log_trace: float = 0.0
    clamps: int = 0

    @property
    def unnormalized(self):
        return math.exp(self.log_trace) * self.rho


def _hermitize(rho):
    return 0.5 * (rho + dagger(rho))


def _enforce_positivity(rho, clamps):
    """Clamp tiny negative eigenvalues; abort on large ones."""
    w, v = np.linalg.eigh(rho)
    if w[0] >= 0:
        return rho, clamps
    if w[0] < -POSITIVITY_TOL:
        raise StepSizeError(f"state eigenvalue {w[0]:.3e} below -{POSITIVITY_TOL:g}; reduce dt")
    w = np.clip(w, 0.0, None)
    rho = (v * w) @ v.conj().T
    return rho / np.trace(rho).real, clamps + 1


def assumptive_estimate(model, state):
    """``mu = tr[(c + c^dag)/2 rho]`` for a normalized state."""
    rho = state.rho if isinstance(state, AssumptiveState) else state
    c = model.c
    return float(np.real(np.trace((c + c.conj().T) @ rho)) / 2)


def poisson_estimate(model, state):
    """``mu = eta tr(c^dag c rho)`` for a normalized state."""
    rho = state.rho if isinstance(state, AssumptiveState) else state
    c = model.c
    return float(model.eta * np.real(np.trace(c.conj().T @ c @ rho)))


def _backaction(c, rho):
    cd = c.conj().T
    n = cd @ c
    return 2 * c @ rho @ cd - n @ rho - rho @ n


def gaussian_filter_step(model, state, dy, dt, check_positivity=True):
    """One Itô-Euler step of the assumptive-state equation for a Gaussian record."""
    if model.kind != "gaussian":
        raise ValueError("gaussian_filter_step needs a gaussian model")
    rho = state.rho
    mu = assumptive_estimate(model, state)
    c = model.c
    f = (
        rho
        + dt * lindblad_apply(model.lindblad, rho)
        + dy / (2 * model.R) * (c @ rho + rho @ c.conj().T)
        + dt / (8 * model.Q) * _backaction(c, rho)
    )
    tr = np.trace(f).real
    if not tr > 0:
        raise StepSizeError(f"non-positive trace {tr:.3e} in filter step; reduce dt")
    f = _hermitize(f / tr)
    clamps = state.clamps
    if check_positivity:
        f, clamps = _enforce_positivity(f, clamps)
    log_trace = state.log_trace + dy * mu / model.R - dt * mu * mu / (2 * model.R)
    return AssumptiveState(f, log_trace, clamps)


def poisson_filter_step(model, state, dy, dt, propagator=None):
    """One step of the normalized counting filter.

    ``dy = 1`` applies the jump ``c rho c^dag``; ``dy = 0`` applies the
    no-jump evolution.  The reference rate ``alpha`` enters only the
    log-trace, so log-likelihood ratios are independent of it.
    """
    if model.kind != "poisson":
        raise ValueError("poisson_filter_step needs a poisson model")
    rho = state.rho
    mu = poisson_estimate(model, state)
    c = model.c
    cd = c.conj().T
    if dy:
        if mu <= 0:
            return AssumptiveState(rho, -math.inf, state.clamps)
        f = c @ rho @ cd
    else:
        n = cd @ c
        f = rho + dt * ((1 - model.eta) * c @ rho @ cd - 0.5 * (n @ rho + rho @ n))
        if propagator is None:
            f = f + dt * lindblad_apply(model.lindblad, rho)
    if propagator is not None:
        f = propagator(f)
    tr = np.trace(f).real
    if not tr > 0:
        raise StepSizeError(f"non-positive trace {tr:.3e} in counting step; reduce dt")
    f = _hermitize(f / tr)
    if dy:
        incr = math.log(mu / model.alpha) - dt * (mu - model.alpha)
    else:
        incr = -dt * (mu - model.alpha)
    return AssumptiveState(f, state.log_trace + incr, state.clamps)


def kraus_gaussian_step(model, rho_unnorm, dy, dt):
    """Raw (unnormalized) discrete step: dynamics ``rho + dt L rho`` then the
    first-order Gaussian measurement map with the reference density divided out."""
    r = rho_unnorm + dt * lindblad_apply(model.lindblad, rho_unnorm)
    c = model.c
    return r + dy / (2 * model.R) * (c @ r + r @ c.conj().T) + dt / (8 * model.Q) * _backaction(c, r)


def kraus_poisson_step(model, rho_unnorm, dy, dt):
    """Raw discrete counting step with the reference distribution divided out."""
    r = rho_unnorm + dt * lindblad_apply(model.lindblad, rho_unnorm)
    c = model.c
    cd = c.conj().T
    if dy:
        return (model.eta / model.alpha) * (c @ r @ cd)
    n = cd @ c
    no_jump = r - 0.5 * dt * (n @ r + r @ n) + (1 - model.eta) * dt * (c @ r @ cd)
    return no_jump / (1 - model.alpha * dt)


class GaussianKraus:
    """Exact finite-``dt`` Gaussian measurement map for a Hermitian ``c``.

    In the eigenbasis ``c = V diag(lam) V^dag`` the map is a Hadamard product:
    ``rho_ij *= exp(lbar dy/R - lbar^2 dt/(2R) - (lam_i - lam_j)^2 dt/(8Q))``
    with ``lbar = (lam_i + lam_j)/2``.
    """

    def __init__(self, c, Q, R, dt):
        c = np.asarray(c, dtype=complex)
        if not np.allclose(c, c.conj().T, atol=1e-12, rtol=0):
            raise ValueError("exact Kraus update needs a Hermitian measurement operator")
        if np.count_nonzero(c - np.diag(np.diag(c))) == 0:
            self.lam = np.real(np.diag(c)).copy()
            self.V = None
        else:
            self.lam, self.V = np.linalg.eigh(c)
        self.Q, self.R, self.dt = float(Q), float(R), float(dt)
        diff = self.lam[:, None] - self.lam[None, :]
        self.lbar = 0.5 * (self.lam[:, None] + self.lam[None, :])
        self._static = np.exp(-self.lbar**2 * dt / (2 * R) - diff**2 * dt / (8 * Q))

    def to_eigenbasis(self, rho):
        return rho if self.V is None else self.V.conj().T @ rho @ self.V

    def from_eigenbasis(self, rho):
        return rho if self.V is None else self.V @ rho @ self.V.conj().T

    def factor(self, dy):
        return self._static * np.exp(self.lbar * (dy / self.R))

    def apply_eigen(self, rho_eig, dy):
        """Apply the map to a state already expressed in the eigenbasis."""
        return rho_eig * self.factor(dy)

    def __call__(self, rho, dy):
        return self.from_eigenbasis(self.apply_eigen(self.to_eigenbasis(rho), dy))


class GaussianFilter:
    """Filter for a Gaussian record under one hypothesis at a fixed step ``dt``."""

    def __init__(self, model, dt, scheme="euler", leakage_ceiling=1e-6, check_positivity=True):
        if model.kind != "gaussian":
            raise ValueError("GaussianFilter needs a gaussian model")
        if scheme not in ("euler", "kraus"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.model = model
        self.dt = float(dt)
        self.scheme = scheme
        self.leakage_ceiling = leakage_ceiling
        self.check_positivity = check_positivity
        self.R = model.R
        if scheme == "kraus":
            self.kraus = GaussianKraus(model.c, model.Q, model.R, dt)
            self.propagator = LindbladPropagator(model.lindblad, dt)

    def initial(self, rho0):
        rho0 = np.asarray(rho0, dtype=complex)
        return AssumptiveState(rho0 / np.trace(rho0).real, 0.0)

    def estimate(self, state):
        return assumptive_estimate(self.model, state)

    def step(self, state, dy):
        if self.scheme == "euler":
            new = gaussian_filter_step(self.model, state, dy, self.dt, self.check_positivity)
        else:
            mu = assumptive_estimate(self.model, state)
            f = self.propagator(self.kraus(state.rho, dy))
            tr = np.trace(f).real
            if not tr > 0:
                raise StepSizeError(f"non-positive trace {tr:.3e}")
            R = self.R
            new = AssumptiveState(
                _hermitize(f / tr), state.log_trace + dy * mu / R - self.dt * mu * mu / (2 * R), state.clamps
            )
        if self.leakage_ceiling is not None:
            leak = new.rho[-1, -1].real
            if leak > self.leakage_ceiling:
                raise TruncationError(f"top Fock population {leak:.2e} exceeds ceiling {self.leakage_ceiling:g}")
        return new


class PoissonFilter:
    """Counting-record filter under one hypothesis."""

    def __init__(self, model, dt, exact_dynamics=False, leakage_ceiling=1e-6):
        if model.kind != "poisson":
            raise ValueError("PoissonFilter needs a poisson model")
        self.model = model
        self.dt = float(dt)
        self.leakage_ceiling = leakage_ceiling
        self.propagator = LindbladPropagator(model.lindblad, dt) if exact_dynamics else None

    def initial(self, rho0):
        rho0 = np.asarray(rho0, dtype=complex)
        return AssumptiveState(rho0 / np.trace(rho0).real, 0.0)

    def estimate(self, state):
        return poisson_estimate(self.model, state)

    def step(self, state, dy):
        new = poisson_filter_step(self.model, state, dy, self.dt, self.propagator)
        if self.leakage_ceiling is not None and new.rho[-1, -1].real > self.leakage_ceiling:
            raise TruncationError(f"top Fock population {new.rho[-1, -1].real:.2e} exceeds ceiling")
        return new


# ---------------------------------------------------------------------------
# Ensemble filters on vectorized states


def _sandwich(op):
    """Row-major superoperator of ``rho -> op rho op^dag``."""
    return np.kron(op, op.conj())


def _anticomm(op):
    eye = np.eye(op.shape[0])
    return np.kron(op, eye) + np.kron(eye, op.T)


def gaussian_superoperators(model, dt, scheme="euler"):
    """Matrices ``(A, B)`` with one raw step ``vec f' = (A + dy B) vec f``.

    ``"euler"`` is the Itô-Euler step of the linear filter equation;
    ``"product"`` is the discrete map of :func:`kraus_gaussian_step`, i.e. the
    measurement bracket applied after ``1 + dt L``.
    """
    c = model.c
    d = model.dim
    eye = np.eye(d * d)
    L = liouvillian(model.lindblad)
    Bm = (np.kron(c, np.eye(d)) + np.kron(np.eye(d), c.conj())) / (2 * model.R)
    D = (2 * _sandwich(c) - _anticomm(c.conj().T @ c)) / (8 * model.Q)
    if scheme == "euler":
        return eye + dt * (L + D), Bm
    if scheme == "product":
        K = eye + dt * L
        return (eye + dt * D) @ K, Bm @ K
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class EnsembleState:
    """Row-major vectorized normalized states ``(trials, dim*dim)`` and their log-traces."""

    vec: np.ndarray
    log_trace: np.ndarray

    def rho(self):
        d = int(round(math.sqrt(self.vec.shape[-1])))
        return self.vec.reshape(self.vec.shape[:-1] + (d, d))


class _EnsembleBase:
    def __init__(self, model, dt):
        self.model = model
        self.dt = float(dt)
        d = model.dim
        self._trace = np.eye(d).ravel()

    def initial(self, rho0, n_trials):
        rho0 = np.asarray(rho0, dtype=complex)
        v = (rho0 / np.trace(rho0).real).ravel()
        return EnsembleState(np.tile(v, (n_trials, 1)), np.zeros(n_trials))

    def _normalize(self, f):
        tr = (f @ self._trace).real
        if not np.all(tr > 0):
            raise StepSizeError(f"non-positive trace {tr.min():.3e} in ensemble step; reduce dt")
        return f * (1.0 / tr)[:, None], tr


class EnsembleGaussianFilter(_EnsembleBase):
    """One hypothesis' Gaussian filter stepped for many records at once.

    ``scheme="euler"`` accumulates the Itô log-trace increment; with
    ``scheme="product"`` the log-trace is the running log of the raw discrete
    Kraus-step traces (the exact finite-``dt`` product, kept in factored form).
    """

    def __init__(self, model, dt, scheme="euler"):
        if model.kind != "gaussian":
            raise ValueError("EnsembleGaussianFilter needs a gaussian model")
        super().__init__(model, dt)
        self.scheme = scheme
        A, B = gaussian_superoperators(model, dt, scheme)
        self._ABt = np.hstack([A.T, B.T])
        self._n = A.shape[0]
        c = model.c
        self._obs = ((c + c.conj().T) / 2).T.ravel()

    def estimate(self, state):
        return (state.vec @ self._obs).real

    def step(self, state, dy):
        dy = np.asarray(dy, dtype=float)
        g = state.vec @ self._ABt
        f = g[:, : self._n] + dy[:, None] * g[:, self._n :]
        f, tr = self._normalize(f)
        if self.scheme == "product":
            return EnsembleState(f, state.log_trace + np.log(tr))
        mu = self.estimate(state)
        R = self.model.R
        return EnsembleState(f, state.log_trace + dy * mu / R - self.dt * mu * mu / (2 * R))


class EnsemblePoissonFilter(_EnsembleBase):
    """Counting filter for many records at once (first-order no-jump branch)."""

    def __init__(self, model, dt):
        if model.kind != "poisson":
            raise ValueError("EnsemblePoissonFilter needs a poisson model")
        super().__init__(model, dt)
        c = model.c
        d = model.dim
        n = c.conj().T @ c
        L = liouvillian(model.lindblad)
        no_jump = np.eye(d * d) + dt * (L + (1 - model.eta) * _sandwich(c) - 0.5 * _anticomm(n))
        self._N0t = no_jump.T.copy()
        self._J1t = _sandwich(c).T.copy()
        self._obs = (model.eta * n).T.ravel()

    def estimate(self, state):
        return (state.vec @ self._obs).real

    def step(self, state, dy):
        dy = np.asarray(dy) != 0
        mu = self.estimate(state)
        f = np.where(dy[:, None], state.vec @ self._J1t, state.vec @ self._N0t)
        impossible = dy & ~(mu > 0)
        f[impossible] = state.vec[impossible]
        f, _ = self._normalize(f)
        alpha = self.model.alpha
        with np.errstate(divide="ignore"):
            incr = np.where(dy, np.log(np.where(mu > 0, mu, 0.0) / alpha), 0.0) - self.dt * (mu - alpha)
        return EnsembleState(f, state.log_trace + incr)


# ---------------------------------------------------------------------------
# Classical grids


def cell_grid(half_width, n):
    """Cell-centred grid of ``n`` cells covering ``[-half_width, half_width]``."""
    h = 2.0 * half_width / n
    return -half_width + h * (np.arange(n) + 0.5)


def ou_generator(x, drift, diffusion):
    """Finite-volume generator of ``dg/dt = -d(drift x g)/dx + (diffusion/2) d2g/dx2``.

    Face fluxes average ``x g`` over the two adjacent cells and use a central
    difference for the gradient, with zero flux through the outer faces.
    This keeps mass, mean and second moment dynamics exact on the interior.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    G = np.zeros((n, n))
    if n == 1:
        return G
    h = x[1] - x[0]
    D = 0.5 * diffusion
    for i in range(n - 1):
        # flux through face i+1/2: drift/2 (x_i g_i + x_{i+1} g_{i+1}) - D/h (g_{i+1} - g_i)
        fi = 0.5 * drift * x[i] + D / h
        fj = 0.5 * drift * x[i + 1] - D / h
        G[i, i] -= fi / h
        G[i, i + 1] -= fj / h
        G[i + 1, i] += fi / h
        G[i + 1, i + 1] += fj / h
    return G


def peclet_number(x, drift, diffusion):
    if x.size < 2 or diffusion == 0:
        return math.inf if drift else 0.0
    h = x[1] - x[0]
    return abs(drift) * np.abs(x).max() * h / diffusion


class GridPropagator:
    """Step operator for an OU generator on a 1-D cell grid."""

    def __init__(self, x, drift, diffusion, dt, method="expm"):
        self.x = np.asarray(x, dtype=float)
        G = ou_generator(self.x, drift, diffusion)
        if method == "expm":
            self.P = scipy.linalg.expm(dt * G)
        elif method == "euler":
            self.P = np.eye(self.x.size) + dt * G
        else:
            raise ValueError(f"unknown grid propagation method {method!r}")
        if peclet_number(self.x, drift, diffusion) > 1:
            warnings.warn("grid cell Peclet number exceeds 1; positivity is not guaranteed", stacklevel=2)

    def apply(self, g, axis=0):
        return np.moveaxis(np.tensordot(self.P, g, axes=(1, axis)), 0, axis)


def gaussian_grid_density(x, mean, var):
    w = np.exp(-((x - mean) ** 2) / (2 * var))
    return w / w.sum()


@dataclass(frozen=True)
class ClassicalGridState:
    """Unnormalized classical density on a 2-D cell grid (``g`` sums to one)."""

    x1: np.ndarray
    x2: np.ndarray
    g: np.ndarray
    log_trace: float = 0.0
    clamps: int = 0

    @property
    def spacing(self):
        return (self.x1[1] - self.x1[0], self.x2[1] - self.x2[0])

    def mesh(self):
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def boundary_mass(self):
        g = self.g
        inner = g[1:-1, 1:-1].sum()
        return float((g.sum() - inner) / g.sum())


def classical_estimate(h_vals, gstate):
    """Grid quadrature of ``int h g / int g``."""
    g = gstate.g if isinstance(gstate, ClassicalGridState) else gstate
    mass = g.sum()
    if not mass > 0:
        raise ValueError("classical state has zero mass")
    return float((h_vals * g).sum() / mass)


def classical_dmz_step(h_vals, ou_params, gstate, dy, dt, R, propagators=None, boundary_ceiling=None):
    """One step of the classical DMZ filter for the two-quadrature OU model.

    ``ou_params = (gamma, nbar)``.  The observation update multiplies by
    ``exp(dy h/R - dt h^2/(2R))`` (positivity preserving), then the
    Kolmogorov part is propagated on the grid.
    """
    gamma, nbar = ou_params
    mu = classical_estimate(h_vals, gstate)
    g = gstate.g * np.exp(dy * h_vals / R - dt * h_vals * h_vals / (2 * R))
    if propagators is None:
        p1 = GridPropagator(gstate.x1, -gamma / 2, gamma * (nbar + 0.5), dt, "euler")
        p2 = GridPropagator(gstate.x2, -gamma / 2, gamma * (nbar + 0.5), dt, "euler")
    else:
        p1, p2 = propagators
    g = p2.apply(p1.apply(g, axis=0), axis=1)
    clamps = gstate.clamps
    gmin, gmax = g.min(), g.max()
    if gmin < 0:
        if gmin < -1e-10 * gmax:
            warnings.warn(f"clamping negative grid density {gmin:.3e}", RuntimeWarning, stacklevel=2)
        g = np.clip(g, 0.0, None)
        clamps += 1
    g = g / g.sum()
    new = ClassicalGridState(gstate.x1, gstate.x2, g, gstate.log_trace + dy * mu / R - dt * mu * mu / (2 * R), clamps)
    if boundary_ceiling is not None:
        bm = new.boundary_mass()
        if bm > boundary_ceiling:
            raise GridTooSmallError(f"boundary mass {bm:.2e} exceeds ceiling {boundary_ceiling:g}")
    return new


class ClassicalDMZFilter:
    """Classical OU model observed through ``h(x1, x2)`` with white noise ``R``."""

    def __init__(self, h_fn, gamma, nbar, R, x1, x2=None, dt=1e-3, method="expm", boundary_ceiling=None):
        self.gamma, self.nbar, self.R, self.dt = float(gamma), float(nbar), float(R), float(dt)
        self.x1 = np.asarray(x1, dtype=float)
        self.x2 = self.x1 if x2 is None else np.asarray(x2, dtype=float)
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        self.h = np.asarray(h_fn(X1, X2), dtype=float)
        diff = gamma * (nbar + 0.5)
        self.propagators = (
            GridPropagator(self.x1, -gamma / 2, diff, dt, method),
            GridPropagator(self.x2, -gamma / 2, diff, dt, method),
        )
        self.boundary_ceiling = boundary_ceiling

    def stationary(self):
        var = self.nbar + 0.5
        g = np.outer(gaussian_grid_density(self.x1, 0.0, var), gaussian_grid_density(self.x2, 0.0, var))
        return ClassicalGridState(self.x1, self.x2, g / g.sum())

    def initial(self, g0=None):
        if g0 is None:
            return self.stationary()
        g0 = np.asarray(g0, dtype=float)
        return ClassicalGridState(self.x1, self.x2, g0 / g0.sum())

    def estimate(self, state):
        return classical_estimate(self.h, state)

    def step(self, state, dy):
        return classical_dmz_step(
            self.h, (self.gamma, self.nbar), state, dy, self.dt, self.R, self.propagators, self.boundary_ceiling
        )


# ---------------------------------------------------------------------------
# Hybrid quantum-classical filter


@dataclass(frozen=True)
class HybridState:
    """Density matrices attached to classical grid points, in the measurement eigenbasis.

    ``rho[i]`` is the (sub-normalized) quantum state at ``x[i]``; the traces
    sum to one.  ``basis`` maps back to the Fock basis.
    """

    x: np.ndarray
    rho: np.ndarray
    basis: np.ndarray = None
    log_trace: float = 0.0

    @property
    def weights(self):
        return np.real(np.einsum("ikk->i", self.rho))

    def quantum_marginal(self):
        r = self.rho.sum(axis=0)
        return r if self.basis is None else self.basis @ r @ self.basis.conj().T

    def boundary_mass(self):
        w = self.weights
        if w.size < 3:
            return 0.0
        return float((w[0] + w[-1]) / w.sum())


def hybrid_gaussian_step(filt, state, dy):
    """Advance a :class:`HybridState` by one record increment (see :class:`HybridFilter`)."""
    return filt.step(state, dy)


class HybridFilter:
    """Hybrid filter for a quantum sensor coupled to a scalar classical OU signal.

    The sensor Hamiltonian at grid point ``x`` is ``H0 - x * coupling_op``
    (angular-frequency units).  Each step applies the exact Gaussian Kraus
    map, then a Strang split of the per-point unitary, the sensor jumps and
    the grid Kolmogorov propagator for ``dx = A x dt + dW``, ``dW^2 = B dt``.
    """

    def __init__(self, model, coupling_op, x, A, B, dt, leakage_ceiling=1e-6, boundary_ceiling=None):
        if model.kind != "gaussian":
            raise ValueError("hybrid filter needs a gaussian model")
        self.model = model
        self.dt = float(dt)
        self.x = np.asarray(x, dtype=float)
        self.R = model.R
        self.kraus = GaussianKraus(model.c, model.Q, model.R, dt)
        d = model.dim
        V = np.eye(d, dtype=complex) if self.kraus.V is None else self.kraus.V
        self.V = V
        Vd = V.conj().T
        H0 = model.lindblad.hamiltonian
        cop = np.asarray(coupling_op, dtype=complex)
        self.U = np.stack([Vd @ scipy.linalg.expm(-0.5j * dt * (H0 - xi * cop)) @ V for xi in self.x])
        self.Ud = dagger(self.U)
        self.jumps = None
        if model.lindblad.jumps:
            spec = LindbladSpec(np.zeros((d, d)), tuple((r, Vd @ op @ V) for r, op in model.lindblad.jumps))
            self.jumps = LindbladPropagator(spec, dt)
        self.grid = GridPropagator(self.x, A, B, dt, "expm") if self.x.size > 1 else None
        self.lam = self.kraus.lam
        self.leakage_ceiling = leakage_ceiling
        self.boundary_ceiling = boundary_ceiling

    def initial(self, rho0, px):
        rho0 = np.asarray(rho0, dtype=complex)
        rho0 = self.V.conj().T @ (rho0 / np.trace(rho0).real) @ self.V
        px = np.asarray(px, dtype=float)
        px = px / px.sum()
        return HybridState(self.x, px[:, None, None] * rho0[None], self.V, 0.0)

    def estimate(self, state):
        diag = np.real(np.einsum("ikk->k", state.rho))
        return float(diag @ self.lam / diag.sum())

    def x_mean(self, state):
        w = state.weights
        return float(w @ self.x / w.sum())

    def step(self, state, dy):
        mu = self.estimate(state)
        f = state.rho * self.kraus.factor(dy)[None]
        f = self.U @ f @ self.Ud
        if self.jumps is not None:
            f = self.jumps(f)
        if self.grid is not None:
            f = self.grid.apply(f, axis=0)
        f = self.U @ f @ self.Ud
        f = 0.5 * (f + dagger(f))
        tr = np.real(np.einsum("ikk->", f))
        if not tr > 0:
            raise StepSizeError("hybrid state lost its mass")
        f = f / tr
        new = HybridState(self.x, f, self.V, state.log_trace + dy * mu / self.R - self.dt * mu * mu / (2 * self.R))
        if self.boundary_ceiling is not None and new.boundary_mass() > self.boundary_ceiling:
            raise GridTooSmallError(f"boundary mass {new.boundary_mass():.2e} exceeds ceiling")
        if self.leakage_ceiling is not None:
            top = self.V[-1, :]
            marg = f.sum(axis=0)
            leak = float(np.real(top @ marg @ top.conj()))
            if leak > self.leakage_ceiling:
                raise TruncationError(f"top Fock population {leak:.2e} exceeds ceiling")
        return new
