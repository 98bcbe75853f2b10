"""Experiment runners: force detection, quadrature equivalence, energy quantization
and photon counting, plus the Monte Carlo harness and verification oracles.

Default parameters are engineering choices for desk-scale runs, not values
taken from any experiment.
"""

import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.linalg
from scipy.stats import binomtest

from . import operators as ops
from .filters import (
    ClassicalDMZFilter,
    EnsembleGaussianFilter,
    EnsemblePoissonFilter,
    GaussianFilter,
    HybridFilter,
    HypothesisModel,
    NumericalFault,
    cell_grid,
    gaussian_grid_density,
)
from .gaussian_models import (
    KalmanBucyFilter,
    build_force_models,
    chernoff_bounds,
    chernoff_curve,
    filter_time_constant,
    integrate_riccati,
)
from .likelihood import bayes_threshold, neyman_pearson_threshold
from .trajectories import make_rng

__all__ = [
    "SCENARIOS",
    "ScenarioConfig",
    "RunResult",
    "TrialOutcome",
    "wilson_interval",
    "monte_carlo",
    "run_force_detection",
    "run_quadrature_equivalence",
    "run_energy_quantization",
    "run_photon_counting",
    "quadrature_refinement",
    "force_models",
    "hybrid_kalman_comparison",
    "run_scenario",
    "chernoff_scan",
    "photon_models",
    "qubit_models",
    "product_refinement",
]

SCENARIOS = ("force-detect", "quadrature-equiv", "energy-quant", "photon-count")
WORKERS_ENV = "CQHT_WORKERS"


@dataclass(frozen=True)
class ScenarioConfig:
    """Flat parameter set shared by all scenarios; unused fields are ignored.

    ``threshold`` is a threshold on ``Lambda`` (decide H1 iff ``Lambda >= threshold``);
    the Chernoff bounds use its logarithm.  ``T_grid`` lists checkpoint times at
    which ``log Lambda`` is recorded (``T`` is always included).
    """

    scenario: str = "force-detect"
    # trials
    n_trials: int = 1000
    seed: int = 0
    truth: str = "H1"
    rule: str = "threshold"
    threshold: float = 1.0
    P1: float = 0.5
    cost_a: float = 1.0
    cost_b: float = 1.0
    np_size: float = 0.05
    workers: int = 1
    # numerics
    dt: float = None
    T: float = None
    T_grid: tuple = ()
    dim: int = 40
    grid_cells: int = 64
    grid_half_width: float = 6.0
    leakage_ceiling: float = 1e-6
    boundary_ceiling: float = 1e-6
    thin: int = 10
    keep_trajectory: bool = False
    # oscillator
    gamma: float = 1.0
    nbar: float = 0.5
    theta: object = "random"
    theta_choices: tuple = (0.0, math.pi / 4, math.pi / 2)
    Q: float = 1.0
    S: float = 0.0
    R: float = None
    # force detection
    m: float = 1.0
    omega: float = 1.0
    C: float = 2.0
    A: float = -0.5
    B: float = 1.0
    hbar: float = 1.0
    hybrid: bool = False
    hybrid_dim: int = 50
    hybrid_cells: int = 80
    hybrid_half_width: float = 6.0
    kalman_method: str = "euler"
    # photon counting
    kappa: float = 1.0
    eta: float = 0.8
    alpha: float = 1.0
    drive0: float = 1.0
    drive1: float = 2.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {', '.join(SCENARIOS)}; got {self.scenario!r}")
        defaults = _scenario_defaults(self)
        for k, v in defaults.items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        object.__setattr__(self, "T_grid", tuple(float(t) for t in self.T_grid))
        object.__setattr__(self, "theta_choices", tuple(float(t) for t in self.theta_choices))
        self.validate()

    def validate(self):
        def bound(name, ok, text):
            if not ok:
                raise ValueError(f"{name} {text}, got {getattr(self, name)!r}")

        bound("n_trials", int(self.n_trials) == self.n_trials and self.n_trials >= 1, "must be a positive integer")
        bound("truth", self.truth in ("H0", "H1"), "must be H0 or H1")
        bound("rule", self.rule in ("threshold", "bayes", "neyman-pearson"), "must be threshold, bayes or neyman-pearson")
        bound("threshold", self.threshold > 0, "must be positive")
        bound("P1", 0 < self.P1 < 1, "must lie in (0,1)")
        bound("cost_a", self.cost_a > 0, "must be positive")
        bound("cost_b", self.cost_b > 0, "must be positive")
        bound("np_size", 0 < self.np_size < 1, "must lie in (0,1)")
        bound("workers", int(self.workers) == self.workers and self.workers >= 1, "must be a positive integer")
        bound("dt", self.dt > 0, "must be positive")
        bound("T", self.T >= self.dt, "must be at least dt")
        bound("T_grid", all(self.dt <= t <= self.T for t in self.T_grid), "must lie in [dt, T]")
        bound("dim", int(self.dim) == self.dim and self.dim >= 2, "must be an integer >= 2")
        bound("grid_cells", int(self.grid_cells) == self.grid_cells and self.grid_cells >= 4, "must be an integer >= 4")
        bound("grid_half_width", self.grid_half_width > 0, "must be positive")
        bound("thin", int(self.thin) == self.thin and self.thin >= 1, "must be a positive integer")
        bound("gamma", self.gamma > 0, "must be positive")
        bound("nbar", self.nbar >= 0, "must be non-negative")
        bound("Q", self.Q > 0, "must be positive")
        bound("S", self.S >= 0, "must be non-negative")
        if not math.isclose(self.R, self.Q + self.S, rel_tol=1e-12):
            raise ValueError(f"R must equal Q+S (total noise = quantum-limited + excess), got R={self.R}, Q+S={self.Q + self.S}")
        bound("m", self.m > 0, "must be positive")
        bound("omega", self.omega > 0, "must be positive")
        bound("A", self.A < 0, "must be negative (stationary force)")
        bound("B", self.B >= 0, "must be non-negative")
        bound("hbar", self.hbar > 0, "must be positive")
        bound("hybrid_dim", int(self.hybrid_dim) == self.hybrid_dim and self.hybrid_dim >= 2, "must be an integer >= 2")
        bound("hybrid_cells", int(self.hybrid_cells) == self.hybrid_cells and self.hybrid_cells >= 1, "must be a positive integer")
        bound("kalman_method", self.kalman_method in ("euler", "split"), "must be euler or split")
        bound("kappa", self.kappa > 0, "must be positive")
        bound("eta", 0 < self.eta <= 1, "must lie in (0,1]")
        bound("alpha", self.alpha > 0, "must be positive")
        if self.theta != "random":
            try:
                float(self.theta)
            except (TypeError, ValueError):
                raise ValueError(f"theta must be a number or 'random', got {self.theta!r}") from None

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return ScenarioConfig(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def checkpoints(self):
        return tuple(sorted(set(self.T_grid) | {float(self.T)}))

    def decision_threshold(self, log_lambda_h0=None):
        """Threshold on ``Lambda`` for the configured rule."""
        if self.rule == "bayes":
            return bayes_threshold(self.cost_a, self.cost_b, 1 - self.P1, self.P1)
        if self.rule == "neyman-pearson":
            if log_lambda_h0 is None:
                raise ValueError("the Neyman-Pearson rule needs H0 log-likelihood ratios")
            return neyman_pearson_threshold(log_lambda_h0, self.np_size)
        return self.threshold


def _scenario_defaults(cfg):
    s = cfg.scenario
    R = cfg.Q + cfg.S if cfg.R is None else cfg.R
    if s == "force-detect":
        period = 2 * math.pi / cfg.omega
        return {"dt": 1e-3 * period, "T": 20.0, "R": R}
    if s == "photon-count":
        return {"dt": 1e-3 / cfg.kappa, "T": 20.0 / cfg.kappa, "R": R}
    return {"dt": 1e-2 / cfg.gamma, "T": 5.0 / cfg.gamma, "R": R}


def wilson_interval(k, n, confidence=0.95):
    if n == 0:
        return (0.0, 1.0)
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass
class TrialOutcome:
    log_lambda: np.ndarray
    clamps: int = 0
    leakage: float = 0.0
    trajectory: dict = None
    extra: dict = None


@dataclass
class RunResult:
    """Per-trial ``log Lambda`` at each checkpoint plus aggregate statistics."""

    scenario: str
    config: dict
    checkpoints: np.ndarray
    log_lambda_t: np.ndarray
    threshold: float
    decisions: np.ndarray
    failures: dict = field(default_factory=dict)
    chernoff: list = None
    trajectory: dict = None
    diagnostics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def log_lambda(self):
        return self.log_lambda_t[:, -1]

    @property
    def valid(self):
        return ~np.isnan(self.log_lambda)

    @property
    def truth(self):
        return self.config["truth"]

    def error_rates(self):
        """Empirical error rate at each checkpoint with Wilson 95% intervals.

        Under H0 truth this is ``P10`` (choosing H1), under H1 truth ``P01``.
        """
        rows = []
        ok = self.valid
        n = int(ok.sum())
        lg = math.log(self.threshold)
        for j, t in enumerate(self.checkpoints):
            ll = self.log_lambda_t[ok, j]
            wrong = int(np.sum(ll >= lg)) if self.truth == "H0" else int(np.sum(ll < lg))
            lo, hi = wilson_interval(wrong, n)
            rows.append({"T": float(t), "errors": wrong, "n": n, "rate": wrong / n if n else math.nan, "low": lo, "high": hi})
        return rows

    def lambda_moment(self, s=1.0, checkpoint=-1):
        """Mean of ``Lambda^s`` and its standard error (martingale diagnostic for s=1)."""
        ll = self.log_lambda_t[self.valid, checkpoint]
        v = np.exp(s * ll)
        n = v.size
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan

    def summary(self):
        mean_ll = self.log_lambda_t[self.valid].mean(axis=0)
        se_ll = self.log_lambda_t[self.valid].std(axis=0, ddof=1) / math.sqrt(max(int(self.valid.sum()), 1))
        out = {
            "scenario": self.scenario,
            "truth": self.truth,
            "n_trials": int(self.log_lambda_t.shape[0]),
            "n_valid": int(self.valid.sum()),
            "threshold": self.threshold,
            "checkpoints": [float(t) for t in self.checkpoints],
            "mean_log_lambda": [float(v) for v in mean_ll],
            "se_log_lambda": [float(v) for v in se_ll],
            "error_rates": self.error_rates(),
            "failures": {str(k): v for k, v in self.failures.items()},
            "diagnostics": self.diagnostics,
        }
        if self.valid.sum() > 1:
            m, se = self.lambda_moment(1.0)
            out["mean_lambda"] = m
            out["se_lambda"] = se
        if self.chernoff is not None:
            out["chernoff"] = self.chernoff
        if self.extra:
            out["extra"] = self.extra
        return out


def _decisions(log_lambda, threshold):
    return np.where(np.isnan(log_lambda), "--", np.where(log_lambda >= math.log(threshold), "H1", "H0"))


def _worker_count(cfg):
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be positive")
        return n
    return int(cfg.workers)


def _run_one(runner, cfg, i):
    try:
        return i, runner(cfg, i), None
    except (NumericalFault, FloatingPointError, np.linalg.LinAlgError) as exc:
        return i, None, f"{type(exc).__name__}: {exc}"


def monte_carlo(config, runner):
    """Run ``runner(config, trial)`` for every trial and aggregate.

    Trials use seeds ``(config.seed, trial)``; a numerical fault quarantines
    only the trial that raised it.  Aggregation is in trial order, so the
    result does not depend on the worker count or completion order.
    """
    n = int(config.n_trials)
    cps = config.checkpoints
    workers = _worker_count(config)
    outcomes = [None] * n
    failures = {}
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, out, err in pool.map(_run_one, [runner] * n, [config] * n, range(n)):
                outcomes[i] = out
                if err:
                    failures[i] = err
    else:
        for i in range(n):
            _, out, err = _run_one(runner, config, i)
            outcomes[i] = out
            if err:
                failures[i] = err
    ll = np.full((n, len(cps)), np.nan)
    clamps = 0
    leakage = 0.0
    traj = None
    extras = []
    for i, out in enumerate(outcomes):
        if out is None:
            continue
        ll[i] = out.log_lambda
        clamps += out.clamps
        leakage = max(leakage, out.leakage)
        if traj is None and out.trajectory is not None:
            traj = out.trajectory
        if out.extra:
            extras.append(out.extra)
    threshold = _threshold_for(config, ll[:, -1])
    res = RunResult(
        scenario=config.scenario,
        config=config.to_dict(),
        checkpoints=np.array(cps),
        log_lambda_t=ll,
        threshold=threshold,
        decisions=_decisions(ll[:, -1], threshold),
        failures=failures,
        trajectory=traj,
        diagnostics={"positivity_clamps": int(clamps), "max_leakage": float(leakage), "quarantined": len(failures)},
    )
    if extras:
        res.extra["per_trial"] = extras
    return res


def _threshold_for(cfg, log_lambda):
    if cfg.rule == "neyman-pearson":
        if cfg.truth != "H0":
            raise ValueError("the Neyman-Pearson threshold is calibrated on an H0-truth run")
        return cfg.decision_threshold(log_lambda[~np.isnan(log_lambda)])
    return cfg.decision_threshold()


def _checkpoint_steps(cfg):
    return [int(round(t / cfg.dt)) for t in cfg.checkpoints]


def _thin_trajectory(cfg, t, dy, mu1, mu0, ll):
    k = int(cfg.thin)
    return {"t": t[::k], "dy": dy[::k], "mu1": mu1[::k], "mu0": mu0[::k], "log_lambda": ll[::k]}


# ---------------------------------------------------------------------------
# force detection


def _stationary_signal_cov(A, B):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    return scipy.linalg.solve_continuous_lyapunov(A, -B)


def force_models(cfg):
    """``(model0, model1, Sigma0_0, Sigma0_1)`` for the force scenario.

    The mirror starts in its ground state and the force in its stationary law.
    """
    m0, m1 = build_force_models(cfg.m, cfg.omega, cfg.C, cfg.A, cfg.B, cfg.R, cfg.hbar)
    ground = np.diag([cfg.hbar / (2 * cfg.m * cfg.omega), cfg.hbar * cfg.m * cfg.omega / 2])
    sig1 = scipy.linalg.block_diag(ground, _stationary_signal_cov(cfg.A, cfg.B))
    return m0, m1, ground, sig1


def _noise_blocks(cfg, n_steps, block=2048):
    """Standard normals for every trial, drawn block-wise from per-trial streams."""
    rngs = [make_rng(cfg.seed, i) for i in range(int(cfg.n_trials))]
    done = 0
    while done < n_steps:
        b = min(block, n_steps - done)
        yield np.stack([r.standard_normal(b) for r in rngs], axis=1)
        done += b


def run_force_detection(cfg, chernoff=True):
    """Kalman-Bucy estimator-correlator for the stochastic-force test.

    All trials are stepped together; the record of trial ``i`` comes from
    the innovations of the true model's filter with stream ``(seed, i)``.
    """
    if cfg.scenario != "force-detect":
        cfg = cfg.replace(scenario="force-detect")
    m0, m1, s0, s1 = force_models(cfg)
    n_steps = int(round(cfg.T / cfg.dt))
    n = int(cfg.n_trials)
    f0 = KalmanBucyFilter(m0, cfg.dt, s0, n_steps, cfg.kalman_method)
    f1 = KalmanBucyFilter(m1, cfg.dt, s1, n_steps, cfg.kalman_method)
    z0 = f0.initial(np.zeros(2), n)
    z1 = f1.initial(np.zeros(m1.n), n)
    R = float(m0.R[0, 0])
    sd = math.sqrt(R * cfg.dt)
    cps = _checkpoint_steps(cfg)
    ll = np.zeros(n)
    ll_t = np.empty((n, len(cps)))
    want_traj = cfg.keep_trajectory
    traj = {k: [] for k in ("t", "dy", "mu1", "mu0", "log_lambda")} if want_traj else None
    k = 0
    ci = 0
    for noise in _noise_blocks(cfg, n_steps):
        for row in noise:
            mu0 = f0.estimate(z0)
            mu1 = f1.estimate(z1)
            mu_true = mu1 if cfg.truth == "H1" else mu0
            dy = mu_true * cfg.dt + sd * row
            ll += (dy * (mu1 - mu0) - 0.5 * cfg.dt * (mu1 * mu1 - mu0 * mu0)) / R
            z0 = f0.step(z0, dy)
            z1 = f1.step(z1, dy)
            k += 1
            if want_traj:
                for key, v in zip(traj, ((k * cfg.dt), dy[0], mu1[0], mu0[0], ll[0])):
                    traj[key].append(v)
            while ci < len(cps) and cps[ci] == k:
                ll_t[:, ci] = ll
                ci += 1
    threshold = _threshold_for(cfg, ll)
    res = RunResult(
        scenario="force-detect",
        config=cfg.to_dict(),
        checkpoints=np.array(cfg.checkpoints),
        log_lambda_t=ll_t,
        threshold=threshold,
        decisions=_decisions(ll, threshold),
        diagnostics={"filter_time_constant": filter_time_constant(m1, f1.covs[-1]), "quarantined": 0},
    )
    if want_traj:
        t = np.array(traj["t"])
        res.trajectory = _thin_trajectory(cfg, t, *(np.array(traj[k]) for k in ("dy", "mu1", "mu0", "log_lambda")))
    if chernoff:
        res.chernoff = []
        lg = math.log(threshold)
        for t in cfg.checkpoints:
            cb = chernoff_bounds(lg, m0, m1, t, cfg.dt, s0, s1)
            res.chernoff.append(
                {"T": t, "gamma": lg, "s_P10": cb.s_P10, "bound_P10": cb.bound_P10, "s_P01": cb.s_P01, "bound_P01": cb.bound_P01, "mu_min": cb.mu_s}
            )
    if cfg.hybrid:
        res.extra["hybrid"] = hybrid_kalman_comparison(cfg)
    return res


def hybrid_kalman_comparison(cfg, trial=0, n_tau=3.0):
    """Compare the hybrid density-matrix estimate with the Kalman-Bucy estimate.

    Both filters read the same H1 record (generated by the Kalman filter's
    innovations).  The Kalman filter uses the split discretization that
    mirrors the hybrid step.  The relative error is the largest absolute
    difference after ``n_tau`` filter time constants divided by the largest
    absolute Kalman estimate over the same window.
    """
    m0, m1, s0, s1 = force_models(cfg)
    n_steps = int(round(cfg.T / cfg.dt))
    kf = KalmanBucyFilter(m1, cfg.dt, s1, n_steps, "split")
    tau = filter_time_constant(m1, integrate_riccati(m1, s1, cfg.T, cfg.dt)[-1])
    A = float(np.atleast_2d(cfg.A)[0, 0])
    B = float(np.atleast_2d(cfg.B)[0, 0])
    sx = math.sqrt(B / (-2 * A))
    x = cell_grid(cfg.hybrid_half_width * sx, int(cfg.hybrid_cells))
    d = int(cfg.hybrid_dim)
    scale_q = math.sqrt(cfg.hbar / (cfg.m * cfg.omega))
    q = ops.position_op(d, scale_q)
    p = ops.momentum_op(d, math.sqrt(cfg.hbar * cfg.m * cfg.omega))
    H0 = (p @ p / (2 * cfg.m) + cfg.m * cfg.omega**2 * q @ q / 2) / cfg.hbar
    model = HypothesisModel(ops.LindbladSpec(H0), q, Q=cfg.R, S=0.0, label="H1")
    hf = HybridFilter(model, cfg.C * q / cfg.hbar, x, A, B, cfg.dt, cfg.leakage_ceiling)
    hs = hf.initial(ops.fock_state(0, d), gaussian_grid_density(x, 0.0, sx * sx))
    ks = kf.initial(np.zeros(m1.n))
    rng = make_rng(cfg.seed, trial)
    R = cfg.R
    mu_k = np.empty(n_steps)
    mu_h = np.empty(n_steps)
    x_k = np.empty(n_steps)
    x_h = np.empty(n_steps)
    noise = rng.standard_normal(n_steps) * math.sqrt(R * cfg.dt)
    for k in range(n_steps):
        mu_k[k] = float(kf.estimate(ks))
        mu_h[k] = hf.estimate(hs)
        x_k[k] = float(ks.mean[2])
        x_h[k] = hf.x_mean(hs)
        dy = mu_k[k] * cfg.dt + noise[k]
        ks = kf.step(ks, dy)
        hs = hf.step(hs, dy)
    t = cfg.dt * np.arange(n_steps)
    win = t >= n_tau * tau
    if not win.any():
        raise ValueError(f"T={cfg.T} is shorter than {n_tau} filter time constants ({n_tau * tau:.3g})")
    rel = float(np.abs(mu_h[win] - mu_k[win]).max() / np.abs(mu_k[win]).max())
    rel_x = float(np.abs(x_h[win] - x_k[win]).max() / np.abs(x_k[win]).max())
    return {"tau": tau, "rel_error_mu": rel, "rel_error_x": rel_x, "t": t, "mu_kalman": mu_k, "mu_hybrid": mu_h}


# ---------------------------------------------------------------------------
# oscillator scenarios (quadrature equivalence, energy quantization)


def _theta_for(cfg, trial):
    if cfg.theta != "random":
        return float(cfg.theta)
    # separate stream so the choice never shifts the measurement noise
    rng = make_rng(cfg.seed, trial, stream=1)
    return float(cfg.theta_choices[int(rng.integers(len(cfg.theta_choices)))])


def _oscillator_filters(cfg, kind, theta, dt, cells):
    d = int(cfg.dim)
    spec = ops.thermal_lindblad(cfg.gamma, cfg.nbar, d)
    R, Q = cfg.R, cfg.Q
    if kind == "quadrature":
        c = ops.quadrature(theta, d)
        def h_fn(x1, x2):
            return x1 * math.cos(theta) + x2 * math.sin(theta)

    else:
        c = ops.energy_op(d)

        def h_fn(x1, x2):
            return 0.5 * (x1 * x1 + x2 * x2)

    model = HypothesisModel(spec, c, Q=Q, S=R - Q, R=R, label="quantum")
    qf = GaussianFilter(model, dt, scheme="kraus", leakage_ceiling=cfg.leakage_ceiling)
    sigma = math.sqrt(cfg.nbar + 0.5)
    x = cell_grid(cfg.grid_half_width * sigma, int(cells))
    cf = ClassicalDMZFilter(h_fn, cfg.gamma, cfg.nbar, R, x, dt=dt, method="expm", boundary_ceiling=cfg.boundary_ceiling)
    rho0 = ops.thermal_state(cfg.nbar, d)
    return qf, cf, rho0


def _oscillator_trial(cfg, trial, kind, dt=None, cells=None, dW=None):
    dt = cfg.dt if dt is None else dt
    cells = cfg.grid_cells if cells is None else cells
    theta = _theta_for(cfg, trial)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        qf, cf, rho0 = _oscillator_filters(cfg, kind, theta, dt, cells)
    qs = qf.initial(rho0)
    cs = cf.initial()
    n_steps = int(round(cfg.T / dt))
    if dW is None:
        dW = make_rng(cfg.seed, trial).standard_normal(n_steps) * math.sqrt(cfg.R * dt)
    cps = [int(round(t / dt)) for t in cfg.checkpoints]
    out = np.empty(len(cps))
    ci = 0
    keep = cfg.keep_trajectory and trial == 0
    rows = [] if keep else None
    max_diff = 0.0
    leak = 0.0
    for k in range(n_steps):
        mu1 = qf.estimate(qs)
        mu0 = cf.estimate(cs)
        max_diff = max(max_diff, abs(mu1 - mu0))
        mu_true = mu1 if cfg.truth == "H1" else mu0
        dy = mu_true * dt + dW[k]
        qs = qf.step(qs, dy)
        cs = cf.step(cs, dy)
        leak = max(leak, float(qs.rho[-1, -1].real))
        if keep:
            rows.append(((k + 1) * dt, dy, mu1, mu0, qs.log_trace - cs.log_trace))
        while ci < len(cps) and cps[ci] == k + 1:
            out[ci] = qs.log_trace - cs.log_trace
            ci += 1
    traj = None
    if keep:
        arr = np.array(rows)
        traj = _thin_trajectory(cfg, *arr.T)
    return TrialOutcome(out, qs.clamps + cs.clamps, leak, traj, {"trial": trial, "theta": theta, "max_mu_diff": max_diff})


def _quadrature_trial(cfg, trial):
    return _oscillator_trial(cfg, trial, "quadrature")


def _energy_trial(cfg, trial):
    return _oscillator_trial(cfg, trial, "energy")


def run_quadrature_equivalence(cfg):
    """Quantum quadrature filter against the classical two-mode OU model."""
    if cfg.scenario != "quadrature-equiv":
        cfg = cfg.replace(scenario="quadrature-equiv")
    return monte_carlo(cfg, _quadrature_trial)


def run_energy_quantization(cfg):
    """Quantum energy filter against the continuous-energy classical model."""
    if cfg.scenario != "energy-quant":
        cfg = cfg.replace(scenario="energy-quant")
    return monte_carlo(cfg, _energy_trial)


def quadrature_refinement(cfg, levels=3, trials=None):
    """Per-trial ``|log Lambda(T)|`` under joint halving of ``dt`` and grid spacing.

    Level ``l`` uses ``dt / 2^l`` and ``grid_cells * 2^l``.  All levels of a
    trial see the same Brownian path: the finest increments are drawn once and
    summed for coarser steps.
    """
    trials = range(int(cfg.n_trials)) if trials is None else trials
    fine = 2 ** (levels - 1)
    dt_f = cfg.dt / fine
    n_f = int(round(cfg.T / dt_f))
    table = np.empty((len(trials), levels))
    thetas = []
    for r, i in enumerate(trials):
        dW = make_rng(cfg.seed, i).standard_normal(n_f) * math.sqrt(cfg.R * dt_f)
        thetas.append(_theta_for(cfg, i))
        for lev in range(levels):
            agg = 2 ** (levels - 1 - lev)
            dWl = dW.reshape(-1, agg).sum(axis=1)
            out = _oscillator_trial(cfg, i, "quadrature", cfg.dt / 2**lev, cfg.grid_cells * 2**lev, dWl)
            table[r, lev] = out.log_lambda[-1]
    return {"abs_log_lambda": np.abs(table), "log_lambda": table, "theta": thetas,
            "dt": [cfg.dt / 2**lev for lev in range(levels)], "cells": [cfg.grid_cells * 2**lev for lev in range(levels)]}


# ---------------------------------------------------------------------------
# photon counting


def photon_models(cfg, alpha=None):
    """Driven two-level emitter with fluorescence counting; the hypotheses differ in drive."""
    alpha = cfg.alpha if alpha is None else alpha
    sm = ops.build_annihilation(2)
    sx = sm + sm.conj().T
    sz = np.diag([-1.0, 1.0]).astype(complex)
    c = math.sqrt(cfg.kappa) * sm
    out = []
    for j, drive in enumerate((cfg.drive0, cfg.drive1)):
        H = 0.5 * drive * sx + 0.5 * cfg.detuning * sz
        out.append(HypothesisModel(ops.LindbladSpec(H), c, kind="poisson", eta=cfg.eta, alpha=alpha, label=f"H{j}"))
    return tuple(out)


def run_photon_counting(cfg, alpha=None):
    """Counting-record test between two drive strengths; all trials stepped together."""
    if cfg.scenario != "photon-count":
        cfg = cfg.replace(scenario="photon-count")
    m0, m1 = photon_models(cfg, alpha)
    n = int(cfg.n_trials)
    f0 = EnsemblePoissonFilter(m0, cfg.dt)
    f1 = EnsemblePoissonFilter(m1, cfg.dt)
    g = ops.fock_state(0, 2)
    s0 = f0.initial(g, n)
    s1 = f1.initial(g, n)
    n_steps = int(round(cfg.T / cfg.dt))
    cps = _checkpoint_steps(cfg)
    ll_t = np.empty((n, len(cps)))
    rngs = [make_rng(cfg.seed, i) for i in range(n)]
    block = 2048
    k = 0
    ci = 0
    counts = np.zeros(n)
    while k < n_steps:
        b = min(block, n_steps - k)
        u = np.stack([r.random(b) for r in rngs], axis=1)
        for row in u:
            mu_true = (f1 if cfg.truth == "H1" else f0).estimate(s1 if cfg.truth == "H1" else s0)
            p = mu_true * cfg.dt
            if np.any(p >= 1):
                raise NumericalFault("click probability reached 1; reduce dt")
            dy = (row < p).astype(float)
            counts += dy
            s0 = f0.step(s0, dy)
            s1 = f1.step(s1, dy)
            k += 1
            while ci < len(cps) and cps[ci] == k:
                ll_t[:, ci] = s1.log_trace - s0.log_trace
                ci += 1
    threshold = _threshold_for(cfg, ll_t[:, -1])
    return RunResult(
        scenario="photon-count",
        config=cfg.to_dict(),
        checkpoints=np.array(cfg.checkpoints),
        log_lambda_t=ll_t,
        threshold=threshold,
        decisions=_decisions(ll_t[:, -1], threshold),
        diagnostics={"mean_counts": float(counts.mean()), "quarantined": 0},
    )


# ---------------------------------------------------------------------------
# continuous-time vs discrete-product likelihood


def qubit_models(omega0=2.0, omega1=1.0, k=1.5, dephasing=1.0):
    """Driven, dephased qubits monitored through ``k sigma_z``; the hypotheses differ in drive."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sz = np.diag([1.0, -1.0]).astype(complex)
    return tuple(
        HypothesisModel(ops.LindbladSpec(0.5 * om * sx, ((dephasing, sz),)), k * sz, label=f"H{j}")
        for j, om in enumerate((omega0, omega1))
    )


def product_refinement(models=None, dts=(1e-2, 5e-3, 2.5e-3), T=5.0, n_trials=3000, seed=0):
    """Mean gap between the Itô estimator-correlator and the discrete Kraus-product log-LR.

    Every level sees the same Wiener paths (finest increments summed), drawn
    under the reference measure.  Pathwise the gap carries a zero-mean term
    ``sum (mu1^2 - mu0^2)(dy^2 - R dt) / (2 R^2)`` of order ``sqrt(dt)``; it is
    used as a control variate, which leaves the mean unchanged but shrinks its
    standard error.  Returns per-level ``mean``, ``se`` and the raw ``se``.
    """
    models = qubit_models() if models is None else models
    m0, m1 = models
    R = m0.R
    dts = sorted(dts, reverse=True)
    fine = dts[-1]
    n_f = int(round(T / fine))
    rng = make_rng(seed)
    dW = rng.standard_normal((n_trials, n_f)) * math.sqrt(R * fine)
    mean, se, se_raw = [], [], []
    for dt in dts:
        agg = int(round(dt / fine))
        w = dW.reshape(n_trials, -1, agg).sum(axis=2)
        filters = [EnsembleGaussianFilter(m, dt, s) for m in (m0, m1) for s in ("euler", "product")]
        states = [f.initial(np.eye(m0.dim) / m0.dim, n_trials) for f in filters]
        cv = np.zeros(n_trials)
        for k in range(w.shape[1]):
            mu0 = filters[0].estimate(states[0])
            mu1 = filters[2].estimate(states[2])
            cv += (mu1 * mu1 - mu0 * mu0) * (w[:, k] ** 2 - R * dt) / (2 * R * R)
            states = [f.step(s, w[:, k]) for f, s in zip(filters, states)]
        gap = (states[2].log_trace - states[0].log_trace) - (states[3].log_trace - states[1].log_trace)
        adj = gap - cv
        mean.append(float(adj.mean()))
        se.append(float(adj.std(ddof=1) / math.sqrt(n_trials)))
        se_raw.append(float(gap.std(ddof=1) / math.sqrt(n_trials)))
    return {"dt": dts, "mean": np.array(mean), "se": np.array(se), "se_raw": np.array(se_raw)}


RUNNERS = {
    "force-detect": run_force_detection,
    "quadrature-equiv": run_quadrature_equivalence,
    "energy-quant": run_energy_quantization,
    "photon-count": run_photon_counting,
}


def run_scenario(cfg):
    t0 = time.perf_counter()
    res = RUNNERS[cfg.scenario](cfg)
    res.diagnostics["wall_seconds"] = time.perf_counter() - t0
    return res


def chernoff_scan(cfg, n_s=21):
    """``(s, mu(s), P10 bound, P01 bound)`` rows for the force scenario at time ``T``."""
    m0, m1, s0, s1 = force_models(cfg)
    s = np.linspace(0.0, 1.0, int(n_s))
    mu = chernoff_curve(s, m0, m1, cfg.T, cfg.dt, s0, s1)
    lg = math.log(cfg.decision_threshold())
    return s, mu, np.minimum(1.0, np.exp(mu - s * lg)), np.minimum(1.0, np.exp(mu + (1 - s) * lg))


def config_fields():
    return [f.name for f in fields(ScenarioConfig)]
