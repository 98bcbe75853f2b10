"""Batch front-end: ``cqht <subcommand> [config.toml] [options]``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical fault (or a
failed oracle in ``verify``).
"""

import argparse
import csv
import hashlib
import json
import math
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import operators as ops
from .filters import (
    ClassicalDMZFilter,
    EnsembleGaussianFilter,
    GaussianFilter,
    HypothesisModel,
    NumericalFault,
    gaussian_filter_step,
)
from .gaussian_models import KalmanBucyFilter, chernoff_curve, integrate_riccati, scalar_steady_state
from .likelihood import gaussian_llr_increment
from .scenarios import (
    SCENARIOS,
    ScenarioConfig,
    _oscillator_filters,
    _theta_for,
    chernoff_scan,
    force_models,
    photon_models,
    run_photon_counting,
    run_scenario,
    wilson_interval,
)
from .trajectories import MeasurementRecord, TruthSpec, make_rng, simulate_innovations, simulate_poisson_record

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FORMAT_VERSION = "1"
EXIT_OK, EXIT_INVALID, EXIT_FAULT = 0, 2, 3

SECTIONS = {
    "trials": ("n_trials", "seed", "truth", "rule", "threshold", "P1", "cost_a", "cost_b", "np_size", "workers"),
    "numerics": (
        "dt", "T", "T_grid", "dim", "grid_cells", "grid_half_width", "leakage_ceiling", "boundary_ceiling",
        "hybrid", "hybrid_dim", "hybrid_cells", "hybrid_half_width", "kalman_method",
    ),
    "physics": (
        "gamma", "nbar", "theta", "theta_choices", "Q", "S", "R", "m", "omega", "C", "A", "B", "hbar",
        "kappa", "eta", "alpha", "drive0", "drive1", "detuning",
    ),
    "output": ("dir", "thin", "keep_trajectory"),
}
OUTPUT_ONLY = ("dir",)


class ConfigError(ValueError):
    """Invalid or malformed configuration (exit status 2)."""


def _key_line(text, section, key):
    """Line number of ``key`` inside ``[section]`` (best effort, for messages)."""
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return n
    return None


def read_config(text, source="<config>"):
    """Parse TOML text into ``(ScenarioConfig kwargs, output options)``."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None
    kw, out = {}, {}
    for key, value in data.items():
        if key == "scenario":
            kw["scenario"] = value
            continue
        if key not in SECTIONS:
            where = _key_line(text, None, key)
            loc = f" (line {where})" if where else ""
            raise ConfigError(f"{source}: unknown section or key {key!r}{loc}; sections are {', '.join(SECTIONS)}")
        if not isinstance(value, dict):
            raise ConfigError(f"{source}: {key!r} must be a table")
        for k, v in value.items():
            if k not in SECTIONS[key]:
                where = _key_line(text, key, k)
                loc = f" (line {where})" if where else ""
                raise ConfigError(f"{source}: unknown key {k!r} in [{key}]{loc}")
            if key == "output":
                out[k] = v
                if k not in OUTPUT_ONLY:
                    kw[k] = v
            else:
                kw[k] = v
    return kw, out


def parse_config(path, scenario=None, overrides=None):
    """Read and validate a config file; returns ``(ScenarioConfig, output options)``.

    ``scenario`` (from the subcommand) fills in a missing ``scenario`` key and
    must agree with it otherwise.
    """
    if path is None:
        kw, out = {}, {}
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        kw, out = read_config(p.read_text(), str(p))
    if scenario is not None:
        if kw.get("scenario", scenario) != scenario:
            raise ConfigError(f"config scenario {kw['scenario']!r} does not match subcommand {scenario!r}")
        kw["scenario"] = scenario
    kw.update(overrides or {})
    for k in ("T_grid", "theta_choices"):
        if k in kw:
            kw[k] = tuple(kw[k])
    try:
        cfg = ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, out


# ---------------------------------------------------------------------------
# output


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RunManifest:
    config: dict
    version: str
    seed: int
    started: str
    finished: str
    files: list = field(default_factory=list)
    omitted: list = field(default_factory=list)
    format_version: str = FORMAT_VERSION

    @property
    def digest(self):
        """Digest over the inventory of emitted files."""
        h = hashlib.sha256()
        for f in sorted(self.files, key=lambda f: f["name"]):
            h.update(f"{f['name']}:{f['sha256']}\n".encode())
        return h.hexdigest()

    def to_dict(self):
        d = asdict(self)
        d["inventory_digest"] = self.digest
        return d


def _aggregate(result):
    """Aggregate statistics without wall-clock quantities, so re-runs are byte-identical."""
    s = result.summary()
    s["diagnostics"] = {k: v for k, v in s["diagnostics"].items() if k != "wall_seconds"}
    extra = s.get("extra")
    if extra and "hybrid" in extra:
        # keep the scalar comparison figures, not the full time series
        s["extra"] = dict(extra, hybrid={k: v for k, v in extra["hybrid"].items() if np.ndim(v) == 0})
    s["config"] = result.config
    return s


def emit_results(result, out_dir, started=None, finished=None):
    """Write ``trials.csv``, ``aggregate.json``, optional ``trajectory.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    def record(name):
        files.append({"name": name, "sha256": _sha256(out / name), "bytes": (out / name).stat().st_size})

    with open(out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "final_log_lambda", "decision"])
        for i, (ll, d) in enumerate(zip(result.log_lambda, result.decisions)):
            w.writerow([i, repr(float(ll)), d])
    record("trials.csv")
    _dump_json(_aggregate(result), out / "aggregate.json")
    record("aggregate.json")
    omitted = []
    traj = result.trajectory
    if traj:
        cols = ("t", "dy", "mu1", "mu0", "log_lambda")
        with open(out / "trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(traj[c] for c in cols)):
                w.writerow([repr(float(v)) for v in row])
        record("trajectory.csv")
    else:
        omitted.append({"name": "trajectory.csv", "reason": "no trajectory requested"})
    now = time.strftime("%Y-%m-%dT%H:%M:%S")
    manifest = RunManifest(
        config=result.config,
        version=__version__,
        seed=int(result.config["seed"]),
        started=started or now,
        finished=finished or now,
        files=files,
        omitted=omitted,
    )
    _dump_json(manifest.to_dict(), out / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# simulate-record


def simulate_record(cfg):
    """One measurement record of trial 0 under the configured true hypothesis."""
    n = int(round(cfg.T / cfg.dt))
    rng = make_rng(cfg.seed, 0)
    if cfg.scenario == "force-detect":
        m0, m1, s0, s1 = force_models(cfg)
        model, sig = (m1, s1) if cfg.truth == "H1" else (m0, s0)
        kf = KalmanBucyFilter(model, cfg.dt, sig, n, cfg.kalman_method)
        state = kf.initial(np.zeros(model.n))

        class _Scalar:
            def estimate(self, z):
                return float(kf.estimate(z))

            def step(self, z, dy):
                return kf.step(z, dy)

        dys, mus, _ = simulate_innovations(_Scalar(), state, n, cfg.dt, cfg.R, rng)
        return MeasurementRecord(0.0, cfg.dt, "gaussian", dys, truth_estimates=mus)
    if cfg.scenario == "photon-count":
        m0, m1 = photon_models(cfg)
        truth = TruthSpec(m1 if cfg.truth == "H1" else m0, ops.fock_state(0, 2), cfg.seed, 0)
        return simulate_poisson_record(truth, cfg.T, cfg.dt, leakage_ceiling=None)
    kind = "quadrature" if cfg.scenario == "quadrature-equiv" else "energy"
    qf, cf, rho0 = _oscillator_filters(cfg, kind, _theta_for(cfg, 0), cfg.dt, cfg.grid_cells)
    filt, state = (qf, qf.initial(rho0)) if cfg.truth == "H1" else (cf, cf.initial())
    dys, mus, _ = simulate_innovations(filt, state, n, cfg.dt, cfg.R, rng)
    return MeasurementRecord(0.0, cfg.dt, "gaussian", dys, truth_estimates=mus)


# ---------------------------------------------------------------------------
# verify: quick oracle suite


def _two_level(k=1.0, omega=1.0, gamma=0.5):
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sz = np.diag([1.0, -1.0]).astype(complex)
    spec = ops.LindbladSpec(0.5 * omega * sx, ((gamma, sz),))
    return HypothesisModel(spec, k * sz)


def _check_superoperator():
    model = _two_level()
    ens = EnsembleGaussianFilter(model, 1e-2)
    rho0 = np.eye(2) / 2
    s = ens.initial(rho0, 1)
    a = GaussianFilter(model, 1e-2, check_positivity=False).initial(rho0)
    rng = make_rng(1)
    err = 0.0
    for dy in rng.normal(0, 0.1, 200):
        s = ens.step(s, np.array([dy]))
        a = gaussian_filter_step(model, a, dy, 1e-2, check_positivity=False)
        err = max(err, abs(s.log_trace[0] - a.log_trace), np.abs(s.rho()[0] - a.rho).max())
    return err < 1e-12, f"max diff {err:.1e}"


def _check_lindblad_trace():
    spec = ops.thermal_lindblad(1.0, 0.5, 12)
    prop = ops.LindbladPropagator(spec, 0.1)
    rho = ops.fock_state(3, 12)
    out = prop(rho)
    err = abs(np.trace(out).real - 1)
    return err < 1e-12, f"trace error {err:.1e}"


def _check_alpha():
    cfg = ScenarioConfig("photon-count", n_trials=20, T=2.0)
    a = run_photon_counting(cfg, alpha=0.5).log_lambda
    b = run_photon_counting(cfg, alpha=2.0).log_lambda
    err = float(np.abs(a - b).max())
    return err < 1e-10, f"max diff {err:.1e}"


def _check_chernoff_endpoints():
    cfg = ScenarioConfig("force-detect", T=2.0)
    m0, m1, s0, s1 = force_models(cfg)
    mu = chernoff_curve([0.0, 1.0], m0, m1, cfg.T, cfg.dt, s0, s1)
    err = float(np.abs(mu).max())
    return err < 1e-8, f"|mu| {err:.1e}"


def _check_riccati():
    from .gaussian_models import LinearGaussianModel

    J, S, R = -0.7, 2.0, 0.5
    model = LinearGaussianModel(J=[[J]], S=[[S]], K=[[1.0]], R=[[R]])
    sig = integrate_riccati(model, np.zeros((1, 1)), 40.0, 1e-3)[-1][0, 0]
    root = max(np.roots([-1 / R, 2 * J, S]).real)
    err = max(abs(sig - root), abs(scalar_steady_state(J, S, R) - root))
    return err < 1e-8, f"diff {err:.1e}"


def _check_llr_density():
    # log ratio of two Gaussian densities for dy equals the increment formula
    mu1, mu0, dt, R, dy = 0.7, -0.2, 1e-2, 2.0, 0.013
    direct = (-(dy - mu1 * dt) ** 2 + (dy - mu0 * dt) ** 2) / (2 * R * dt)
    err = abs(direct - gaussian_llr_increment(mu1, mu0, dy, dt, R))
    return err < 1e-14, f"diff {err:.1e}"


def _check_wilson():
    k, n, z = 3, 50, 1.959963984540054
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    lo, hi = wilson_interval(k, n)
    err = max(abs(lo - (centre - half)), abs(hi - (centre + half)))
    return err < 1e-9, f"diff {err:.1e}"


def _check_classical_grid():
    # the grid filter's stationary mean of h = x1 is zero and its variance matches nbar + 1/2
    cf = ClassicalDMZFilter(lambda a, b: a, 1.0, 0.5, 1.0, np.linspace(-6, 6, 121), dt=0.01)
    g = cf.stationary()
    var = float(np.sum(g.g * cf.h**2))
    return abs(var - 1.0) < 1e-6, f"variance {var:.8f}"


ORACLES = (
    ("superoperator ensemble matches scalar filter", _check_superoperator),
    ("exact Lindblad propagator preserves trace", _check_lindblad_trace),
    ("counting log-LR independent of alpha", _check_alpha),
    ("Chernoff mu(0) = mu(1) = 0", _check_chernoff_endpoints),
    ("Riccati steady state equals quadratic root", _check_riccati),
    ("Gaussian LLR increment equals density ratio", _check_llr_density),
    ("Wilson interval closed form", _check_wilson),
    ("classical grid stationary variance", _check_classical_grid),
)


def run_oracles(stream=None):
    stream = sys.stdout if stream is None else stream
    ok_all = True
    width = max(len(name) for name, _ in ORACLES)
    for name, check in ORACLES:
        try:
            ok, detail = check()
        except Exception as exc:  # an oracle that crashes counts as failed
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}", file=stream)
    return ok_all


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="cqht", description="Likelihood-ratio tests on simulated continuous measurements.")
    p.add_argument("--version", action="version", version=f"cqht {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name, help=f"run the {name} scenario")
        sp.add_argument("config", nargs="?")
        sp.add_argument("-o", "--out", help="output directory (default: [output] dir or ./run-<scenario>)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int, dest="n_trials")
        sp.add_argument("--trajectory", action="store_true", help="write a thinned trajectory of trial 0")
        sp.add_argument("--full-trajectory", action="store_true", help="write trial 0 at every step")
    sp = sub.add_parser("chernoff", help="Chernoff exponent and bounds for the force scenario (CSV)")
    sp.add_argument("config", nargs="?")
    sp.add_argument("--scan-s", type=int, default=21, metavar="N")
    sp.add_argument("-o", "--out", help="CSV file (default: standard output)")
    sp = sub.add_parser("simulate-record", help="write one measurement record as CSV")
    sp.add_argument("config", nargs="?")
    sp.add_argument("--scenario", choices=SCENARIOS)
    sp.add_argument("--seed", type=int)
    sp.add_argument("-o", "--out", default="record", help="output directory")
    sub.add_parser("verify", help="run the quick oracle suite")
    return p


def _run(args):
    if args.command == "verify":
        return EXIT_OK if run_oracles() else EXIT_FAULT
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.command == "chernoff":
        cfg, _ = parse_config(args.config, "force-detect", overrides)
        s, mu, b10, b01 = chernoff_scan(cfg, args.scan_s)
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            w = csv.writer(fh)
            w.writerow(["s", "mu", "bound_P10", "bound_P01"])
            for row in zip(s, mu, b10, b01):
                w.writerow([repr(float(v)) for v in row])
        finally:
            if args.out:
                fh.close()
        return EXIT_OK
    if args.command == "simulate-record":
        cfg, _ = parse_config(args.config, args.scenario, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        started = time.strftime("%Y-%m-%dT%H:%M:%S")
        rec = simulate_record(cfg)
        rec.to_csv(out / "record.csv")
        files = [{"name": "record.csv", "sha256": _sha256(out / "record.csv"), "bytes": (out / "record.csv").stat().st_size}]
        m = RunManifest(cfg.to_dict(), __version__, cfg.seed, started, time.strftime("%Y-%m-%dT%H:%M:%S"), files)
        _dump_json(m.to_dict(), out / "manifest.json")
        print(f"record.csv  sha256 {files[0]['sha256']}")
        return EXIT_OK
    if args.n_trials is not None:
        overrides["n_trials"] = args.n_trials
    if args.trajectory or args.full_trajectory:
        overrides["keep_trajectory"] = True
    if args.full_trajectory:
        overrides["thin"] = 1
    cfg, out_opts = parse_config(args.config, args.command, overrides)
    out_dir = args.out or out_opts.get("dir") or f"run-{cfg.scenario}"
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    result = run_scenario(cfg)
    manifest = emit_results(result, out_dir, started, time.strftime("%Y-%m-%dT%H:%M:%S"))
    for row in result.error_rates():
        print(f"T={row['T']:g}  error rate {row['rate']:.4f}  [{row['low']:.4f}, {row['high']:.4f}]  n={row['n']}")
    if result.failures:
        print(f"{len(result.failures)} trial(s) quarantined after numerical faults", file=sys.stderr)
    print(f"wrote {out_dir}  inventory {manifest.digest[:16]}")
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except ValueError as exc:
        # ConfigError and run-time parameter checks alike
        print(f"cqht: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFault as exc:
        print(f"cqht: numerical fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
