"""Command-line pipeline: collect -> estimate -> synthesize -> validate.

Exit codes: 0 ok, 2 configuration error, 3 data quality (rank condition),
4 estimation failure, 5 synthesis failure, 6 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .estimate import EstimationError, NoiseEstimate, estimate_noise
from .matlib import spectral_norm
from .sdpcore import SolverAdapter
from .steer import (
    EvaluationReport,
    Policy,
    PreconditionError,
    SteeringSpec,
    SynthesisError,
    evaluate_policy,
    solve_ddcs,
    solve_mbcs,
    solve_rddcs,
)
from .sysdata import (
    Dataset,
    GaussianMoments,
    LtiSystem,
    build_hankel,
    collect,
    double_integrator,
    monte_carlo_closed_loop,
)

log = logging.getLogger("covsteer")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATE, EXIT_SYNTH, EXIT_VALIDATE = 0, 2, 3, 4, 5, 6


class ConfigError(ValueError):
    pass


def _matrix(x, n: int, name: str) -> np.ndarray:
    # scalars mean multiples of the identity
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    a = np.atleast_2d(a)
    if a.shape != (n, n):
        raise ConfigError(f"{name} must be a scalar or a {n}x{n} matrix, got {a.shape}")
    return a


@dataclass
class ExperimentConfig:
    system: object = "double-integrator"   # preset name or {"A": .., "B": .., "D": ..}
    T: int = 15
    amplitude: float = 10.0
    N: int = 10
    Q: object = 0.1
    R: object = 1.0
    mu0: list = field(default_factory=lambda: [30.0, 1.0])
    Sigma0: object = field(default_factory=lambda: [[1.0, 0.0], [0.0, 0.5]])
    muf: list = field(default_factory=lambda: [-10.0, 0.0])
    Sigmaf: object = 0.5
    estimator: str = "analytic"
    noise_cov: object = None               # "known", "estimated", a matrix; None picks by estimator
    mode: str = "rdd"
    mb_formulation: str = "exact"
    delta: float = 0.001
    trials: int = 1000
    seed: int = 0
    dA: object = None
    dB: object = None
    dD: object = None
    perturb_collection: bool = True
    backend: str = "clarabel"
    out: str = "runs"

    def __post_init__(self):
        if self.estimator not in ("analytic", "dc-joint"):
            raise ConfigError(f"estimator must be analytic or dc-joint, got {self.estimator!r}")
        if self.mode not in ("dd", "rdd", "mb"):
            raise ConfigError(f"mode must be dd, rdd or mb, got {self.mode!r}")
        if self.mb_formulation not in ("exact", "relaxed"):
            raise ConfigError(f"mb_formulation must be exact or relaxed, got {self.mb_formulation!r}")
        if not 0.0 < float(self.delta) < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if int(self.T) < 1 or int(self.N) < 1:
            raise ConfigError("T and N must be >= 1")
        if isinstance(self.noise_cov, str) and self.noise_cov not in ("known", "estimated"):
            raise ConfigError(f"noise_cov must be known, estimated or a matrix")

    # construction -----------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d.pop("preset", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        def plain(x):
            return x.tolist() if isinstance(x, np.ndarray) else x
        return {k: plain(v) for k, v in dataclasses.asdict(self).items()}

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def digest(self) -> str:
        """Hash of every setting that affects results (the output directory excluded)."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def noise_source(self):
        """``noise_cov`` with the default resolved: known for analytic, estimated for dc-joint."""
        if self.noise_cov is None:
            return "known" if self.estimator == "analytic" else "estimated"
        return self.noise_cov

    # derived objects ----------------------------------------------------------

    def nominal_system(self) -> LtiSystem:
        if self.system == "double-integrator":
            return double_integrator(1.0, 0.1)
        if isinstance(self.system, dict):
            try:
                return LtiSystem(self.system["A"], self.system["B"], self.system["D"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad system definition: {exc}") from None
        raise ConfigError(f"unknown system preset {self.system!r}")

    def true_system(self) -> LtiSystem:
        s = self.nominal_system()

        def delta(x, base, name):
            if x is None:
                return None
            a = np.asarray(x, dtype=float)
            if a.ndim == 0:
                if base.shape[0] != base.shape[1]:
                    raise ConfigError(f"{name} must be a {base.shape} matrix, not a scalar")
                return float(a) * np.eye(base.shape[0])
            a = np.atleast_2d(a)
            if a.shape != base.shape:
                raise ConfigError(f"{name} must have shape {base.shape}, got {a.shape}")
            return a

        try:
            return s.perturbed(delta(self.dA, s.A, "dA"), delta(self.dB, s.B, "dB"),
                               delta(self.dD, s.D, "dD"))
        except ValueError as exc:
            raise ConfigError(f"bad perturbation: {exc}") from None

    def collection_system(self) -> LtiSystem:
        return self.true_system() if self.perturb_collection else self.nominal_system()

    def steering_spec(self) -> SteeringSpec:
        s = self.nominal_system()
        n, m = s.n, s.m
        try:
            init = GaussianMoments(self.mu0, _matrix(self.Sigma0, n, "Sigma0"))
            term = GaussianMoments(self.muf, _matrix(self.Sigmaf, n, "Sigmaf"))
            return SteeringSpec.constant(
                int(self.N), _matrix(self.Q, n, "Q"), _matrix(self.R, m, "R"), init, term
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def adapter(self) -> SolverAdapter:
        return SolverAdapter(backend=self.backend)


# --- results ----------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    statuses: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _fmt(x: float) -> str:
    return repr(float(x))


def moments_rows(means: np.ndarray, covs: np.ndarray, k0: int = 0):
    n = means.shape[1]
    header = ["k"] + [f"mu_{i + 1}" for i in range(n)] + [
        f"sigma_{i + 1}{j + 1}" for i in range(n) for j in range(i, n)
    ]
    rows = []
    for k in range(means.shape[0]):
        iu = np.triu_indices(n)
        rows.append([str(k + k0)] + [_fmt(v) for v in means[k]] + [_fmt(v) for v in covs[k][iu]])
    return header, rows


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_moments_csv(path):
    """Inverse of :func:`moments_rows`: returns ``(k, means, covs)``."""
    with open(path) as f:
        r = list(csv.reader(f))
    header, body = r[0], r[1:]
    n = sum(1 for h in header if h.startswith("mu_"))
    means = np.array([[float(v) for v in row[1:1 + n]] for row in body])
    covs = np.zeros((len(body), n, n))
    iu = np.triu_indices(n)
    for k, row in enumerate(body):
        c = np.zeros((n, n))
        c[iu] = [float(v) for v in row[1 + n:]]
        covs[k] = c + np.triu(c, 1).T
    ks = np.array([int(row[0]) for row in body])
    return ks, means, covs


def ellipse_points(mean, cov, scale: float = 3.0, num: int = 64) -> np.ndarray:
    """Boundary of ``{x : (x - mean)' cov^-1 (x - mean) = scale^2}`` (first two coordinates)."""
    c = np.asarray(cov, dtype=float)[:2, :2]
    w, v = np.linalg.eigh(0.5 * (c + c.T))
    t = np.linspace(0.0, 2.0 * np.pi, num)
    circle = np.vstack([np.cos(t), np.sin(t)])
    return (np.asarray(mean, dtype=float)[:2, None] + scale * (v * np.sqrt(np.clip(w, 0, None))) @ circle).T


def render_svg(means, covs, target: GaussianMoments, trajectories=None, title: str = "",
               width: int = 640, height: int = 480) -> str:
    """Standalone SVG: sample paths, 3-sigma ellipses per step, dashed target ellipse."""
    shapes = [ellipse_points(means[k], covs[k]) for k in range(len(means))]
    tgt = ellipse_points(target.mean, target.cov)
    pts = np.vstack(shapes + [tgt, means[:, :2]] + ([] if trajectories is None else
                                                   [trajectories[:, :, :2].reshape(-1, 2)]))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    pad = 40

    def xy(p):
        x = pad + (p[0] - lo[0]) / (hi[0] - lo[0]) * (width - 2 * pad)
        y = height - pad - (p[1] - lo[1]) / (hi[1] - lo[1]) * (height - 2 * pad)
        return f"{x:.2f},{y:.2f}"

    def poly(points, attrs):
        return f'<polyline points="{" ".join(xy(p) for p in points)}" {attrs}/>'

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{title}</text>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" font-family="sans-serif" font-size="12">x1</text>',
        f'<text x="8" y="{height / 2:.0f}" font-family="sans-serif" font-size="12">x2</text>',
        poly([(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1]), (lo[0], lo[1])],
             'fill="none" stroke="#999" stroke-width="1"'),
    ]
    if trajectories is not None:
        for tr in trajectories:
            out.append(poly(tr[:, :2], 'fill="none" stroke="#7aa6d6" stroke-opacity="0.25" stroke-width="0.6"'))
    for e in shapes:
        out.append(poly(e, 'fill="none" stroke="#c0392b" stroke-width="1.2"'))
    out.append(poly(means[:, :2], 'fill="none" stroke="black" stroke-width="1"'))
    out.append(poly(tgt, 'fill="none" stroke="#27ae60" stroke-width="1.6" stroke-dasharray="6,4"'))
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- pipeline stages ---------------------------------------------------------

def stage_collect(cfg: ExperimentConfig, seed: Optional[int] = None) -> Dataset:
    spec = cfg.steering_spec()
    return collect(cfg.collection_system(), spec.init, int(cfg.T), float(cfg.amplitude),
                   cfg.seed if seed is None else seed)


def stage_estimate(cfg: ExperimentConfig, data: Dataset):
    h = build_hankel(data)
    src = cfg.noise_source()
    if isinstance(src, str):
        Sigma = cfg.collection_system().noise_cov if src == "known" else None
    else:
        Sigma = _matrix(cfg.noise_cov, data.n, "noise_cov")
    return estimate_noise(h, cfg.delta, cfg.estimator, Sigma, cfg.adapter())


def stage_synthesize(cfg: ExperimentConfig, data: Dataset, est: Optional[NoiseEstimate],
                     mode: Optional[str] = None) -> Policy:
    mode = mode or cfg.mode
    spec = cfg.steering_spec()
    if mode == "mb":
        return solve_mbcs(cfg.nominal_system(), spec, cfg.adapter(), cfg.mb_formulation)
    h = build_hankel(data)
    if mode == "dd":
        return solve_ddcs(h, est, spec, cfg.adapter())
    return solve_rddcs(h, est, spec, cfg.adapter())


def stage_validate(cfg: ExperimentConfig, policy: Policy, trials: Optional[int] = None,
                   seed: Optional[int] = None, keep: bool = True):
    spec = cfg.steering_spec()
    true_sys = cfg.true_system()
    if policy.gains.shape[1:] != (true_sys.m, true_sys.n) or policy.N != spec.N:
        raise ValueError(
            f"policy gains {policy.gains.shape} do not fit N={spec.N}, m={true_sys.m}, n={true_sys.n}"
        )
    report = evaluate_policy(true_sys, policy, spec)
    s = cfg.seed if seed is None else seed
    mc = monte_carlo_closed_loop(true_sys, policy, spec.init, int(trials or cfg.trials),
                                 [int(s), 1], keep_trajectories=keep)
    return report, mc


def write_validation(out: Path, cfg: ExperimentConfig, policy: Policy, report: EvaluationReport,
                     mc, label: str, max_paths: int = 100) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.steering_spec()
    files = {}
    header, rows = moments_rows(report.means, report.covs)
    write_csv(out / "moments.csv", header, rows)
    files["moments"] = str(out / "moments.csv")
    header, rows = moments_rows(mc.sample_means, mc.sample_covs)
    write_csv(out / "mc_moments.csv", header, rows)
    files["mc_moments"] = str(out / "mc_moments.csv")
    header, rows = moments_rows(spec.terminal.mean[None], spec.terminal.cov[None], k0=spec.N)
    write_csv(out / "target.csv", header, rows)
    files["target"] = str(out / "target.csv")
    paths = None
    if mc.trajectories is not None:
        paths = mc.trajectories[:max_paths]
        n = paths.shape[2]
        rows = [[str(i), str(k)] + [_fmt(v) for v in paths[i, k]]
                for i in range(paths.shape[0]) for k in range(paths.shape[1])]
        write_csv(out / "trajectories.csv", ["trial", "k"] + [f"x_{j + 1}" for j in range(n)], rows)
        files["trajectories"] = str(out / "trajectories.csv")
    (out / "moments.svg").write_text(
        render_svg(report.means, report.covs, spec.terminal, paths, title=label)
    )
    files["svg"] = str(out / "moments.svg")
    summary = report.summary()
    summary["mc_terminal_cov"] = mc.sample_covs[-1].tolist()
    summary["terminal_cov"] = report.covs[-1].tolist()
    (out / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    files["report"] = str(out / "report.json")
    return files


# --- scenarios ---------------------------------------------------------------

def scenario_config(name: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Double-integrator presets: nominal, dynamics perturbation, disturbance perturbation."""
    base = base or ExperimentConfig()
    if name in ("fig1a", "coverage"):
        return base
    if name == "fig1b":
        tau = 0.05
        return base.replace(dA=[[0.0, tau], [0.0, 0.0]], dB=[[0.0], [tau]])
    if name == "fig3":
        return base.replace(dD=0.2)
    raise ConfigError(f"unknown scenario {name!r}")


@dataclass
class ScenarioRun:
    seed: int
    data: Dataset
    policies: dict
    reports: dict
    estimate: Optional[NoiseEstimate]
    errors: dict


def run_scenario(cfg: ExperimentConfig, seed: int, modes=("rdd", "mb")) -> ScenarioRun:
    """Collect, estimate and synthesize each mode; evaluate on the true system."""
    spec = cfg.steering_spec()
    true_sys = cfg.true_system()
    data = stage_collect(cfg, seed)
    est = None
    policies, reports, errors = {}, {}, {}
    try:
        if any(m != "mb" for m in modes):
            est, _ = stage_estimate(cfg, data)
    except EstimationError as exc:
        errors["estimate"] = str(exc)
    for mode in modes:
        if mode != "mb" and est is None:
            continue
        try:
            p = stage_synthesize(cfg, data, est, mode)
        except (SynthesisError, PreconditionError) as exc:
            errors[mode] = str(exc)
            continue
        policies[mode] = p
        reports[mode] = evaluate_policy(true_sys, p, spec)
    return ScenarioRun(seed, data, policies, reports, est, errors)


def coverage_study(cfg: ExperimentConfig, runs: int, delta: float, seed0: int = 0) -> dict:
    """Fraction of datasets with ``||Xi_true - Xi_hat|| <= rho`` (spectral norm)."""
    sysc = cfg.collection_system()
    hits = 0
    for i in range(runs):
        data = stage_collect(cfg, seed0 + i)
        est, _ = estimate_noise(build_hankel(data), delta, "analytic", sysc.noise_cov)
        if spectral_norm(data.true_noise.T - est.Xi_hat) <= est.rho:
            hits += 1
    return {"runs": runs, "delta": delta, "hits": hits, "coverage": hits / runs}


# --- command handlers --------------------------------------------------------

def _out_dir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_collect(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    data = stage_collect(cfg)
    path = out / "dataset.json"
    data.save(path)
    h = build_hankel(data)
    print(f"wrote {path}")
    print(f"rank [U0; X0] = {h.rank_S} (n + m = {h.n + h.m}), T = {h.T}")
    if not h.full_row_rank:
        print("WARNING: rank condition violated: data are not rich enough for synthesis")
        return EXIT_DATA
    return EXIT_OK


def cmd_estimate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    data = Dataset.load(args.dataset or out / "dataset.json")
    try:
        est, report = stage_estimate(cfg, data)
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        if exc.report is not None:
            print(json.dumps(exc.report.to_dict()), file=sys.stderr)
        return EXIT_ESTIMATE
    path = out / "estimate.json"
    est.save(path)
    print(f"wrote {path}")
    print(f"rho = {est.rho:.10g} (delta = {est.delta}, Sigma_xi {est.sigma_source})")
    if report is not None:
        print(f"CCP iterations {report.iterations}, converged {report.converged}")
        print("objective trace: " + " ".join(f"{f:.10g}" for f in report.objective_trace))
        print(f"Sigma_xi estimate: {report.sigma_estimate.tolist()}")
    if args.oracle:
        if data.true_noise is None:
            print("no stored noise realization; --oracle ignored")
        else:
            err = spectral_norm(data.true_noise.T - est.Xi_hat)
            verdict = "inside" if err <= est.rho else "OUTSIDE"
            print(f"oracle: ||Xi_true - Xi_hat|| = {err:.6g} {verdict} rho = {est.rho:.6g}")
    return EXIT_OK


def cmd_synthesize(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    data = est = None
    if cfg.mode != "mb":
        data = Dataset.load(args.dataset or out / "dataset.json")
        est = NoiseEstimate.load(args.estimate or out / "estimate.json")
    try:
        policy = stage_synthesize(cfg, data, est)
    except PreconditionError as exc:
        print(f"data quality: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        if exc.largest_feasible_rho is not None:
            print(f"largest feasible rho: {exc.largest_feasible_rho:.6g}", file=sys.stderr)
        return EXIT_SYNTH
    path = out / "policy.json"
    policy.save(path)
    diag = {k: v for k, v in policy.diagnostics.items() if isinstance(v, (int, float, str, bool))}
    (out / "policy_diagnostics.json").write_text(json.dumps(diag, indent=1, sort_keys=True) + "\n")
    print(f"wrote {path}")
    print(f"mode {policy.mode}: covariance cost {policy.cost_cov:.8g}, mean cost {policy.cost_mean:.8g}")
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    policy = Policy.load(args.policy or out / "policy.json")
    try:
        report, mc = stage_validate(cfg, policy)
    except ValueError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATE
    files = write_validation(out / "validate", cfg, policy, report, mc, f"{policy.mode}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict}: min_eig(Sigma_f - Sigma_N) = {report.terminal_cov_slack:.3e}, "
          f"||mu_N - mu_f|| = {report.terminal_mean_error:.3e}")
    for k, v in files.items():
        print(f"  {k}: {v}")
    return EXIT_OK


def cmd_reproduce(cfg: ExperimentConfig, args) -> int:
    target = args.target
    out = Path(cfg.out) / target
    out.mkdir(parents=True, exist_ok=True)
    if target == "coverage":
        delta = args.delta if args.delta is not None else 0.1
        scfg = scenario_config(target, cfg)
        t0 = time.perf_counter()
        res = coverage_study(scfg, args.runs, delta, scfg.seed)
        man = RunManifest(scfg.digest(), metrics=res,
                          timings={"coverage": time.perf_counter() - t0})
        (out / "coverage.json").write_text(json.dumps(res, indent=1, sort_keys=True) + "\n")
        man.outputs["coverage"] = str(out / "coverage.json")
        man.save(out / "manifest.json")
        print(f"coverage {res['hits']}/{res['runs']} = {res['coverage']:.4f} at delta = {delta}")
        return EXIT_OK
    scfg = scenario_config(target, cfg)
    man = RunManifest(scfg.digest())
    t0 = time.perf_counter()
    run = run_scenario(scfg, scfg.seed)
    man.timings["synthesis"] = time.perf_counter() - t0
    if run.estimate is not None:
        run.estimate.save(out / "estimate.json")
        man.outputs["estimate"] = str(out / "estimate.json")
    run.data.save(out / "dataset.json")
    man.outputs["dataset"] = str(out / "dataset.json")
    code = EXIT_OK
    for mode in ("mb", "rdd"):
        if mode not in run.policies:
            man.statuses[mode] = f"failed: {run.errors.get(mode, run.errors.get('estimate'))}"
            print(f"{target} {mode}: {man.statuses[mode]}")
            code = EXIT_SYNTH
            continue
        policy = run.policies[mode]
        sub = out / mode
        sub.mkdir(exist_ok=True)
        policy.save(sub / "policy.json")
        t1 = time.perf_counter()
        report, mc = stage_validate(scfg, policy)
        man.timings[f"validate_{mode}"] = time.perf_counter() - t1
        files = write_validation(sub, scfg, policy, report, mc, f"{target} {mode}")
        files["policy"] = str(sub / "policy.json")
        man.outputs.update({f"{mode}_{k}": v for k, v in files.items()})
        man.statuses[mode] = "PASS" if report.passed else "FAIL"
        man.metrics[mode] = report.summary()
        print(f"{target} {mode}: {man.statuses[mode]} "
              f"min_eig(Sigma_f - Sigma_N) = {report.terminal_cov_slack:.3e}, "
              f"||mu_N - mu_f|| = {report.terminal_mean_error:.3e}")
    man.save(out / "manifest.json")
    print(f"manifest: {out / 'manifest.json'}")
    return code


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=["dd", "rdd", "mb"])
    common.add_argument("--estimator", choices=["analytic", "dc-joint"])
    common.add_argument("--delta", type=float)
    common.add_argument("--trials", type=int)
    common.add_argument("--oracle", action="store_true",
                        help="compare the estimate with the stored noise realization")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="covsteer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="simulate the system and save a dataset")
    p = sub.add_parser("estimate", parents=[common], help="estimate the noise realization")
    p.add_argument("--dataset")
    p = sub.add_parser("synthesize", parents=[common], help="solve for a steering policy")
    p.add_argument("--dataset")
    p.add_argument("--estimate")
    p = sub.add_parser("validate", parents=[common], help="propagate and simulate a policy")
    p.add_argument("--policy")
    p = sub.add_parser("reproduce", parents=[common], help="run a preset scenario end to end")
    p.add_argument("target", choices=["fig1a", "fig1b", "fig3", "coverage"])
    p.add_argument("--runs", type=int, default=1000, help="datasets for the coverage study")
    return parser


_HANDLERS = {
    "collect": cmd_collect,
    "estimate": cmd_estimate,
    "synthesize": cmd_synthesize,
    "validate": cmd_validate,
    "reproduce": cmd_reproduce,
}


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {
        k: getattr(args, k)
        for k in ("seed", "out", "mode", "estimator", "delta", "trials")
        if getattr(args, k, None) is not None
    }
    if args.command == "reproduce" and args.target == "coverage":
        overrides.pop("delta", None)
    d = cfg.to_dict()
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        cfg.steering_spec()
        cfg.true_system()
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
