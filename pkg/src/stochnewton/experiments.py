"""Experiment orchestration behind the command-line tool.

Configs are TOML files read as a flat mapping of dotted keys
(``solver.c0 = 0.5`` and ``[solver]\\nc0 = 0.5`` are equivalent).  Every
subcommand has a fixed key schema; unknown keys are a :class:`ConfigError`.
Artifacts depend only on the config file and the seed.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import images
from . import rng as rngmod
from .errors import ConfigError, ContractViolation, SingularOracleError, ValidationAbortedError
from .oracle import (ExactOracle, NoisyOracle, NoisyOracleConfig, QuasiNewtonOracle, QuasiNewtonState,
                     SketchedOracle, qn_oracle_step)
from .problem import (AbsQuadProblem, BatchMLEProblem, DenoisingProblem, QuadraticProblem, ReluQuadProblem,
                      make_gaussian_data)
from .sketch import KINDS, sample_sketch, sketched_contraction_diagnostics
from .solver import SolverConfig, run, write_summary_json, write_trace_csv
from .stochastics import (BernoulliProcessSpec, run_solver_ensemble, simulate_stopping_ensemble,
                          supermartingale_check, validate_expectation_of_sums, validate_fixed_n_chernoff,
                          validate_solver_bounds, validate_stopping_chernoff, write_ensemble_csv)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_CENSORED, EXIT_VALIDATION = 0, 1, 2, 3

# ---------------------------------------------------------------------------
# config schema

FLOAT, INT, STR, BOOL = "float", "int", "str", "bool"
FLOATS, INTS, STRS = "list[float]", "list[int]", "list[str]"

PROBLEM_KEYS = {
    "problem.id": STR,
    "problem.image": STR,
    "problem.m1": INT,
    "problem.m2": INT,
    "problem.noise_sigma": FLOAT,
    "problem.alpha": FLOAT,
    "problem.dim": INT,
    "problem.weight": FLOAT,
    "problem.curvature": FLOAT,
    "problem.shift": FLOATS,
    "problem.beta": FLOAT,
    "problem.eigenvalues": FLOATS,
    "problem.rotation_seed": INT,
    "problem.x0": FLOATS,
    "problem.N": INT,
    "problem.mu": FLOATS,
    "problem.sigma": FLOATS,
    "problem.batch_size": INT,
}
SOLVER_KEYS = {
    "solver.c0": FLOAT,
    "solver.alpha": FLOAT,
    "solver.epsilon": FLOAT,
    "solver.max_iter": INT,
}
ORACLE_KEYS = {
    "oracle": STR,
    "noise.sigma_scale": FLOAT,
    "sketch.dim": INT,
    "sketch.kind": STR,
    "sketch.replace": BOOL,
    "qn.rule": STR,
    "qn.M": INT,
    "qn.alpha_reset": FLOAT,
}
COMMON = {"seed": INT}

SCHEMAS = {
    "solve": {**COMMON, **PROBLEM_KEYS, **SOLVER_KEYS, **ORACLE_KEYS},
    "montecarlo": {
        **COMMON, **PROBLEM_KEYS, **SOLVER_KEYS, **ORACLE_KEYS,
        "mode": STR,
        "trials": INT,
        "ensemble_csv": BOOL,
        "stopping.p": FLOATS,
        "stopping.threshold": FLOATS,
        "stopping.gamma": FLOATS,
        "stopping.horizon": INT,
        "stopping.pilot_trials": INT,
        "fixed_n.n": INT,
        "fixed_n.delta": FLOAT,
        "fixed_n.gamma": FLOAT,
        "fixed_n.trials": INT,
        "bounds.c_hat": FLOAT,
        "bounds.omega": FLOAT,
        "bounds.gammas": FLOATS,
        "bounds.x0_spread": FLOAT,
    },
    "mle": {
        **COMMON,
        "mle.N": INT,
        "mle.mu": FLOATS,
        "mle.sigma": FLOATS,
        "mle.batch_size": INT,
        "mle.M": INT,
        "mle.outer": INT,
        "mle.gd_step": FLOAT,
        "mle.x0": FLOATS,
        "qn.rule": STR,
        "qn.alpha_reset": FLOAT,
    },
    "denoise": {
        **COMMON, **PROBLEM_KEYS, **SOLVER_KEYS,
        "denoise.fractions": FLOATS,
        "denoise.kinds": STRS,
        "denoise.replace": BOOL,
    },
    "sketchbench": {
        **COMMON, **PROBLEM_KEYS,
        "bench.fractions": FLOATS,
        "bench.kind": STR,
        "bench.trials": INT,
        "bench.eps": FLOAT,
        "bench.c": FLOAT,
        "bench.replace": BOOL,
        "bench.spread": FLOAT,
    },
}


def _flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _check_type(key, value, kind):
    def is_num(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    ok = {
        FLOAT: is_num(value),
        INT: isinstance(value, int) and not isinstance(value, bool),
        STR: isinstance(value, str),
        BOOL: isinstance(value, bool),
        FLOATS: isinstance(value, list) and all(is_num(v) for v in value),
        INTS: isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value),
        STRS: isinstance(value, list) and all(isinstance(v, str) for v in value),
    }[kind]
    if not ok:
        raise ConfigError(f"{key}: expected {kind}, got {value!r}")
    if kind == FLOAT:
        return float(value)
    if kind == FLOATS:
        return [float(v) for v in value]
    return value


@dataclass
class Config:
    command: str
    values: dict
    base_dir: Path

    def get(self, key, default=None):
        return self.values.get(key, default)

    def path(self, key):
        raw = self.values.get(key)
        if raw is None:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p


def parse_config(command: str, text: str, base_dir=".") -> Config:
    if command not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {command!r}")
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    flat = _flatten(tree)
    schema = SCHEMAS[command]
    unknown = sorted(set(flat) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    values = {k: _check_type(k, v, schema[k]) for k, v in flat.items()}
    return Config(command, values, Path(base_dir))


def load_config(command: str, path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(command, text, path.parent)


# ---------------------------------------------------------------------------
# builders


def build_solver_config(cfg: Config, **overrides) -> SolverConfig:
    kw = dict(
        c0=cfg.get("solver.c0", 1.0),
        alpha=cfg.get("solver.alpha", 0.5),
        epsilon=cfg.get("solver.epsilon", 1e-6),
        max_iter=cfg.get("solver.max_iter", 100_000),
    )
    kw.update(overrides)
    try:
        return SolverConfig(**kw)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc


def load_denoise_image(cfg: Config, seed: int) -> np.ndarray:
    path = cfg.path("problem.image")
    if path is not None:
        try:
            return images.read_image(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read image {path}: {exc}") from exc
    m1 = cfg.get("problem.m1", 16)
    m2 = cfg.get("problem.m2", m1)
    if m1 < 3 or m2 < 3:
        raise ConfigError("synthetic image needs m1, m2 >= 3")
    return images.synthetic_image(m1, m2, cfg.get("problem.noise_sigma", 20.0), rngmod.stream(seed, 901))


def _x0(cfg, dim):
    x0 = cfg.get("problem.x0")
    if x0 is None:
        return None
    if len(x0) != dim:
        raise ConfigError(f"problem.x0 must have {dim} entries")
    return np.array(x0)


def _shift(cfg, dim):
    s = cfg.get("problem.shift", [0.0])
    if len(s) not in (1, dim):
        raise ConfigError(f"problem.shift must have 1 or {dim} entries")
    return np.array(s)


def build_problem(cfg: Config, seed: int):
    """Problem from the ``problem.*`` keys; returns ``(problem, batch_problem_or_None)``."""
    pid = cfg.get("problem.id")
    if pid is None:
        raise ConfigError("problem.id is required")
    try:
        if pid == "denoise":
            img = load_denoise_image(cfg, seed)
            p = DenoisingProblem(img, cfg.get("problem.alpha", 1.0))
            x0 = _x0(cfg, p.dim)
            if x0 is not None:
                p.x0 = x0
            return p, None
        if pid in ("abs-quad-1d", "abs-quad-nd"):
            dim = 1 if pid == "abs-quad-1d" else cfg.get("problem.dim", 2)
            shift = 0.0 if pid == "abs-quad-1d" else _shift(cfg, dim)
            p = AbsQuadProblem(dim, cfg.get("problem.weight", 1.0), cfg.get("problem.curvature", 1.0), shift)
            x0 = _x0(cfg, dim)
            p.x0 = np.full(dim, 2.0) if x0 is None else x0
            return p, None
        if pid == "quadratic":
            lam = cfg.get("problem.eigenvalues", [1.0, 2.0, 3.0, 4.0])
            rs = cfg.get("problem.rotation_seed")
            p = QuadraticProblem.from_spectrum(lam, rng=None if rs is None else rngmod.stream(rs, 902))
            x0 = _x0(cfg, p.dim)
            p.x0 = np.ones(p.dim) if x0 is None else x0
            return p, None
        if pid == "relu-quad":
            dim = cfg.get("problem.dim", 1)
            p = ReluQuadProblem(dim, cfg.get("problem.beta", 0.5), _shift(cfg, dim))
            x0 = _x0(cfg, dim)
            p.x0 = np.full(dim, 2.0) if x0 is None else x0
            return p, None
        if pid == "gauss-mle":
            mu = cfg.get("problem.mu", [1.0])
            sigma = cfg.get("problem.sigma", [1.0] * len(mu))
            N = cfg.get("problem.N", 1000)
            data = make_gaussian_data(N, mu, sigma, rngmod.stream(seed, 903))
            bp = BatchMLEProblem(data, cfg.get("problem.batch_size", max(1, N // 10)), permutation_seed=seed)
            return bp.full_problem(_x0(cfg, 2 * len(mu))), bp
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown problem.id {pid!r}")


def build_oracle(cfg: Config, problem, batch_problem=None):
    kind = cfg.get("oracle", "exact")
    if kind == "exact":
        return ExactOracle()
    if kind == "noisy":
        s = cfg.get("noise.sigma_scale", 0.0)
        return NoisyOracle(NoisyOracleConfig.isotropic(problem.dim, s))
    if kind == "sketched":
        sk = cfg.get("sketch.kind", "gaussian")
        if sk not in KINDS:
            raise ConfigError(f"sketch.kind must be one of {KINDS}")
        d = cfg.get("sketch.dim", max(1, problem.dim // 2))
        if not 1 <= d <= problem.dim:
            raise ConfigError(f"sketch.dim must lie in [1, {problem.dim}]")
        return SketchedOracle(d, sk, cfg.get("sketch.replace", True))
    if kind == "qn":
        rule = cfg.get("qn.rule", "bfgs")
        try:
            QuasiNewtonState.initial(1, cfg.get("qn.M", 10), cfg.get("qn.alpha_reset", 1.0), rule)
        except ContractViolation as exc:
            raise ConfigError(str(exc)) from exc
        return QuasiNewtonOracle(cfg.get("qn.M", 10), cfg.get("qn.alpha_reset", 1.0), rule, batch_problem)
    raise ConfigError(f"unknown oracle {kind!r}")


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed(cfg: Config, seed):
    return int(seed if seed is not None else cfg.get("seed", 0))


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: Config, seed=None, out=".") -> int:
    seed = _seed(cfg, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    problem, bp = build_problem(cfg, seed)
    oracle = build_oracle(cfg, problem, bp)
    scfg = build_solver_config(cfg)
    result = run(problem, oracle, scfg, rngmod.stream(seed, 0), seed=seed)
    write_trace_csv(out / "trace.csv", result.trace)
    write_summary_json(out / "summary.json", result)
    return EXIT_OK if result.terminated else EXIT_CENSORED


def cmd_montecarlo(cfg: Config, seed=None, out=".", log=None) -> int:
    log = sys.stderr if log is None else log
    seed = _seed(cfg, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mode = cfg.get("mode", "stopping")
    if mode not in ("stopping", "solver", "both"):
        raise ConfigError("mode must be 'stopping', 'solver' or 'both'")
    trials = cfg.get("trials", 10_000)
    if trials < 1:
        raise ConfigError("trials must be positive")
    if trials < 1000:
        print(f"warning: trials={trials} is below 1000; standard errors will be large", file=log)
    reports = []
    try:
        if mode in ("stopping", "both"):
            reports += _stopping_reports(cfg, seed, trials)
        if mode in ("solver", "both"):
            reports += _solver_reports(cfg, seed, trials, out)
    except ValidationAbortedError as exc:
        print(f"validation aborted: {exc}", file=log)
        return EXIT_VALIDATION
    with open(out / "reports.jsonl", "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    failed = [r for r in reports if r.satisfied is False]
    return EXIT_VALIDATION if failed else EXIT_OK


def _stopping_reports(cfg, seed, trials):
    import warnings

    reports = []
    horizon = cfg.get("stopping.horizon", 100_000)
    pilot = cfg.get("stopping.pilot_trials")
    idx = 0
    for p in cfg.get("stopping.p", [0.7, 0.9]):
        for thr in cfg.get("stopping.threshold", [10.0, 50.0]):
            try:
                spec = BernoulliProcessSpec(p, horizon)
            except ContractViolation as exc:
                raise ConfigError(str(exc)) from exc
            cell = int(rngmod.stream(seed, 904, idx).integers(0, 2 ** 63 - 1))
            idx += 1
            ens = simulate_stopping_ensemble(spec, thr, trials, cell, tag=0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for g in cfg.get("stopping.gamma", [0.3, 0.5]):
                    rep = validate_stopping_chernoff(spec, thr, g, None, trials, cell, pilot_trials=pilot, ensemble=ens)
                    reports.append(rep)
                    reports.append(supermartingale_check(ens, g, rep.params["E"]))
            reports.append(validate_expectation_of_sums(ens))
    if "fixed_n.n" in cfg.values:
        reports.append(validate_fixed_n_chernoff(
            cfg.get("fixed_n.n"), cfg.get("fixed_n.delta", 0.1), cfg.get("fixed_n.gamma", 0.5),
            cfg.get("fixed_n.trials", trials), int(rngmod.stream(seed, 905).integers(0, 2 ** 63 - 1))))
    return reports


def _solver_reports(cfg, seed, trials, out):
    problem, bp = build_problem(cfg, seed)
    oracle = build_oracle(cfg, problem, bp)
    if not getattr(oracle, "has_truth", False):
        raise ConfigError("solver-bound validation needs oracle = 'exact' or 'noisy'")
    scfg = build_solver_config(cfg)
    spread = cfg.get("bounds.x0_spread", 0.0)
    x0 = problem.x0.copy()
    sampler = None
    if spread > 0:
        sampler = lambda gen: x0 + spread * gen.uniform(-1.0, 1.0, x0.size)
    ens = run_solver_ensemble(problem, oracle, scfg, trials, seed, x0_sampler=sampler)
    if cfg.get("ensemble_csv", False):
        write_ensemble_csv(out / "ensemble.csv", ens)
    delta = 1.0 / problem.dim if isinstance(oracle, NoisyOracle) else 0.0
    try:
        return validate_solver_bounds(problem, oracle, scfg, trials, seed, c_hat=cfg.get("bounds.c_hat", 0.0),
                                      omega=cfg.get("bounds.omega"), delta=delta,
                                      gammas=cfg.get("bounds.gammas", [0.3, 0.5]), ensemble=ens)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# mini-batch MLE


@dataclass
class MLETrack:
    """Running statistics of iterates and steps, as in a Welford accumulator."""

    dim: int

    def __post_init__(self):
        self.count = 0
        self.mean_u = np.zeros(self.dim)
        self.steps = 0
        self.mean_s = np.zeros(self.dim)
        self.m2_s = np.zeros(self.dim)

    def add_iterate(self, u):
        self.count += 1
        self.mean_u += (u - self.mean_u) / self.count

    def add_step(self, s):
        self.steps += 1
        d = s - self.mean_s
        self.mean_s += d / self.steps
        self.m2_s += d * (s - self.mean_s)

    @property
    def var_s(self):
        return self.m2_s / self.steps if self.steps else np.zeros(self.dim)


@np.errstate(all="ignore")
def mle_runs(bp: BatchMLEProblem, u0, M: int, outer: int, rule: str, alpha_reset: float, gd_step: float):
    """Quasi-Newton and gradient-descent baselines in the same inner/outer loop.

    Iteration ``k`` uses batch ``k // M``; steps are taken without an
    acceptance test.  Yields one row per method and outer iteration.
    """
    rows = []
    for method in ("qn", "gd"):
        u = np.array(u0, dtype=float)
        track = MLETrack(u.size)
        track.add_iterate(u)
        state = QuasiNewtonState.initial(u.size, M, alpha_reset, rule)
        finite = True
        for k in range(M * outer):
            batch = k // M
            if not (finite and np.all(np.isfinite(u))):
                u_next = np.full(u.size, np.nan)
            elif method == "qn":
                try:
                    sample, state = qn_oracle_step(state, bp, u)
                    u_next = u - sample.action(sample.grad)
                except (SingularOracleError, ContractViolation):
                    u_next = np.full(u.size, np.nan)
            else:
                u_next = u - gd_step * bp.gradient(u, bp.batch_indices(batch))
            track.add_step(u_next - u)
            u = u_next
            track.add_iterate(u)
            if (k + 1) % M == 0:
                obj = bp.objective(u) if np.all(np.isfinite(u)) else math.nan
                finite = bool(np.all(np.isfinite(u)) and math.isfinite(obj))
                rows.append((method, k // M, k + 1, obj, not finite, track.mean_u.copy(),
                             track.mean_s.copy(), track.var_s.copy()))
    return rows


def cmd_mle(cfg: Config, seed=None, out=".") -> int:
    seed = _seed(cfg, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mu = cfg.get("mle.mu", [1.0])
    sigma = cfg.get("mle.sigma", [1.0] * len(mu))
    if len(sigma) != len(mu):
        raise ConfigError("mle.mu and mle.sigma must have equal length")
    N = cfg.get("mle.N", 1000)
    M = cfg.get("mle.M", 20)
    outer = cfg.get("mle.outer", 20)
    if M < 1 or outer < 1:
        raise ConfigError("mle.M and mle.outer must be positive")
    try:
        data = make_gaussian_data(N, mu, sigma, rngmod.stream(seed, 903))
        bp = BatchMLEProblem(data, cfg.get("mle.batch_size", max(1, N // 10)), permutation_seed=seed)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    p = len(mu)
    u0 = np.array(cfg.get("mle.x0", [0.0] * (2 * p)))
    if u0.size != 2 * p:
        raise ConfigError(f"mle.x0 must have {2 * p} entries")
    omega_hat = float(np.linalg.norm(bp.hessian(u0, bp.batch_indices(0)), 2))
    gd_step = cfg.get("mle.gd_step", 1.0 / omega_hat)
    alpha_reset = cfg.get("qn.alpha_reset", omega_hat)
    rule = cfg.get("qn.rule", "bfgs")
    try:
        QuasiNewtonState.initial(1, M, alpha_reset, rule)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    rows = mle_runs(bp, u0, M, outer, rule, alpha_reset, gd_step)
    names = [f"u{j}" for j in range(2 * p)]
    header = (["method", "outer", "k", "objective", "flag"] + [f"mean_{n}" for n in names]
              + [f"step_mean_{n}" for n in names] + [f"step_var_{n}" for n in names])
    with open(out / "mle.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for method, o, k, obj, flag, mu_, ms, vs in rows:
            w.writerow([method, o, k, repr(float(obj)), "1" if flag else "0"]
                       + [repr(float(v)) for v in np.concatenate([mu_, ms, vs])])
    u_true = np.concatenate([np.array(mu), np.log(np.array(sigma))])
    _write_json(out / "mle_meta.json", {
        "seed": seed, "N": N, "batch_size": bp.batch_size, "M": M, "outer": outer, "rule": rule,
        "omega_hat": omega_hat, "gd_step": gd_step, "alpha_reset": alpha_reset,
        "gd_step_source": "config" if "mle.gd_step" in cfg.values else "1/omega_hat",
        "u_true": u_true.tolist(), "u_mle": bp.mle().tolist(), "x0": u0.tolist(),
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# sketched denoising


def denoise_runs(problem: DenoisingProblem, fractions, kinds, scfg: SolverConfig, seed: int, replace: bool = False):
    """Sketched runs for each ``(kind, fraction)`` plus the exact Newton reference.

    Returns ``(reference_result, {(kind, frac): (d, result)})``.  Each cell
    uses its own stream.
    """
    ref = run(problem, ExactOracle(), scfg, rngmod.stream(seed, 0), seed=seed)
    cells = [(kind, frac) for kind in kinds for frac in fractions]

    def one(i):
        kind, frac = cells[i]
        if not 0 < frac <= 1:
            raise ConfigError(f"sketch fraction {frac} is outside (0, 1]")
        d = max(1, int(round(frac * problem.dim)))
        oracle = SketchedOracle(d, kind, replace if kind == "projection" else True)
        return d, run(problem, oracle, scfg, rngmod.stream(seed, 1, i), seed=seed)

    res = rngmod.map_trials(one, len(cells))
    return ref, dict(zip(cells, res))


def cmd_denoise(cfg: Config, seed=None, out=".") -> int:
    seed = _seed(cfg, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    img = load_denoise_image(cfg, seed)
    try:
        problem = DenoisingProblem(img, cfg.get("problem.alpha", 1.0))
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    scfg = build_solver_config(cfg, max_iter=cfg.get("solver.max_iter", 20_000))
    kinds = cfg.get("denoise.kinds", list(KINDS))
    for k in kinds:
        if k not in KINDS:
            raise ConfigError(f"unknown sketch kind {k!r}")
    fractions = cfg.get("denoise.fractions", [0.05, 0.1, 0.25, 0.5, 1.0])
    ref, cells = denoise_runs(problem, fractions, kinds, scfg, seed, cfg.get("denoise.replace", False))
    with open(out / "steps.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("kind", "frac", "d", "k", "step_norm", "trial_step_norm", "accepted", "singular"))
        for kind, frac, d, res in [("newton", 1.0, problem.dim, ref)] + [
                (k, f, d, r) for (k, f), (d, r) in cells.items()]:
            for rec in res.trace:
                taken = rec.step_norm if rec.successful else 0.0
                w.writerow([kind, repr(frac), d, rec.k, repr(float(taken)), repr(float(rec.step_norm)),
                            "1" if rec.successful else "0", "1" if rec.singular else "0"])
    summary = {"reference": {"K": ref.K, "terminated": ref.terminated, "f_final": ref.f_final}, "runs": []}
    censored = not ref.terminated
    for (kind, frac), (d, res) in cells.items():
        censored |= not res.terminated
        summary["runs"].append({"kind": kind, "frac": frac, "d": d, "K": res.K, "S": res.S, "I": res.I,
                                "singular": res.singular, "terminated": res.terminated,
                                "f_final": res.f_final, "grad_norm_final": res.grad_norm_final})
    summary["seed"] = seed
    _write_json(out / "denoise_summary.json", summary)
    m1, m2 = problem.shape
    images.write_pgm(out / "input.pgm", img)
    images.write_pgm(out / "denoised.pgm", ref.x_final.reshape(m1, m2))
    return EXIT_CENSORED if censored else EXIT_OK


# ---------------------------------------------------------------------------
# sketch-lemma bench


def sketchbench_rows(problem, fractions, kind, trials, eps, c, seed, replace=True, spread=1.0):
    """Per-draw diagnostics of one sketched step from a random ``y`` near the minimizer."""
    xbar = problem.known_min[0]
    n = problem.dim
    rows = []
    for i, frac in enumerate(fractions):
        if not 0 < frac <= 1:
            raise ConfigError(f"sketch fraction {frac} is outside (0, 1]")
        d = max(1, int(round(frac * n)))
        for t in range(trials):
            gen = rngmod.stream(seed, i, t)
            S = sample_sketch(kind, d, n, gen, replace=replace)
            y = xbar + spread * gen.standard_normal(n)
            H = problem.reference_hessian(y)
            try:
                diag = sketched_contraction_diagnostics(H, problem.subgrad, xbar, y, S, eps, c)
            except SingularOracleError:
                rows.append((frac, d, t, math.nan, False, False, False, math.nan))
                continue
            rows.append((frac, d, t, diag.ratio, diag.cond1, diag.cond2, diag.cond3, diag.bound))
    return rows


def cmd_sketchbench(cfg: Config, seed=None, out=".", fractions=None, kind=None, trials=None) -> int:
    seed = _seed(cfg, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if "problem.id" not in cfg.values:
        cfg.values["problem.id"] = "quadratic"
    problem, _ = build_problem(cfg, seed)
    if problem.known_min is None or problem.reference_hessian is None:
        raise ConfigError("sketchbench needs a problem with known minimizer and Hessian")
    fractions = fractions or cfg.get("bench.fractions", [0.05, 0.1, 0.25, 0.5, 1.0])
    kind = kind or cfg.get("bench.kind", "gaussian")
    if kind not in KINDS:
        raise ConfigError(f"unknown sketch kind {kind!r}")
    trials = trials or cfg.get("bench.trials", 100)
    rows = sketchbench_rows(problem, fractions, kind, trials, cfg.get("bench.eps", 0.5), cfg.get("bench.c", 0.0),
                            seed, cfg.get("bench.replace", True), cfg.get("bench.spread", 1.0))
    with open(out / "sketchbench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frac", "d", "trial", "ratio", "cond1", "cond2", "cond3", "bound"))
        for frac, d, t, ratio, c1, c2, c3, b in rows:
            w.writerow([repr(frac), d, t, repr(float(ratio)), int(c1), int(c2), int(c3), repr(float(b))])
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "montecarlo": cmd_montecarlo,
    "mle": cmd_mle,
    "denoise": cmd_denoise,
    "sketchbench": cmd_sketchbench,
}
