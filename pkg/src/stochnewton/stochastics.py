"""Iteration-complexity bounds and their Monte Carlo validation.

Closed-form evaluators are pure functions of their arguments.  Simulators
draw from per-block random streams keyed by ``(master_seed, tag, block)``,
with a fixed block size, so results do not depend on thread scheduling.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ContractViolation, UndefinedBoundError, ValidationAbortedError

BLOCK = 1000
CENSOR_LIMIT = 1e-3


# ---------------------------------------------------------------------------
# reports


@dataclass
class BoundReport:
    """Closed-form bound next to its Monte Carlo estimate.

    ``kind`` is ``"upper"`` (empirical must not exceed the bound) or
    ``"lower"`` (empirical must not fall below it).  ``satisfied`` is
    ``None`` when no bound is asserted or the check was skipped.
    """

    name: str
    bound: Optional[float]
    empirical: float
    trials: int
    se: float
    satisfied: Optional[bool]
    params: dict = field(default_factory=dict)
    kind: str = "upper"

    def to_json(self) -> dict:
        params = dict(self.params)
        params["name"] = self.name
        params["kind"] = self.kind
        return {
            "bound": self.bound,
            "empirical": self.empirical,
            "trials": self.trials,
            "se": self.se,
            "satisfied": self.satisfied,
            "params": params,
        }


def proportion_report(name, hits: int, trials: int, bound, params=None, kind="upper", slack_se=3.0) -> BoundReport:
    """Frequency report; satisfied when within ``slack_se`` standard errors of the bound."""
    p = hits / trials
    se = math.sqrt(p * (1.0 - p) / trials)
    if bound is None:
        ok = None
    elif kind == "upper":
        ok = p <= bound + slack_se * se
    else:
        ok = p >= bound - slack_se * se
    return BoundReport(name, None if bound is None else float(bound), p, trials, se, ok, dict(params or {}), kind)


def mean_report(name, values, bound, params=None, kind="upper", slack_se=0.0) -> BoundReport:
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    if kind == "upper":
        ok = m <= bound + slack_se * se
    else:
        ok = m >= bound - slack_se * se
    return BoundReport(name, float(bound), m, int(v.size), se, bool(ok), dict(params or {}), kind)


# ---------------------------------------------------------------------------
# closed-form bounds


def _check_gamma(gamma):
    if not 0 < gamma < 1:
        raise ContractViolation(f"gamma must lie in (0, 1), got {gamma}")


def chernoff_stopping_tail(gamma: float, E: float) -> float:
    """``exp(-gamma^2 E)``; tail of ``(1-gamma) K >= 2 S^K + gamma (1-gamma^2) E``."""
    _check_gamma(gamma)
    if not E > 0:
        raise ContractViolation("E must be positive")
    return math.exp(-gamma * gamma * E)


def chernoff_fixed_n_tail(n: int, delta: float, gamma: float) -> float:
    """``exp(-n (1-delta) gamma^2 / 2)``; tail of ``sum T <= (1-gamma) E sum T``."""
    _check_gamma(gamma)
    if int(n) != n or n < 1:
        raise ContractViolation("n must be a positive integer")
    if not 0 <= delta <= 0.5:
        raise ContractViolation("delta must lie in [0, 1/2]")
    return math.exp(-n * (1.0 - delta) * gamma * gamma / 2.0)


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ContractViolation(f"{k} must be positive and finite, got {v}")


def _log_term(rho, c0, alpha):
    if not 0 < alpha < 1:
        raise ContractViolation("alpha must lie in (0, 1)")
    raw = math.log(rho / c0) / math.log(alpha)
    return max(raw, 0.0), raw < 0


def complexity_bracket(delta_f, rho, tau, epsilon, c0, alpha):
    """``(delta_f / (rho (tau eps)^2) + max(0, log(rho/c0)/log(alpha)), clamped)``."""
    if delta_f < 0:
        raise ContractViolation("delta_f must be nonnegative")
    _positive(rho=rho, tau=tau, epsilon=epsilon, c0=c0)
    lt, clamped = _log_term(rho, c0, alpha)
    return delta_f / (rho * (tau * epsilon) ** 2) + lt, clamped


def _check_delta(delta):
    if not 0 <= delta < 1:
        raise ContractViolation("delta must lie in [0, 1)")


def expected_K_bound(delta_f, rho, tau, epsilon, c0, alpha, delta) -> float:
    """Upper bound on the expected stopping time.

    The backtracking term is clamped at zero when ``c0 < rho``; use
    :func:`complexity_bracket` to see whether the clamp was active.
    """
    _check_delta(delta)
    B, _ = complexity_bracket(delta_f, rho, tau, epsilon, c0, alpha)
    return B / (1.0 - delta)


def K_tail_bound(delta_f, rho, tau, epsilon, c0, alpha, delta, gamma):
    """``(threshold, tail)`` with ``P(K >= threshold) <= tail``."""
    _check_delta(delta)
    _check_gamma(gamma)
    B, _ = complexity_bracket(delta_f, rho, tau, epsilon, c0, alpha)
    mult = (2.0 + gamma * (1.0 - gamma * gamma)) / ((1.0 - gamma) * (1.0 - delta))
    return mult * B, math.exp(-gamma * gamma * B / (1.0 - delta))


def residual_tail_bound(delta_f, rho, tau, c0, alpha, delta, K, gamma):
    """``(threshold, tail)`` bounding ``P(min_{k<K} ||g(x^k)|| >= threshold)``."""
    _check_delta(delta)
    _check_gamma(gamma)
    if delta_f < 0:
        raise ContractViolation("delta_f must be nonnegative")
    _positive(rho=rho, tau=tau, c0=c0)
    if int(K) != K or K < 1:
        raise ContractViolation("K must be a positive integer")
    lt, _ = _log_term(rho, c0, alpha)
    denom = (1.0 - gamma) * K - lt
    if denom <= 0:
        raise UndefinedBoundError(f"(1-gamma)K - log-term = {denom:.4g} is not positive; increase K")
    return math.sqrt(delta_f / (rho * tau * tau * denom)), math.exp(-K * (1.0 - delta) * gamma * gamma / 2.0)


def noisy_expected_K_bound(delta_f, c, omega, epsilon, c0, alpha, n) -> float:
    """Expected stopping time bound for the Gaussian-noise oracle in dimension ``n``."""
    if not 0 <= c < 1:
        raise ContractViolation("c must lie in [0, 1)")
    if int(n) != n or n < 2:
        raise ContractViolation("n must be an integer >= 2")
    _positive(omega=omega)
    return expected_K_bound(delta_f, 0.5 * (1.0 - c), 1.0 / omega, epsilon, c0, alpha, 1.0 / n)


# ---------------------------------------------------------------------------
# Bernoulli processes and hitting times


@dataclass(frozen=True)
class BernoulliProcessSpec:
    p_success: float
    horizon: int = 100_000

    def __post_init__(self):
        if not 0.5 <= self.p_success <= 1.0:
            raise ContractViolation("p_success must lie in [1/2, 1]")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ContractViolation("horizon must be a positive integer")


@dataclass(frozen=True)
class HittingSample:
    K: int
    S: int
    censored: bool


def _hitting_times(p, threshold, horizon, gen, count):
    """Vectorized hitting times for ``count`` independent processes."""
    K = np.zeros(count, dtype=np.int64)
    S = np.zeros(count, dtype=np.int64)
    censored = np.zeros(count, dtype=bool)
    if threshold <= 0:
        return K, S, censored
    need = int(math.ceil(threshold))
    chunk = max(16, int(math.ceil(1.25 * need / p)) + 8)
    active = np.arange(count)
    sums = np.zeros(count, dtype=np.int64)
    drawn = 0
    while active.size and drawn < horizon:
        width = min(chunk, horizon - drawn)
        T = gen.random((active.size, width)) < p
        cs = sums[active, None] + np.cumsum(T, axis=1)
        hit = cs >= threshold
        done = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        idx = active[done]
        K[idx] = drawn + first[done] + 1
        S[idx] = cs[done, first[done]]
        sums[active] = cs[:, -1]
        active = active[~done]
        drawn += width
    K[active] = horizon
    S[active] = sums[active]
    censored[active] = True
    return K, S, censored


def simulate_hitting_time(spec: BernoulliProcessSpec, threshold: float, rng) -> HittingSample:
    """First ``n`` with ``T^0 + ... + T^{n-1} >= threshold``; capped at ``spec.horizon``."""
    if threshold < 0:
        raise ContractViolation("threshold must be nonnegative")
    K, S, c = _hitting_times(spec.p_success, threshold, spec.horizon, rngmod.as_generator(rng), 1)
    return HittingSample(int(K[0]), int(S[0]), bool(c[0]))


@dataclass
class StoppingEnsemble:
    K: np.ndarray
    S: np.ndarray
    censored: np.ndarray
    p_success: float
    threshold: float

    @property
    def trials(self) -> int:
        return int(self.K.size)

    @property
    def censored_count(self) -> int:
        return int(self.censored.sum())


def _blocks(trials):
    return [(b, min(BLOCK, trials - b * BLOCK)) for b in range(-(-trials // BLOCK))]


def simulate_stopping_ensemble(spec: BernoulliProcessSpec, threshold: float, trials: int, seed: int,
                               tag: int = 0, workers=None) -> StoppingEnsemble:
    if trials < 1:
        raise ContractViolation("trials must be positive")
    if threshold < 0:
        raise ContractViolation("threshold must be nonnegative")
    blocks = _blocks(trials)

    def one(i):
        b, size = blocks[i]
        return _hitting_times(spec.p_success, threshold, spec.horizon, rngmod.stream(seed, tag, b), size)

    parts = rngmod.map_trials(one, len(blocks), workers)
    K = np.concatenate([p[0] for p in parts])
    S = np.concatenate([p[1] for p in parts])
    C = np.concatenate([p[2] for p in parts])
    return StoppingEnsemble(K, S, C, spec.p_success, threshold)


def master_seed(rng) -> int:
    """Integer seed from a seed or a generator (drawing one value from it)."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63 - 1))
    return int(rng)


def validate_stopping_chernoff(spec: BernoulliProcessSpec, threshold, gamma, E=None, trials=10_000, rng=0,
                               pilot_trials=None, ensemble: Optional[StoppingEnsemble] = None) -> BoundReport:
    """Frequency of ``(1-gamma) K >= 2 S^K + gamma (1-gamma^2) E`` against ``exp(-gamma^2 E)``.

    With ``E=None`` the expected stopping time is estimated from an
    independent pilot ensemble (stream tag 1) and the event is evaluated
    on the main ensemble (tag 0).
    """
    if trials < 1000 and ensemble is None:
        warnings.warn(f"only {trials} trials; standard errors will be large", stacklevel=2)
    seed = master_seed(rng)
    params = {"p_success": spec.p_success, "threshold": threshold, "gamma": gamma}
    if E is None:
        pilot = simulate_stopping_ensemble(spec, threshold, pilot_trials or trials, seed, tag=1)
        E = float(pilot.K.mean())
        params.update(E_source="pilot", E_se=float(pilot.K.std(ddof=1) / math.sqrt(pilot.trials)))
    else:
        params["E_source"] = "given"
    params["E"] = float(E)
    ens = ensemble if ensemble is not None else simulate_stopping_ensemble(spec, threshold, trials, seed, tag=0)
    bound = chernoff_stopping_tail(gamma, E)
    event = (1.0 - gamma) * ens.K >= 2.0 * ens.S + gamma * (1.0 - gamma * gamma) * E
    rep = proportion_report("stopping_chernoff", int(event.sum()), ens.trials, bound, params)
    return _censor(rep, ens)


def _censor(rep: BoundReport, ens: StoppingEnsemble) -> BoundReport:
    rep.params["censored"] = ens.censored_count
    if ens.censored_count > CENSOR_LIMIT * ens.trials:
        rep.params["skipped"] = "censored"
        rep.satisfied = False
    return rep


def validate_expectation_of_sums(ens: StoppingEnsemble) -> BoundReport:
    """``E S^K >= p E K``, checked with three standard errors of ``S^K - p K``."""
    d = ens.S - ens.p_success * ens.K
    se = float(d.std(ddof=1) / math.sqrt(ens.trials))
    lhs = float(ens.S.mean())
    rhs = ens.p_success * float(ens.K.mean())
    rep = BoundReport("expectation_of_sums", rhs, lhs, ens.trials, se, bool(lhs >= rhs - 3.0 * se),
                      {"p_success": ens.p_success, "threshold": ens.threshold, "mean_K": float(ens.K.mean())},
                      kind="lower")
    return _censor(rep, ens)


def supermartingale_check(ens: StoppingEnsemble, gamma: float, E: float) -> BoundReport:
    """Stopped value of ``Phi^N = (1+g)^{N - S^N} (1-g)^{S^N} Phi^0`` against ``Phi^0``.

    The report is in units of ``Phi^0`` (bound 1).
    """
    _check_gamma(gamma)
    ratio = np.exp((ens.K - ens.S) * math.log1p(gamma) + ens.S * math.log1p(-gamma))
    rep = mean_report("supermartingale", ratio, 1.0, {"gamma": gamma, "E": E, "phi0": math.exp(-gamma * gamma * E)},
                      slack_se=3.0)
    return _censor(rep, ens)


def validate_fixed_n_chernoff(n: int, delta: float, gamma: float, trials: int, rng=0, workers=None) -> BoundReport:
    """``P(sum_{k<n} T^k <= (1-gamma) n (1-delta))`` for i.i.d. ``Bernoulli(1-delta)``."""
    bound = chernoff_fixed_n_tail(n, delta, gamma)
    seed = master_seed(rng)
    p = 1.0 - delta
    blocks = _blocks(trials)

    def one(i):
        b, size = blocks[i]
        T = rngmod.stream(seed, 2, b).random((size, n)) < p
        return int(np.count_nonzero(T.sum(axis=1) <= (1.0 - gamma) * n * p))

    hits = sum(rngmod.map_trials(one, len(blocks), workers))
    return proportion_report("fixed_n_chernoff", hits, trials, bound, {"n": n, "delta": delta, "gamma": gamma})


# ---------------------------------------------------------------------------
# solver ensembles


@dataclass
class SolverEnsemble:
    results: list
    seed: int

    @property
    def K(self) -> np.ndarray:
        return np.array([r.K for r in self.results])

    def rows(self):
        for i, r in enumerate(self.results):
            yield (i, r.K, r.S, r.I, r.T_S, r.T_I)


def run_solver_ensemble(problem, oracle, cfg, trials: int, seed: int, workers=None, x0_sampler=None) -> SolverEnsemble:
    """``trials`` independent runs; trial ``i`` uses stream ``(seed, i)``.

    ``x0_sampler(gen)`` optionally draws the starting point from the trial
    stream before the run starts.
    """
    from .solver import run

    def one(i):
        gen = rngmod.stream(seed, i)
        x0 = None if x0_sampler is None else x0_sampler(gen)
        return run(problem, oracle, cfg, gen, x0=x0, seed=seed)

    return SolverEnsemble(rngmod.map_trials(one, trials, workers), seed)


def validate_solver_bounds(problem, oracle, cfg, trials: int, rng=0, *, c_hat: float = 0.0,
                           omega: Optional[float] = None, delta: float = 0.0,
                           gammas: Sequence[float] = (0.3, 0.5), ensemble: Optional[SolverEnsemble] = None,
                           workers=None) -> list:
    """Expectation, tail, residual and truth-rate reports for a solver ensemble.

    Constants follow the sufficient-decrease convention ``rho = (1 - c_hat)/2``
    and ``tau = 1/omega``; ``omega`` defaults to the largest reference-Hessian
    norm seen along the trajectories.  ``delta`` is the oracle's falsity
    probability (``1/n`` for the noisy oracle, ``0`` for the exact one).
    The worst observed decrease ratio is reported as ``rho_measured``.
    """
    if problem.known_min is None or problem.reference_hessian is None:
        raise ContractViolation("validation needs a known minimizer and a reference Hessian")
    if not getattr(oracle, "has_truth", False):
        raise ContractViolation("validation needs an oracle with truth diagnostics")
    if not cfg.record_trace:
        raise ContractViolation("validation needs recorded traces")
    seed = master_seed(rng)
    ens = ensemble if ensemble is not None else run_solver_ensemble(problem, oracle, cfg, trials, seed, workers)
    res = ens.results
    n_runs = len(res)
    open_runs = sum(not r.terminated for r in res)
    if open_runs > CENSOR_LIMIT * n_runs:
        raise ValidationAbortedError(f"{open_runs} of {n_runs} runs hit max_iter")

    x0 = np.asarray(res[0].trace[0].x if res[0].trace else problem.x0)
    delta_f = problem.f(x0) - problem.known_min[1]
    if omega is None:
        omega = 0.0
        for r in res:
            for rec in r.trace:
                omega = max(omega, float(np.linalg.norm(problem.reference_hessian(rec.x), 2)))
    rho = 0.5 * (1.0 - c_hat)
    tau = 1.0 / omega
    ratios = [(rec.f_val - rec.f_trial) / rec.step_norm ** 2
              for r in res for rec in r.trace if rec.successful and rec.step_norm > 0]
    base = {
        "rho": rho, "tau": tau, "omega": omega, "c_hat": c_hat, "delta": delta, "delta_f": delta_f,
        "c0": cfg.c0, "alpha": cfg.alpha, "epsilon": cfg.epsilon,
        "rho_measured": float(min(ratios)) if ratios else None,
        "non_terminated": open_runs,
    }
    _, clamped = complexity_bracket(delta_f, rho, tau, cfg.epsilon, cfg.c0, cfg.alpha)
    base["log_term_clamped"] = clamped
    K = ens.K.astype(float)
    reports = []
    eb = expected_K_bound(delta_f, rho, tau, cfg.epsilon, cfg.c0, cfg.alpha, delta)
    rep = mean_report("expected_K", K, eb, dict(base))
    rep.params["ratio"] = rep.empirical / eb if eb > 0 else None
    reports.append(rep)
    for g in gammas:
        thr, tail = K_tail_bound(delta_f, rho, tau, cfg.epsilon, cfg.c0, cfg.alpha, delta, g)
        hits = int(np.count_nonzero(K >= thr))
        reports.append(proportion_report("K_tail", hits, n_runs, tail, dict(base, gamma=g, threshold=thr)))

    Kmed = max(1, int(np.median(K)))
    for g in gammas:
        params = dict(base, gamma=g, K=Kmed)
        try:
            thr, tail = residual_tail_bound(delta_f, rho, tau, cfg.c0, cfg.alpha, delta, Kmed, g)
        except UndefinedBoundError as exc:
            reports.append(BoundReport("residual_tail", None, math.nan, n_runs, 0.0, None,
                                       dict(params, skipped="undefined", reason=str(exc))))
            continue
        hits = 0
        for r in res:
            mins = [rec.grad_norm for rec in r.trace[:Kmed]]
            if r.K < Kmed:
                mins.append(r.grad_norm_final)
            hits += min(mins) >= thr
        reports.append(proportion_report("residual_tail", hits, n_runs, tail, dict(params, threshold=thr)))

    flags = [rec.true_flag for r in res for rec in r.trace if rec.true_flag is not None]
    if flags:
        reports.append(proportion_report("truth_rate", int(sum(flags)), len(flags), 1.0 - delta, dict(base),
                                         kind="lower"))
    return reports


def write_ensemble_csv(path, ens: SolverEnsemble) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("trial", "K", "S", "I", "T_S", "T_I"))
        for row in ens.rows():
            w.writerow(["" if v is None else v for v in row])
