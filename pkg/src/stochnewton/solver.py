"""Backtracking stochastic Newton-type iteration.

The loop backtracks on the acceptance constant ``c``, never on the step
length::

    while ||g(x)|| >= eps:
        B ~ oracle(x)
        y = x - B g(x)
        if f(x) - f(y) >= c ||y - x||^2 and ||g(x)|| <= ||y - x|| / c:
            x = y
        else:
            c = alpha * c

Both tests weaken as ``c`` shrinks, so an iteration whose sampled operator
is a genuine Newton differential is eventually accepted.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolation, SingularOracleError, UnsupportedDiagnosticError


@dataclass(frozen=True)
class SolverConfig:
    c0: float = 1.0
    alpha: float = 0.5
    epsilon: float = 1e-6
    max_iter: int = 100_000
    record_trace: bool = True

    def __post_init__(self):
        if not self.c0 > 0:
            raise ContractViolation("c0 must be positive")
        if not 0 < self.alpha < 1:
            raise ContractViolation("alpha must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ContractViolation("epsilon must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ContractViolation("max_iter must be a positive integer")


@dataclass
class IterationRecord:
    k: int
    x: np.ndarray
    f_val: float
    grad_norm: float
    step_norm: float
    c_k: float
    successful: bool
    true_flag: Optional[bool] = None
    f_trial: float = math.nan
    in_domain: bool = True
    singular: bool = False


@dataclass
class RunResult:
    x_final: np.ndarray
    K: int
    terminated: bool
    S: int
    I: int
    T_S: Optional[int]
    T_I: Optional[int]
    f_final: float
    grad_norm_final: float
    trace: Optional[list] = None
    seed: Optional[int] = None
    excursions: int = 0
    singular: int = 0

    def summary(self) -> dict:
        return {
            "K": self.K,
            "terminated": self.terminated,
            "S": self.S,
            "I": self.I,
            "T_S": self.T_S,
            "T_I": self.T_I,
            "f_final": self.f_final,
            "grad_norm_final": self.grad_norm_final,
            "seed": self.seed,
        }


def newton_like_step(x, sample, g) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if x.shape != g.shape:
        raise ContractViolation("x and g must have the same shape")
    return x - sample.action(g)


def accept_step(f_x: float, f_y: float, grad_norm: float, step_norm: float, c_k: float) -> bool:
    """Both acceptance tests; ties accept.

    >>> accept_step(1.0, 0.0, 2.0, 1.0, 0.4)
    True
    """
    if not c_k > 0:
        raise ContractViolation("c_k must be positive")
    if step_norm < 0 or grad_norm < 0:
        raise ContractViolation("norms must be nonnegative")
    if not all(map(math.isfinite, (f_x, grad_norm, step_norm))):
        return False
    if not math.isfinite(f_y):
        return False
    if step_norm == 0.0 and grad_norm > 0.0:
        return False
    return (f_x - f_y >= c_k * step_norm * step_norm) and (grad_norm <= step_norm / c_k)


def run(problem, oracle, cfg: SolverConfig, rng, x0=None, seed=None) -> RunResult:
    """Run the backtracking iteration from ``x0`` (default ``problem.x0``).

    A singular oracle draw counts as an unsuccessful iteration, as does any
    iteration after ``c`` has underflowed to zero.  Hitting ``cfg.max_iter``
    returns ``terminated=False`` instead of raising.
    """
    x = np.array(problem.x0 if x0 is None else x0, dtype=float)
    if x.shape != (problem.dim,):
        raise ContractViolation(f"starting point must have length {problem.dim}")
    c = float(cfg.c0)
    state = oracle.init_state()
    truth = bool(getattr(oracle, "has_truth", False))
    trace = [] if cfg.record_trace else None
    S = I = T_S = T_I = 0
    excursions = singular = 0
    fx = problem.f(x)
    K = 0
    while True:
        g = problem.subgrad(x)
        gn = float(np.linalg.norm(g))
        if gn < cfg.epsilon:
            terminated = True
            break
        if K >= cfg.max_iter:
            terminated = False
            break
        inside = problem.in_domain(x)
        excursions += not inside
        flag = None
        try:
            sample, state = oracle.sample(problem, x, rng, state)
            y = newton_like_step(x, sample, g)
            fy = problem.f(y)
            step = float(np.linalg.norm(y - x))
            # c underflows to 0.0 after ~1075 halvings; treat that as a rejection
            ok = c > 0.0 and accept_step(fx, fy, gn, step, c)
            flag = sample.true_flag if truth else None
            bad = False
        except SingularOracleError:
            fy, step, ok, bad = math.nan, math.nan, False, True
            singular += 1
        if trace is not None:
            trace.append(IterationRecord(K, x.copy(), fx, gn, step, c, ok, flag, fy, inside, bad))
        if ok:
            S += 1
            T_S += flag is True
            x, fx = y, fy
        else:
            I += 1
            T_I += flag is True
            c *= cfg.alpha
        K += 1
    return RunResult(
        x_final=x, K=K, terminated=terminated, S=S, I=I,
        T_S=T_S if truth else None, T_I=T_I if truth else None,
        f_final=float(fx), grad_norm_final=gn, trace=trace, seed=seed,
        excursions=excursions, singular=singular,
    )


@dataclass(frozen=True)
class Taxonomy:
    S: int
    I: int
    T_S: Optional[int]
    T_I: Optional[int]
    truth_rate: Optional[float]
    predicted_cap: Optional[float] = None


def unsuccessful_cap(rho: float, c0: float, alpha: float) -> float:
    """``log(rho / c0) / log(alpha)``: unsuccessful iterations needed to bring ``c`` below ``rho``."""
    return math.log(rho / c0) / math.log(alpha)


def classify_run(result: RunResult, rho=None, c0=None, alpha=None) -> Taxonomy:
    if result.trace is None:
        raise UnsupportedDiagnosticError("run was recorded without a trace")
    flags = [r.true_flag for r in result.trace]
    have_truth = result.T_S is not None
    rate = None
    if have_truth and flags:
        rate = sum(1 for f in flags if f) / len(flags)
    cap = None
    if rho is not None and c0 is not None and alpha is not None:
        cap = unsuccessful_cap(rho, c0, alpha)
    return Taxonomy(result.S, result.I, result.T_S, result.T_I, rate, cap)


TRACE_HEADER = ("k", "f", "grad_norm", "step_norm", "c_k", "successful", "true_flag")


def _bool(v):
    return "" if v is None else ("1" if v else "0")


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace:
            w.writerow([r.k, repr(float(r.f_val)), repr(r.grad_norm), repr(r.step_norm),
                        repr(r.c_k), _bool(r.successful), _bool(r.true_flag)])


def write_summary_json(path, result: RunResult, extra: Optional[dict] = None) -> None:
    doc = result.summary()
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
