"""Stochastic Hessian oracles producing the step operator ``B`` of the solver.

Every oracle returns an :class:`OracleSample` whose ``action(g)`` is ``B g``,
realized as a solve against a stored matrix (``B`` itself is never formed).
Solver-facing wrappers (``ExactOracle``, ``NoisyOracle``, ...) share the
protocol::

    state = oracle.init_state()
    sample, state = oracle.sample(problem, x, rng, state)

with ``oracle.has_truth`` telling whether samples carry a truth flag.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import (ContractViolation, OracleFailureError, SingularOracleError,
                     UnsupportedDiagnosticError, UnsupportedProblemError)
from .sketch import SketchMatrix, sample_sketch

RCOND_MIN = 1e-14
MAX_SINGULAR_DRAWS = 100


@dataclass
class OracleSample:
    """One draw of the step operator with its diagnostics."""

    solve: Callable[[np.ndarray], np.ndarray]
    matrix: Optional[np.ndarray] = None
    noise_norm: Optional[float] = None
    sketch_id: Optional[int] = None
    reset: Optional[bool] = None
    skipped: Optional[bool] = None
    true_flag: Optional[bool] = None
    grad: Optional[np.ndarray] = None

    def action(self, g: np.ndarray) -> np.ndarray:
        return self.solve(np.asarray(g, dtype=float))


def factor(A: np.ndarray):
    """LU factorization with a reciprocal-condition screen.

    Returns a solve callable; raises :class:`SingularOracleError` when the
    1-norm reciprocal condition estimate falls below ``RCOND_MIN``.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise SingularOracleError("matrix has non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    anorm = np.linalg.norm(A, 1)
    if anorm == 0.0:
        raise SingularOracleError("zero matrix")
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < RCOND_MIN:
        raise SingularOracleError(f"matrix is numerically singular (rcond={rcond:.3g})")
    return lambda g: sla.lu_solve((lu, piv), g, check_finite=False)


def _hessian(problem, x) -> np.ndarray:
    if problem.reference_hessian is None:
        raise UnsupportedProblemError(f"problem {problem.name!r} has no reference Hessian")
    return np.asarray(problem.reference_hessian(np.asarray(x, float)), dtype=float)


# ---------------------------------------------------------------------------
# exact and noisy oracles


def exact_sample(problem, x) -> OracleSample:
    H = _hessian(problem, x)
    return OracleSample(factor(H), matrix=H, true_flag=True)


@dataclass(frozen=True)
class NoisyOracleConfig:
    """Diagonal covariance ``Sigma`` on vectorized ``n x n`` perturbations.

    ``variances`` holds the ``n*n`` diagonal entries of ``Sigma`` in
    row-major order of the perturbation matrix.
    """

    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float).ravel()
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ContractViolation("variances must be finite and nonnegative")
        n = math.isqrt(v.size)
        if n * n != v.size:
            raise ContractViolation("variance vector length must be a perfect square")
        object.__setattr__(self, "variances", v)

    @classmethod
    def isotropic(cls, n: int, s: float) -> "NoisyOracleConfig":
        """``Sigma = s^2 I`` on ``R^{n^2}``."""
        return cls(np.full(n * n, float(s) ** 2))

    @classmethod
    def diagonal(cls, variances) -> "NoisyOracleConfig":
        return cls(np.asarray(variances, float))

    @property
    def n(self) -> int:
        return math.isqrt(self.variances.size)

    @property
    def trace_sigma(self) -> float:
        return float(self.variances.sum())

    def draw(self, rng, size=None) -> np.ndarray:
        """Perturbation ``N`` with ``E ||N||_F^2 = n^2 tr(Sigma)``.

        The vectorization is scaled by ``n`` relative to a plain
        ``N(0, Sigma)`` draw; this is the normalization under which the
        Markov threshold ``n^{3/2} sqrt(tr Sigma)`` holds with probability
        at least ``1 - 1/n``.  ``size`` draws a stack of shape
        ``(size, n, n)``.
        """
        n = self.n
        scale = n * np.sqrt(self.variances)
        if size is None:
            return (scale * rng.standard_normal(n * n)).reshape(n, n)
        return (scale * rng.standard_normal((size, n * n))).reshape(size, n, n)

    def threshold(self) -> float:
        return self.n ** 1.5 * math.sqrt(self.trace_sigma)


def noisy_sample(problem, x, cfg: NoisyOracleConfig, rng) -> OracleSample:
    H = _hessian(problem, x)
    if cfg.n != H.shape[0]:
        raise ContractViolation(f"noise dimension {cfg.n} does not match problem dimension {H.shape[0]}")
    if cfg.trace_sigma == 0.0:
        sample = exact_sample(problem, x)
        sample.noise_norm = 0.0
        return sample
    for _ in range(MAX_SINGULAR_DRAWS):
        N = cfg.draw(rng)
        G = H + N
        try:
            solve = factor(G)
        except SingularOracleError:
            continue
        nn = float(np.linalg.norm(N))
        return OracleSample(solve, matrix=G, noise_norm=nn, true_flag=nn <= cfg.threshold())
    raise OracleFailureError(f"{MAX_SINGULAR_DRAWS} consecutive singular perturbed Hessians")


def noisy_truth_test(sample: OracleSample, n: int, trace_sigma: float) -> bool:
    if sample.noise_norm is None:
        raise UnsupportedDiagnosticError("sample carries no noise diagnostics")
    return bool(sample.noise_norm <= n ** 1.5 * math.sqrt(trace_sigma))


# ---------------------------------------------------------------------------
# sketched oracle


def sketched_sample(problem, x, S: SketchMatrix) -> OracleSample:
    """Step operator ``S^T (S H S^T)^{-1} S`` via a ``d x d`` solve."""
    H = _hessian(problem, x)
    if S.n != H.shape[0]:
        raise ContractViolation(f"sketch has {S.n} columns, problem dimension is {H.shape[0]}")
    inner_solve = factor(S.sandwich(H))

    def solve(g):
        return S.apply_t(inner_solve(S.apply(g)))

    return OracleSample(solve, sketch_id=S.ident)


# ---------------------------------------------------------------------------
# quasi-Newton


RULES = ("bfgs", "dfp", "broyden")


@dataclass(frozen=True)
class QuasiNewtonState:
    """Hessian approximation threaded through the reset-cycled iteration.

    ``H`` approximates the Hessian (not its inverse).  ``u_prev`` and
    ``g_prev`` hold the previous point and its batch gradient for the next
    secant pair.
    """

    H: np.ndarray
    M: int
    alpha_reset: float
    rule: str = "bfgs"
    k: int = 0
    u_prev: Optional[np.ndarray] = None
    g_prev: Optional[np.ndarray] = None
    skipped: bool = False

    def __post_init__(self):
        if self.M < 1:
            raise ContractViolation("M must be a positive integer")
        if not self.alpha_reset > 0:
            raise ContractViolation("alpha_reset must be positive")
        if self.rule not in RULES:
            raise ContractViolation(f"unknown update rule {self.rule!r}")

    @classmethod
    def initial(cls, dim: int, M: int, alpha_reset: float, rule: str = "bfgs") -> "QuasiNewtonState":
        return cls(alpha_reset * np.eye(dim), M, alpha_reset, rule)


def qn_update(state: QuasiNewtonState, s, y) -> QuasiNewtonState:
    """Apply the named secant update to ``state.H``.

    BFGS and DFP skip the update when ``y^T s <= 1e-10 ||y|| ||s||`` and
    set ``skipped``.
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
        raise ContractViolation("non-finite secant pair")
    ns = np.linalg.norm(s)
    if ns == 0.0:
        raise ContractViolation("step s must be nonzero")
    H = state.H
    ys = float(y @ s)
    if state.rule in ("bfgs", "dfp") and ys <= 1e-10 * np.linalg.norm(y) * ns:
        return replace(state, skipped=True)
    if state.rule == "bfgs":
        Hs = H @ s
        H_new = H - np.outer(Hs, Hs) / float(s @ Hs) + np.outer(y, y) / ys
    elif state.rule == "dfp":
        rho = 1.0 / ys
        L = np.eye(H.shape[0]) - rho * np.outer(y, s)
        H_new = L @ H @ L.T + rho * np.outer(y, y)
    else:
        H_new = H + np.outer(y - H @ s, s) / (ns * ns)
    if state.rule != "broyden":
        H_new = 0.5 * (H_new + H_new.T)
    return replace(state, H=H_new, skipped=False)


def qn_oracle_step(state: QuasiNewtonState, problem, u, grad_fn=None):
    """One reset-cycled quasi-Newton draw at ``u``.

    The batch index is ``k // M``.  On ``k % M == 0`` the approximation is
    reset to ``alpha_reset * I``; otherwise it is updated with the secant
    pair ``(u - u_prev, g(u) - g(u_prev))`` taken on the current batch.
    ``grad_fn(u, batch)`` defaults to the mini-batch gradient of a
    :class:`BatchMLEProblem`.
    """
    if state.k < 0:
        raise ContractViolation("iteration counter must be nonnegative")
    u = np.asarray(u, dtype=float)
    batch = state.k // state.M
    if grad_fn is None:
        g = problem.gradient(u, problem.batch_indices(batch))
    else:
        g = np.asarray(grad_fn(u, batch), dtype=float)
    reset = state.k % state.M == 0
    if reset:
        new = replace(state, H=state.alpha_reset * np.eye(u.size), skipped=False)
    else:
        s = u - state.u_prev
        if np.linalg.norm(s) == 0.0:
            new = replace(state, skipped=True)
        else:
            new = qn_update(state, s, g - state.g_prev)
    sample = OracleSample(factor(new.H), matrix=new.H, reset=reset, skipped=new.skipped, grad=g)
    return sample, replace(new, k=state.k + 1, u_prev=u.copy(), g_prev=g)


# ---------------------------------------------------------------------------
# solver-facing wrappers


class ExactOracle:
    kind = "exact"
    has_truth = True

    def init_state(self):
        return None

    def sample(self, problem, x, rng, state):
        return exact_sample(problem, x), state


@dataclass
class NoisyOracle:
    cfg: NoisyOracleConfig
    kind = "noisy"
    has_truth = True

    def init_state(self):
        return None

    def sample(self, problem, x, rng, state):
        return noisy_sample(problem, x, self.cfg, rng), state


@dataclass
class SketchedOracle:
    """Fresh sketch per iteration; ``dim`` is the embedded dimension ``d``."""

    dim: int
    sketch_kind: str = "gaussian"
    replace: bool = True
    kind = "sketched"
    has_truth = False

    def init_state(self):
        return None

    def sample(self, problem, x, rng, state):
        S = sample_sketch(self.sketch_kind, self.dim, problem.dim, rng, replace=self.replace)
        return sketched_sample(problem, x, S), state


@dataclass
class ScaledIdentityOracle:
    """``B = factor * I``; a fixed-step gradient method."""

    factor: float
    kind = "scaled"
    has_truth = False

    def init_state(self):
        return None

    def sample(self, problem, x, rng, state):
        t = float(self.factor)
        return OracleSample(lambda g: t * g), state


@dataclass
class QuasiNewtonOracle:
    """Reset-cycled quasi-Newton oracle.

    With ``batch_problem`` set, secant pairs use mini-batch gradients of
    block ``k // M``; otherwise they use the full ``problem.subgrad``.
    """

    M: int
    alpha_reset: float
    rule: str = "bfgs"
    batch_problem: object = None
    kind = "qn"
    has_truth = False

    def init_state(self):
        return None

    def sample(self, problem, x, rng, state):
        if state is None:
            state = QuasiNewtonState.initial(problem.dim, self.M, self.alpha_reset, self.rule)
        if self.batch_problem is not None:
            return qn_oracle_step(state, self.batch_problem, x)
        return qn_oracle_step(state, None, x, grad_fn=lambda u, _b: problem.subgrad(u))
