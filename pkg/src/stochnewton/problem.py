"""Objective problems, min-norm subgradient selection and regularity estimates.

A problem bundles an objective ``f``, a single-valued subgradient selection
``subgrad`` (the minimal-norm element of the subdifferential), and optionally
a reference Hessian, a membership test for the Newton differential and the
known minimizer.  Concrete problems:

``denoise``      quadratic image denoising ``n(x) + alpha * d(x)``
``abs-quad-1d``  ``|x| + x**2 / 2``
``abs-quad-nd``  ``weight * ||x||_1 + curvature/2 * ||x - shift||^2``
``quadratic``    ``1/2 (x - xbar)^T A (x - xbar)`` with SPD ``A``
``relu-quad``    ``1/2 ||x - shift||^2 + beta/2 ||max(x, 0)||^2`` (semismooth gradient)
``gauss-mle``    Gaussian location/log-scale negative log-likelihood
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractViolation, InvalidSetError, UnsupportedProblemError

Box = tuple[np.ndarray, np.ndarray]


def _vec(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != dim:
        raise ContractViolation(f"expected a vector of length {dim}, got shape {x.shape}")
    return x


class ObjectiveProblem:
    """Evaluation bundle for the solver and the oracles.

    Subclasses implement ``f`` and ``subgrad``.  ``reference_hessian`` and
    ``differential_membership`` are ``None`` unless the subclass provides
    them as methods.
    """

    name = "problem"
    reference_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    differential_membership: Optional[Callable[[np.ndarray, np.ndarray, float], bool]] = None

    def __init__(self, dim: int, domain: Optional[Box] = None,
                 known_min: Optional[tuple[np.ndarray, float]] = None,
                 x0: Optional[np.ndarray] = None):
        if dim < 1:
            raise ContractViolation("dimension must be positive")
        self.dim = int(dim)
        if domain is None:
            domain = (np.full(dim, -np.inf), np.full(dim, np.inf))
        self.domain = (np.asarray(domain[0], float), np.asarray(domain[1], float))
        self.known_min = known_min
        self.x0 = np.zeros(dim) if x0 is None else np.asarray(x0, float).copy()

    def f(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def subgrad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def in_domain(self, x: np.ndarray) -> bool:
        lo, hi = self.domain
        return bool(np.all(x >= lo) and np.all(x <= hi))


def eval_objective(problem: ObjectiveProblem, x) -> float:
    return float(problem.f(_vec(x, problem.dim)))


def eval_subgradient(problem: ObjectiveProblem, x) -> np.ndarray:
    """Minimal-norm element of the subdifferential at ``x`` (the gradient if smooth)."""
    return np.asarray(problem.subgrad(_vec(x, problem.dim)), dtype=float)


def min_norm_in_box(lo, hi) -> np.ndarray:
    """Euclidean projection of the origin onto the box ``[lo, hi]``.

    >>> min_norm_in_box([-2.0, 1.0], [-1.0, 3.0])
    array([-1.,  1.])
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape:
        raise ContractViolation("box bounds must have equal shapes")
    if np.any(lo > hi):
        raise InvalidSetError("lower bound exceeds upper bound")
    return np.clip(0.0, lo, hi)


# ---------------------------------------------------------------------------
# denoising


def _difference_operator(m1: int, m2: int):
    """Sparse-free construction of the central-difference stencil as index pairs.

    Returns ``(plus, minus)`` index arrays for the horizontal and vertical
    differences over interior pixels, in row-major flattening.
    """
    ii, jj = np.meshgrid(np.arange(1, m1 - 1), np.arange(1, m2 - 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    flat = lambda i, j: i * m2 + j
    h = (flat(ii, jj + 1), flat(ii, jj - 1))
    v = (flat(ii + 1, jj), flat(ii - 1, jj))
    return h, v


class DenoisingProblem(ObjectiveProblem):
    """``n(x) + alpha * ||x - o||_F^2`` on ``m1 x m2`` images.

    ``n(x)`` sums squared centered differences over interior pixels
    ``i = 1..m1-2``, ``j = 1..m2-2`` (0-based); boundary pixels carry no
    smoothness term.  The Hessian is the constant matrix
    ``2 D^T D + 2 alpha I``.
    """

    name = "denoise"

    def __init__(self, original, alpha: float = 1.0, x0=None):
        original = np.asarray(original, dtype=float)
        if original.ndim != 2:
            raise ContractViolation("original image must be a 2-d array")
        if not alpha > 0:
            raise ContractViolation("alpha must be positive")
        self.original = original
        self.alpha = float(alpha)
        self.shape = original.shape
        m1, m2 = self.shape
        n = m1 * m2
        self._h, self._v = _difference_operator(m1, m2)
        self._hessian = self._build_hessian()
        xbar = np.linalg.solve(self._hessian, 2.0 * self.alpha * original.ravel())
        super().__init__(
            n,
            domain=(np.full(n, -1.0), np.full(n, 2.0)),
            x0=original.ravel() if x0 is None else x0,
        )
        self.known_min = (xbar, self.f(xbar))

    def _build_hessian(self) -> np.ndarray:
        n = self.original.size
        D = np.zeros((2 * len(self._h[0]), n))
        rows = np.arange(len(self._h[0]))
        for offset, (plus, minus) in enumerate((self._h, self._v)):
            r = rows + offset * len(rows)
            D[r, plus] += 1.0
            D[r, minus] -= 1.0
        return 2.0 * D.T @ D + 2.0 * self.alpha * np.eye(n)

    def smoothness(self, x: np.ndarray) -> float:
        x = x.reshape(self.shape)
        dh = x[1:-1, 2:] - x[1:-1, :-2]
        dv = x[2:, 1:-1] - x[:-2, 1:-1]
        return float(np.sum(dh * dh) + np.sum(dv * dv))

    def distance(self, x: np.ndarray) -> float:
        r = x.reshape(self.shape) - self.original
        return float(np.sum(r * r))

    def f(self, x):
        return self.smoothness(x) + self.alpha * self.distance(x)

    def subgrad(self, x):
        x = x.reshape(self.shape)
        g = 2.0 * self.alpha * (x - self.original)
        dh = 2.0 * (x[1:-1, 2:] - x[1:-1, :-2])
        dv = 2.0 * (x[2:, 1:-1] - x[:-2, 1:-1])
        g[1:-1, 2:] += dh
        g[1:-1, :-2] -= dh
        g[2:, 1:-1] += dv
        g[:-2, 1:-1] -= dv
        return g.ravel()

    def reference_hessian(self, x):
        return self._hessian

    def differential_membership(self, x, H, tol=1e-8):
        return bool(np.max(np.abs(np.asarray(H) - self._hessian)) <= tol)


# ---------------------------------------------------------------------------
# separable nonsmooth and semismooth test problems


class AbsQuadProblem(ObjectiveProblem):
    """``weight * ||x||_1 + curvature/2 * ||x - shift||^2``.

    The subdifferential is a box in every coordinate, so the minimal-norm
    selection is exact.  ``curvature = 0`` gives the plain absolute value.
    """

    name = "abs-quad-nd"

    def __init__(self, dim=1, weight=1.0, curvature=1.0, shift=0.0, x0=None, bound=10.0):
        shift = np.broadcast_to(np.asarray(shift, float), (dim,)).copy()
        if weight < 0 or curvature < 0:
            raise ContractViolation("weight and curvature must be nonnegative")
        self.weight = float(weight)
        self.curvature = float(curvature)
        self.shift = shift
        super().__init__(dim, domain=(np.full(dim, -bound), np.full(dim, bound)), x0=x0)
        if curvature > 0:
            xbar = np.sign(shift) * np.maximum(np.abs(shift) - weight / curvature, 0.0)
        else:
            xbar = np.zeros(dim)
        self.known_min = (xbar, self.f(xbar))
        if dim == 1 and self.shift[0] == 0.0:
            self.name = "abs-quad-1d"

    def f(self, x):
        r = x - self.shift
        return float(self.weight * np.sum(np.abs(x)) + 0.5 * self.curvature * np.dot(r, r))

    def subdifferential_box(self, x) -> Box:
        base = self.curvature * (x - self.shift)
        s = np.sign(x)
        lo = base + self.weight * np.where(x == 0, -1.0, s)
        hi = base + self.weight * np.where(x == 0, 1.0, s)
        return lo, hi

    def subgrad(self, x):
        return min_norm_in_box(*self.subdifferential_box(x))

    def reference_hessian(self, x):
        return self.curvature * np.eye(self.dim)

    def differential_membership(self, x, H, tol=1e-8):
        return bool(np.max(np.abs(np.asarray(H) - self.curvature * np.eye(self.dim))) <= tol)


class QuadraticProblem(ObjectiveProblem):
    """``1/2 (x - xbar)^T A (x - xbar)`` with symmetric positive definite ``A``."""

    name = "quadratic"

    def __init__(self, A, xbar=None, x0=None, bound=100.0):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractViolation("A must be square")
        if not np.allclose(A, A.T):
            raise ContractViolation("A must be symmetric")
        dim = A.shape[0]
        self.A = 0.5 * (A + A.T)
        self.xbar = np.zeros(dim) if xbar is None else np.asarray(xbar, float)
        super().__init__(dim, domain=(np.full(dim, -bound), np.full(dim, bound)),
                         known_min=(self.xbar.copy(), 0.0), x0=x0)

    @classmethod
    def from_spectrum(cls, eigenvalues, rng=None, xbar=None, x0=None):
        """Random rotation ``Q diag(eigenvalues) Q^T``; identity rotation when ``rng`` is None."""
        lam = np.asarray(eigenvalues, dtype=float)
        if np.any(lam <= 0):
            raise ContractViolation("eigenvalues must be positive")
        if rng is None:
            Q = np.eye(lam.size)
        else:
            Q, _ = np.linalg.qr(rng.standard_normal((lam.size, lam.size)))
        return cls((Q * lam) @ Q.T, xbar=xbar, x0=x0)

    def f(self, x):
        r = x - self.xbar
        return float(0.5 * r @ self.A @ r)

    def subgrad(self, x):
        return self.A @ (x - self.xbar)

    def reference_hessian(self, x):
        return self.A

    def differential_membership(self, x, H, tol=1e-8):
        return bool(np.max(np.abs(np.asarray(H) - self.A)) <= tol)


class ReluQuadProblem(ObjectiveProblem):
    """``1/2 ||x - shift||^2 + beta/2 ||max(x, 0)||^2``.

    The gradient ``x - shift + beta * max(x, 0)`` is piecewise linear; its
    Newton differential is ``diag(1 + beta * [x > 0])`` with any value in
    ``[1, 1 + beta]`` allowed on coordinates where ``x_i = 0``.  The constant
    of Newton differentiability is ``beta``.
    """

    name = "relu-quad"

    def __init__(self, dim=1, beta=0.5, shift=0.0, x0=None, bound=3.0):
        if beta < 0:
            raise ContractViolation("beta must be nonnegative")
        self.beta = float(beta)
        self.shift = np.broadcast_to(np.asarray(shift, float), (dim,)).copy()
        xbar = np.where(self.shift > 0, self.shift / (1.0 + self.beta), self.shift)
        super().__init__(dim, domain=(np.full(dim, -bound), np.full(dim, bound)), x0=x0)
        self.known_min = (xbar, self.f(xbar))

    def f(self, x):
        r = x - self.shift
        p = np.maximum(x, 0.0)
        return float(0.5 * r @ r + 0.5 * self.beta * p @ p)

    def subgrad(self, x):
        return x - self.shift + self.beta * np.maximum(x, 0.0)

    def reference_hessian(self, x):
        return np.diag(1.0 + self.beta * (x > 0))

    def differential_membership(self, x, H, tol=1e-8):
        H = np.asarray(H)
        d = np.diag(H)
        if np.max(np.abs(H - np.diag(d))) > tol:
            return False
        lo = np.where(x > 0, 1.0 + self.beta, 1.0)
        hi = np.where(x < 0, 1.0, 1.0 + self.beta)
        return bool(np.all(d >= lo - tol) and np.all(d <= hi + tol))


class FunctionProblem(ObjectiveProblem):
    """Problem assembled from plain callables."""

    def __init__(self, dim, f, subgrad, reference_hessian=None, differential_membership=None,
                 known_min=None, domain=None, x0=None, name="function"):
        super().__init__(dim, domain=domain, known_min=known_min, x0=x0)
        self._f = f
        self._g = subgrad
        self.reference_hessian = reference_hessian
        self.differential_membership = differential_membership
        self.name = name

    def f(self, x):
        return float(self._f(x))

    def subgrad(self, x):
        return np.asarray(self._g(x), dtype=float)


# ---------------------------------------------------------------------------
# regularity constants


def estimate_newton_constant(problem: ObjectiveProblem, region: Box, pairs: int, rng) -> float:
    """Lower estimate of the constant of Newton differentiability on a box.

    Pairs ``(x, y)`` are drawn uniformly from ``region``; every second pair is
    the antithetic reflection ``(lo + hi - x, lo + hi - y)`` of the previous
    one.  Returns the largest observed
    ``||F(x) - F(y) - H(x)(x - y)|| / ||x - y||`` with ``F = subgrad`` and
    ``H = reference_hessian``.  The draws are sequential, so for a fixed seed
    the estimate is nondecreasing in ``pairs``.
    """
    if problem.reference_hessian is None:
        raise UnsupportedProblemError("Newton-constant estimation needs a reference Hessian")
    if pairs < 1:
        raise ContractViolation("pairs must be positive")
    lo = np.broadcast_to(np.asarray(region[0], float), (problem.dim,))
    hi = np.broadcast_to(np.asarray(region[1], float), (problem.dim,))
    if np.any(lo > hi):
        raise InvalidSetError("region lower bound exceeds upper bound")
    best = 0.0
    mirror = None
    done = 0
    while done < pairs:
        if mirror is not None:
            x, y = mirror
            mirror = None
        else:
            x = rng.uniform(lo, hi)
            y = rng.uniform(lo, hi)
            mirror = (lo + hi - x, lo + hi - y)
        dist = np.linalg.norm(x - y)
        if dist < 1e-12:
            mirror = None
            continue
        H = problem.reference_hessian(x)
        r = problem.subgrad(x) - problem.subgrad(y) - H @ (x - y)
        best = max(best, float(np.linalg.norm(r) / dist))
        done += 1
    return best


def hessian_norm_bounds(problem: ObjectiveProblem, points) -> tuple[float, float]:
    """``(omega, Omega)``: largest ``||H||_2`` and largest ``||H^{-1}||_2`` over ``points``."""
    if problem.reference_hessian is None:
        raise UnsupportedProblemError("needs a reference Hessian")
    omega = 0.0
    Omega = 0.0
    for x in points:
        sv = np.linalg.svd(np.asarray(problem.reference_hessian(np.asarray(x)), float), compute_uv=False)
        omega = max(omega, float(sv[0]))
        Omega = max(Omega, math.inf if sv[-1] == 0 else float(1.0 / sv[-1]))
    return omega, Omega


# ---------------------------------------------------------------------------
# mini-batch maximum likelihood


@dataclass
class BatchMLEProblem:
    """Gaussian location / log-scale likelihood over a data set with mini-batches.

    The parameter is ``u = (mu_1..mu_p, s_1..s_p)`` with ``s = log(sigma)``.
    Batch ``k`` consists of the first ``batch_size`` entries of the ``k``-th
    permutation, which depends only on ``(permutation_seed, k)``.
    """

    data: np.ndarray
    batch_size: int
    permutation_seed: int = 0
    _perm_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim == 1:
            self.data = self.data[:, None]
        N = self.data.shape[0]
        if not 1 <= self.batch_size <= N:
            raise ContractViolation("batch size must lie in [1, N]")

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return 2 * self.p

    def permutation(self, k: int) -> np.ndarray:
        if k < 0:
            raise ContractViolation("batch index must be nonnegative")
        perm = self._perm_cache.get(k)
        if perm is None:
            gen = np.random.default_rng(np.random.SeedSequence(int(self.permutation_seed), spawn_key=(int(k),)))
            perm = gen.permutation(self.N)
            if len(self._perm_cache) > 64:
                self._perm_cache.clear()
            self._perm_cache[k] = perm
        return perm

    def batch_indices(self, k: int) -> np.ndarray:
        return self.permutation(k)[: self.batch_size]

    def _split(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ContractViolation(f"parameter must have length {self.dim}")
        return u[: self.p], u[self.p:]

    def objective(self, u, idx=None) -> float:
        """Negative log-likelihood summed over ``idx`` (all samples by default)."""
        mu, s = self._split(u)
        X = self.data if idx is None else self.data[idx]
        z = (X - mu) * np.exp(-s)
        m = X.shape[0]
        return float(m * np.sum(s) + 0.5 * np.sum(z * z) + 0.5 * m * self.p * math.log(2 * math.pi))

    def gradient(self, u, idx=None) -> np.ndarray:
        mu, s = self._split(u)
        X = self.data if idx is None else self.data[idx]
        w = np.exp(-2.0 * s)
        r = X - mu
        g_mu = -np.sum(r, axis=0) * w
        g_s = X.shape[0] - np.sum(r * r, axis=0) * w
        return np.concatenate([g_mu, g_s])

    def hessian(self, u, idx=None) -> np.ndarray:
        mu, s = self._split(u)
        X = self.data if idx is None else self.data[idx]
        w = np.exp(-2.0 * s)
        r = X - mu
        p = self.p
        H = np.zeros((2 * p, 2 * p))
        j = np.arange(p)
        H[j, j] = X.shape[0] * w
        H[j, p + j] = H[p + j, j] = 2.0 * np.sum(r, axis=0) * w
        H[p + j, p + j] = 2.0 * np.sum(r * r, axis=0) * w
        return H

    def batch_objective(self, u, k: int) -> float:
        return self.objective(u, self.batch_indices(k))

    def mle(self) -> np.ndarray:
        """Closed-form full-data maximizer of the likelihood."""
        mu = self.data.mean(axis=0)
        sd = self.data.std(axis=0)
        return np.concatenate([mu, np.log(sd)])

    def full_problem(self, x0=None) -> ObjectiveProblem:
        """The full objective ``v(u)`` as an :class:`ObjectiveProblem`."""
        d = self.dim
        known = self.mle()
        prob = FunctionProblem(
            d, self.objective, self.gradient,
            reference_hessian=self.hessian,
            differential_membership=lambda x, H, tol=1e-8: bool(np.max(np.abs(np.asarray(H) - self.hessian(x))) <= tol),
            known_min=(known, self.objective(known)) if np.all(np.isfinite(known)) else None,
            domain=(np.concatenate([np.full(self.p, -100.0), np.full(self.p, -10.0)]),
                    np.concatenate([np.full(self.p, 100.0), np.full(self.p, 10.0)])),
            x0=np.zeros(d) if x0 is None else x0,
            name="gauss-mle",
        )
        return prob


def mle_batch_gradient(problem: BatchMLEProblem, u, k: int) -> np.ndarray:
    """Gradient of the ``k``-th batch objective at ``u``."""
    if k < 0:
        raise ContractViolation("batch index must be nonnegative")
    return problem.gradient(u, problem.batch_indices(k))


def make_gaussian_data(N: int, mu, sigma, rng) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, float))
    sigma = np.atleast_1d(np.asarray(sigma, float))
    return mu + sigma * rng.standard_normal((N, mu.size))
