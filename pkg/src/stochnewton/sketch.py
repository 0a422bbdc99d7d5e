"""Random sketch matrices and diagnostics for sketched Newton steps.

Two distributions over ``d x n`` matrices are provided:

* Gaussian: i.i.d. ``N(0, 1/d)`` entries, so that ``E ||S x||^2 = ||x||^2``.
* Projection: every row is a one-hot vector selecting a uniformly drawn
  coordinate.  Rows are drawn with replacement by default (uniform over the
  full set of such matrices); ``replace=False`` selects distinct coordinates,
  which keeps ``S H S^T`` nonsingular for SPD ``H``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ContractViolation, SingularOracleError

GAUSSIAN = "gaussian"
PROJECTION = "projection"
KINDS = (GAUSSIAN, PROJECTION)


@dataclass(frozen=True)
class SketchMatrix:
    """A ``d x n`` sketch; projection sketches store only the selected column per row."""

    kind: str
    d: int
    n: int
    entries: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None

    @property
    def ident(self) -> int:
        payload = self.indices if self.kind == PROJECTION else self.entries
        return zlib.crc32(np.ascontiguousarray(payload).tobytes())

    def dense(self) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return self.entries
        S = np.zeros((self.d, self.n))
        S[np.arange(self.d), self.indices] = 1.0
        return S

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``S @ x`` for a vector or a matrix with ``n`` rows."""
        if self.kind == GAUSSIAN:
            return self.entries @ x
        return np.asarray(x)[self.indices]

    def apply_t(self, z: np.ndarray) -> np.ndarray:
        """``S.T @ z``."""
        if self.kind == GAUSSIAN:
            return self.entries.T @ z
        z = np.asarray(z, float)
        out = np.zeros((self.n,) + z.shape[1:])
        np.add.at(out, self.indices, z)
        return out

    def sandwich(self, H: np.ndarray) -> np.ndarray:
        """The ``d x d`` inner matrix ``S H S^T``."""
        if self.kind == GAUSSIAN:
            return self.entries @ H @ self.entries.T
        return np.asarray(H)[np.ix_(self.indices, self.indices)]


def _check_shape(d: int, n: int) -> None:
    if not (1 <= d <= n):
        raise ContractViolation(f"sketch dimension must satisfy 1 <= d <= n, got d={d}, n={n}")


def sample_gaussian_sketch(d: int, n: int, rng) -> SketchMatrix:
    _check_shape(d, n)
    return SketchMatrix(GAUSSIAN, d, n, entries=rng.standard_normal((d, n)) / math.sqrt(d))


def sample_projection_sketch(d: int, n: int, rng, replace: bool = True) -> SketchMatrix:
    _check_shape(d, n)
    if replace:
        idx = rng.integers(0, n, size=d)
    else:
        idx = rng.choice(n, size=d, replace=False)
    return SketchMatrix(PROJECTION, d, n, indices=np.asarray(idx, dtype=np.intp))


def sample_sketch(kind: str, d: int, n: int, rng, replace: bool = True) -> SketchMatrix:
    if kind == GAUSSIAN:
        return sample_gaussian_sketch(d, n, rng)
    if kind == PROJECTION:
        return sample_projection_sketch(d, n, rng, replace=replace)
    raise ContractViolation(f"unknown sketch kind {kind!r}")


def spectral_norm(A: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    The estimate ``||A v||`` is nondecreasing over the iteration; it stops
    once the relative change drops below ``tol``.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    v = np.random.default_rng(0).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = np.linalg.norm(A @ v)
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = np.linalg.norm(A @ v)
        if abs(new - est) <= tol * max(new, 1e-300):
            return float(new)
        est = new
    return float(est)


def jl_empirical_check(kind: str, d: int, n: int, eps: float, trials: int, rng, replace: bool = True):
    """Frequency of ``| ||S x||^2 - 1 | > eps`` over fresh ``(S, x)`` pairs.

    Test vectors are uniform on the unit sphere.  Projection sketches are
    rescaled by ``sqrt(n / d)`` so that ``||S x||^2`` is unbiased.  The
    reported bound is ``2 exp(-d eps^2 / 8)`` for Gaussian sketches; for
    projection sketches no bound is asserted.
    """
    from .stochastics import proportion_report

    _check_shape(d, n)
    if trials < 1:
        raise ContractViolation("trials must be positive")
    x = rng.standard_normal((trials, n))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    if kind == GAUSSIAN:
        S = rng.standard_normal((trials, d, n)) / math.sqrt(d)
        sq = np.einsum("tdn,tn->td", S, x)
        norms = np.sum(sq * sq, axis=1)
        bound = 2.0 * math.exp(-d * eps * eps / 8.0)
    elif kind == PROJECTION:
        if replace:
            idx = rng.integers(0, n, size=(trials, d))
        else:
            idx = np.argsort(rng.random((trials, n)), axis=1)[:, :d]
        picked = np.take_along_axis(x, idx, axis=1)
        norms = (n / d) * np.sum(picked * picked, axis=1)
        bound = None
    else:
        raise ContractViolation(f"unknown sketch kind {kind!r}")
    hits = np.abs(norms - 1.0) > eps
    return proportion_report(
        "jl_tail", int(hits.sum()), trials, bound,
        params={"kind": kind, "d": d, "n": n, "eps": eps, "mean_sq_norm": float(norms.mean())},
    )


@dataclass(frozen=True)
class ContractionDiagnostics:
    y_plus: np.ndarray
    cond1: bool
    cond2: bool
    cond3: bool
    ratio: float
    bound: float

    @property
    def all_conditions(self) -> bool:
        return self.cond1 and self.cond2 and self.cond3

    @property
    def implication_holds(self) -> bool:
        return (not self.all_conditions) or self.ratio <= self.bound + 1e-8


def sketched_contraction_diagnostics(H: np.ndarray, F: Callable[[np.ndarray], np.ndarray], xbar: np.ndarray,
                                     y: np.ndarray, S: SketchMatrix, eps: float, c: float = 0.0) -> ContractionDiagnostics:
    """Evaluate one sketched Newton step from ``y`` against the contraction estimate.

    Computes ``y+ = y - S^T (S H S^T)^{-1} S F(y)`` and checks the three
    sketch-quality conditions at tolerance ``eps``:

    1. ``|| S^T S H S^T S - H ||_2 <= eps``
    2. ``|| y - xbar - S^T z || <= (1 + eps) || S (y - xbar) - z ||`` with ``z = (S H S^T)^{-1} S F(y)``
    3. ``|| S F(y) - (S H S^T) S (y - xbar) || <= (1 + eps) || F(y) - S^T (S H S^T) S (y - xbar) ||``

    ``bound`` is ``(1 + eps)^2 (c + eps) ||(S H S^T)^{-1}||_2`` and ``ratio``
    is ``||y+ - xbar|| / ||y - xbar||``.
    """
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    inner = S.sandwich(H)
    sv = np.linalg.svd(inner, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-14 or sv[-1] == 0.0:
        raise SingularOracleError("S H S^T is singular")
    Fy = np.asarray(F(y), dtype=float)
    SF = S.apply(Fy)
    z = np.linalg.solve(inner, SF)
    y_plus = y - S.apply_t(z)
    e = y - xbar
    Se = S.apply(e)

    P = S.apply_t(S.dense())
    cond1 = spectral_norm(P @ H @ P - H) <= eps
    cond2 = np.linalg.norm(e - S.apply_t(z)) <= (1 + eps) * np.linalg.norm(Se - z)
    cond3 = np.linalg.norm(SF - inner @ Se) <= (1 + eps) * np.linalg.norm(Fy - S.apply_t(inner @ Se))
    norm_e = np.linalg.norm(e)
    ratio = float(np.linalg.norm(y_plus - xbar) / norm_e) if norm_e > 0 else 0.0
    bound = (1 + eps) ** 2 * (c + eps) / sv[-1]
    return ContractionDiagnostics(y_plus, bool(cond1), bool(cond2), bool(cond3), ratio, float(bound))
