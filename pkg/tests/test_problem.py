import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import central_diff_grad, central_diff_jac
from stochnewton.errors import ContractViolation, InvalidSetError, UnsupportedProblemError
from stochnewton.problem import (AbsQuadProblem, BatchMLEProblem, DenoisingProblem, FunctionProblem,
                                 QuadraticProblem, ReluQuadProblem, estimate_newton_constant, eval_objective,
                                 eval_subgradient, hessian_norm_bounds, min_norm_in_box, mle_batch_gradient)


def smoothness_loops(x):
    """Interior centered differences, written out with explicit loops."""
    m1, m2 = x.shape
    total = 0.0
    for i in range(1, m1 - 1):
        for j in range(1, m2 - 1):
            total += (x[i, j + 1] - x[i, j - 1]) ** 2 + (x[i + 1, j] - x[i - 1, j]) ** 2
    return total


# ---------------------------------------------------------------- objective


def test_denoise_objective_at_original_is_smoothness_only(rng):
    o = rng.random((5, 6))
    for alpha in (0.1, 1.0, 7.0):
        p = DenoisingProblem(o, alpha)
        assert eval_objective(p, o.ravel()) == pytest.approx(smoothness_loops(o), rel=1e-12)


def test_constant_image_has_zero_objective():
    p = DenoisingProblem(np.ones((3, 3)), 1.0)
    assert eval_objective(p, np.ones(9)) == 0.0


def test_abs_quad_value():
    assert eval_objective(AbsQuadProblem(), [2.0]) == 4.0


def test_dimension_mismatch_is_contract_violation():
    p = AbsQuadProblem(dim=3)
    with pytest.raises(ContractViolation):
        eval_objective(p, [1.0, 2.0])
    with pytest.raises(ContractViolation):
        eval_subgradient(p, np.zeros((3, 1)))


def test_denoise_objective_matches_loop_formula(rng):
    o = rng.random((4, 7))
    p = DenoisingProblem(o, 0.3)
    for _ in range(5):
        x = rng.uniform(-1, 2, o.shape)
        expected = smoothness_loops(x) + 0.3 * np.sum((x - o) ** 2)
        assert p.f(x.ravel()) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- subgradient


def test_abs_subgradient_values():
    p = AbsQuadProblem(weight=1.0, curvature=0.0)
    assert eval_subgradient(p, [0.0]) == pytest.approx([0.0])
    assert eval_subgradient(p, [3.0]) == pytest.approx([1.0])
    assert eval_subgradient(p, [-0.5]) == pytest.approx([-1.0])


def test_denoise_distance_gradient_component(rng):
    o = rng.random((3, 3))
    x = rng.random((3, 3))
    alpha = 2.5
    p = DenoisingProblem(o, alpha)
    smooth_grad = central_diff_grad(lambda z: smoothness_loops(z.reshape(3, 3)), x.ravel())
    dist_part = eval_subgradient(p, x.ravel()) - smooth_grad
    assert dist_part == pytest.approx((2 * alpha * (x - o)).ravel(), abs=1e-6)


def _smooth_problems(rng):
    yield DenoisingProblem(rng.random((4, 5)), 0.7), lambda: rng.uniform(-1, 2, 20)
    yield QuadraticProblem.from_spectrum([1.0, 3.0, 9.0], rng=rng, xbar=rng.standard_normal(3)), \
        lambda: rng.uniform(-5, 5, 3)
    bp = BatchMLEProblem(rng.normal(1.0, 2.0, (50, 2)), 10)
    yield bp.full_problem(), lambda: np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2)])


def test_gradients_match_central_differences(rng):
    for prob, draw in _smooth_problems(rng):
        for _ in range(100):
            x = draw()
            fd = central_diff_grad(prob.f, x)
            g = prob.subgrad(x)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g)), prob.name


def test_relu_quad_gradient_away_from_kinks(rng):
    p = ReluQuadProblem(dim=3, beta=0.5, shift=[0.3, -0.2, 1.0])
    for _ in range(100):
        x = rng.uniform(-3, 3, 3)
        if np.min(np.abs(x)) < 1e-3:
            continue
        assert p.subgrad(x) == pytest.approx(central_diff_grad(p.f, x), rel=1e-6, abs=1e-8)


def test_reference_hessians_match_jacobian_of_gradient(rng):
    for prob, draw in _smooth_problems(rng):
        x = draw()
        J = central_diff_jac(prob.subgrad, x)
        assert np.allclose(prob.reference_hessian(x), J, rtol=1e-5, atol=1e-5), prob.name


def test_denoise_hessian_constant_and_positive_definite(rng):
    p = DenoisingProblem(rng.random((5, 5)), 0.5)
    H1 = p.reference_hessian(rng.random(25))
    H2 = p.reference_hessian(rng.random(25))
    assert np.array_equal(H1, H2)
    assert np.allclose(H1, H1.T)
    assert np.linalg.eigvalsh(H1).min() >= 2 * 0.5 - 1e-10


def test_known_minimizers_are_critical(rng):
    probs = [
        DenoisingProblem(rng.random((6, 6)), 1.3),
        AbsQuadProblem(dim=4, weight=0.5, curvature=2.0, shift=[1.0, -0.1, 0.0, -3.0]),
        AbsQuadProblem(),
        QuadraticProblem.from_spectrum([1, 2, 3, 4], rng=rng, xbar=rng.standard_normal(4)),
        ReluQuadProblem(dim=3, beta=0.4, shift=[1.0, -1.0, 0.0]),
        BatchMLEProblem(rng.normal(0.0, 1.5, (30, 1)), 5).full_problem(),
    ]
    for p in probs:
        xbar, fmin = p.known_min
        assert np.linalg.norm(p.subgrad(xbar)) <= 1e-8, p.name
        assert p.f(xbar) == pytest.approx(fmin)
        for _ in range(20):
            z = xbar + 0.1 * rng.standard_normal(p.dim)
            assert p.f(z) >= fmin - 1e-12


def test_reference_hessian_is_member_of_differential(rng):
    probs = [
        DenoisingProblem(rng.random((4, 4)), 1.0),
        AbsQuadProblem(dim=2),
        QuadraticProblem.from_spectrum([1.0, 5.0], rng=rng),
        ReluQuadProblem(dim=2, beta=0.5),
    ]
    for p in probs:
        lo, hi = p.domain
        for _ in range(20):
            x = rng.uniform(np.maximum(lo, -5), np.minimum(hi, 5))
            assert p.differential_membership(x, p.reference_hessian(x), 1e-8)


def test_relu_membership_at_kink():
    p = ReluQuadProblem(dim=2, beta=0.5)
    x = np.array([0.0, 1.0])
    assert p.differential_membership(x, np.diag([1.2, 1.5]))
    assert not p.differential_membership(x, np.diag([1.6, 1.5]))
    assert not p.differential_membership(np.array([-1.0, 1.0]), np.diag([1.5, 1.5]))


def test_objectives_finite_on_domain(rng):
    probs = [DenoisingProblem(rng.random((3, 4)), 1.0), AbsQuadProblem(dim=2), ReluQuadProblem(dim=2)]
    for p in probs:
        lo, hi = p.domain
        for corner in itertools.product(*zip(lo, hi)):
            assert np.isfinite(p.f(np.array(corner)))


# ---------------------------------------------------------------- min-norm selection


def test_min_norm_examples():
    assert min_norm_in_box([-1.0], [1.0]) == pytest.approx([0.0])
    assert min_norm_in_box([0.5], [2.0]) == pytest.approx([0.5])
    assert min_norm_in_box([-2.0, 1.0], [-1.0, 3.0]) == pytest.approx([-1.0, 1.0])


def test_min_norm_matches_grid_search():
    lo, hi = np.array([-2.0, 1.0]), np.array([-1.0, 3.0])
    g1, g2 = np.meshgrid(np.linspace(lo[0], hi[0], 201), np.linspace(lo[1], hi[1], 201))
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    best = pts[np.argmin(np.linalg.norm(pts, axis=1))]
    assert min_norm_in_box(lo, hi) == pytest.approx(best, abs=1e-12)


def test_min_norm_invalid_box():
    with pytest.raises(InvalidSetError):
        min_norm_in_box([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(ContractViolation):
        min_norm_in_box([0.0], [1.0, 2.0])


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(0, 50)), min_size=1, max_size=6),
       st.integers(0, 2 ** 32 - 1))
def test_min_norm_beats_random_points(boxes, seed):
    lo = np.array([b[0] for b in boxes])
    hi = lo + np.array([b[1] for b in boxes])
    z = min_norm_in_box(lo, hi)
    assert np.all(z >= lo) and np.all(z <= hi)
    pts = np.random.default_rng(seed).uniform(lo, hi, (1000, lo.size))
    assert np.linalg.norm(z) <= np.linalg.norm(pts, axis=1).min() + 1e-12


# ---------------------------------------------------------------- Newton constant


def test_newton_constant_zero_on_denoising(rng):
    p = DenoisingProblem(rng.random((4, 4)), 1.0)
    assert estimate_newton_constant(p, p.domain, 200, rng) <= 1e-10


def test_newton_constant_zero_on_smooth_side_of_kink(rng):
    p = AbsQuadProblem(dim=2)
    assert estimate_newton_constant(p, (np.full(2, 0.1), np.full(2, 10.0)), 500, rng) <= 1e-10


def test_newton_constant_straddling_kink():
    # For |x| + x^2/2 with H = 1 the ratio at (x, y) is |sign x - sign y| / |x - y|,
    # which equals 2 / |x - y| for pairs of opposite sign and is unbounded on [-1, 1].
    p = AbsQuadProblem()
    region = (np.array([-1.0]), np.array([1.0]))
    est = [estimate_newton_constant(p, region, n, np.random.default_rng(3)) for n in (1, 10, 100, 1000, 10000)]
    assert all(a <= b for a, b in zip(est, est[1:]))
    assert est[-1] > 1.0

    gen = np.random.default_rng(3)
    draws = []
    for _ in range(5):
        x, y = gen.uniform(-1, 1, 1), gen.uniform(-1, 1, 1)
        draws.append((x[0], y[0]))
        draws.append((-x[0], -y[0]))
    brute = max(abs(np.sign(x) - np.sign(y)) / abs(x - y) for x, y in draws)
    assert est[1] == pytest.approx(brute, rel=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 5.0), st.floats(-5, 5))
def test_newton_constant_quadratic_any_region(seed, width, center):
    gen = np.random.default_rng(seed)
    p = QuadraticProblem.from_spectrum(gen.uniform(0.5, 10, 3), rng=gen)
    region = (np.full(3, center - width), np.full(3, center + width))
    assert estimate_newton_constant(p, region, 50, gen) <= 1e-10


def test_newton_constant_needs_hessian(rng):
    p = FunctionProblem(1, lambda x: float(x @ x), lambda x: 2 * x)
    with pytest.raises(UnsupportedProblemError):
        estimate_newton_constant(p, (np.array([-1.0]), np.array([1.0])), 10, rng)


def test_hessian_norm_bounds():
    p = QuadraticProblem(np.diag([0.5, 4.0]))
    omega, Omega = hessian_norm_bounds(p, [np.zeros(2), np.ones(2)])
    assert omega == pytest.approx(4.0)
    assert Omega == pytest.approx(2.0)


# ---------------------------------------------------------------- mini-batch MLE


def test_mle_gradient_examples():
    bp = BatchMLEProblem(np.array([0.0, 2.0]), 2)
    assert mle_batch_gradient(bp, [1.0, 0.0], 0)[0] == pytest.approx(0.0)
    assert mle_batch_gradient(bp, [0.0, 0.0], 0)[0] == pytest.approx(-2.0)


def test_full_batch_gradient_vanishes_at_sample_mean(rng):
    data = rng.normal(3.0, 2.0, (40, 2))
    bp = BatchMLEProblem(data, 40)
    u = np.concatenate([data.mean(axis=0), [0.3, -0.2]])
    for k in range(3):
        assert mle_batch_gradient(bp, u, k)[:2] == pytest.approx([0.0, 0.0], abs=1e-10)


def test_permutations_are_bijections_and_reproducible():
    bp = BatchMLEProblem(np.arange(37.0), 5, permutation_seed=9)
    for k in range(10):
        assert sorted(bp.permutation(k)) == list(range(37))
    again = BatchMLEProblem(np.arange(37.0), 5, permutation_seed=9)
    assert np.array_equal(bp.batch_indices(4), again.batch_indices(4))
    assert not np.array_equal(bp.permutation(0), bp.permutation(1))


@given(st.integers(2, 60), st.integers(1, 6), st.integers(0, 1000))
def test_full_objective_is_sum_over_partition(N, parts, seed):
    gen = np.random.default_rng(seed)
    bp = BatchMLEProblem(gen.normal(size=(N, 2)), 1, permutation_seed=seed)
    u = gen.normal(size=4)
    perm = bp.permutation(0)
    chunks = np.array_split(perm, min(parts, N))
    total = sum(bp.objective(u, idx) for idx in chunks)
    assert total == pytest.approx(bp.objective(u), rel=1e-10)


def test_degenerate_batch_gradient_is_finite():
    bp = BatchMLEProblem(np.full(10, 4.0), 5)
    for u in ([4.0, -20.0], [4.0, 20.0], [0.0, -5.0]):
        assert np.all(np.isfinite(mle_batch_gradient(bp, u, 0)))


def test_mle_closed_form_matches_numeric_minimizer(rng):
    from scipy.optimize import minimize

    bp = BatchMLEProblem(rng.normal(-1.0, 0.7, (200, 1)), 20)
    res = minimize(bp.objective, np.zeros(2), jac=bp.gradient, method="BFGS", options={"gtol": 1e-10})
    assert bp.mle() == pytest.approx(res.x, abs=1e-6)


def test_negative_batch_index_rejected():
    bp = BatchMLEProblem(np.arange(4.0), 2)
    with pytest.raises(ContractViolation):
        mle_batch_gradient(bp, [0.0, 0.0], -1)
