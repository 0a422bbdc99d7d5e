"""Acceptance criteria, one test each, at the stated tolerances.

Every test appends a PASS/FAIL line to ``conftest.ACCEPTANCE_LINES``; the
lines are printed in the terminal summary.
"""

import csv
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from stochnewton import rng as rngmod
from stochnewton.cli import main
from stochnewton.oracle import ExactOracle, NoisyOracle, NoisyOracleConfig, exact_sample, sketched_sample
from stochnewton.problem import (AbsQuadProblem, DenoisingProblem, QuadraticProblem, ReluQuadProblem,
                                 estimate_newton_constant)
from stochnewton.images import synthetic_image
from stochnewton.sketch import (GAUSSIAN, PROJECTION, SketchMatrix, sample_projection_sketch, sample_sketch,
                                sketched_contraction_diagnostics)
from stochnewton.solver import SolverConfig, run
from stochnewton.stochastics import (BernoulliProcessSpec, noisy_expected_K_bound, run_solver_ensemble,
                                     simulate_stopping_ensemble, validate_expectation_of_sums,
                                     validate_fixed_n_chernoff, validate_solver_bounds, validate_stopping_chernoff)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def test_criterion_01_quadratic_one_step():
    start = time.perf_counter()
    img = synthetic_image(32, 32, 20.0, np.random.default_rng(7))
    p = DenoisingProblem(img, 1.0)
    gen = np.random.default_rng(8)
    x0 = gen.uniform(-1, 2, p.dim)
    c_hat, alpha = 0.0, 0.5
    rho = 0.5 * (1 - c_hat)
    # c0 below the acceptance threshold of the exact Newton step
    c0 = 0.01
    res = run(p, ExactOracle(), SolverConfig(c0=c0, alpha=alpha, epsilon=1e-8), gen, x0=x0)
    elapsed = time.perf_counter() - start
    # the backtracking term is clamped at zero when c0 < rho
    K_max = 1 + max(0, math.ceil(math.log(rho / c0) / math.log(alpha)))
    ok = (res.terminated and res.grad_norm_final < 1e-8 and res.S == 1 and res.K <= K_max and elapsed < 5.0)
    record(1, "quadratic one-step", ok,
           f"K={res.K} S={res.S} |g|={res.grad_norm_final:.2e} K_max={K_max} time={elapsed:.2f}s")


def test_criterion_01_supplement_rejections_from_large_c0():
    # From c0 = 1 the gradient test needs c <= ||H^-1 g|| / ||g||, which can lie below rho.
    p = DenoisingProblem(synthetic_image(32, 32, 20.0, np.random.default_rng(7)), 1.0)
    x0 = np.random.default_rng(8).uniform(-1, 2, p.dim)
    g = p.subgrad(x0)
    step = np.linalg.solve(p.reference_hessian(x0), g)
    dec = p.f(x0) - p.f(x0 - step)
    threshold = min(dec / (step @ step), np.linalg.norm(step) / np.linalg.norm(g))
    expected = 1 + max(0, math.ceil(math.log(threshold) / math.log(0.5) - 1e-12))
    res = run(p, ExactOracle(), SolverConfig(c0=1.0, epsilon=1e-8), None, x0=x0)
    assert res.S == 1 and res.K == expected


# ---------------------------------------------------------------- 2, 3


def _decrease_ensemble():
    """Exact-oracle runs on problems with Hessians >= I (so Omega <= 1) and measured c * Omega < 1."""
    gen = np.random.default_rng(2024)
    cases = []
    for i in range(150):
        o = gen.random((5, 5))
        cases.append((DenoisingProblem(o, float(gen.uniform(0.5, 3))), gen.uniform(-1, 2, 25)))
    for i in range(150):
        eigs = gen.uniform(1, 10, 4)
        q = QuadraticProblem.from_spectrum(eigs, rng=gen, xbar=gen.standard_normal(4))
        cases.append((q, gen.uniform(-10, 10, 4)))
    for i in range(300):
        beta = float(gen.uniform(0.1, 0.8))
        r = ReluQuadProblem(3, beta, gen.uniform(-2, 2, 3))
        cases.append((r, gen.uniform(-3, 3, 3)))
    return cases


@pytest.fixture(scope="module")
def decrease_steps():
    steps = []
    c_hat = {}
    for problem, x0 in _decrease_ensemble():
        key = id(problem)
        lo, hi = problem.domain
        region = (np.maximum(lo, -10), np.minimum(hi, 10))
        c_hat[key] = estimate_newton_constant(problem, region, 200, np.random.default_rng(1))
        omega_inv = max(1.0 / np.linalg.eigvalsh(problem.reference_hessian(x0)).min(), 1.0)
        assert c_hat[key] * omega_inv < 1
        for c0 in (1.0, 0.05):
            res = run(problem, ExactOracle(), SolverConfig(c0=c0, epsilon=1e-10, max_iter=10_000), None, x0=x0)
            assert res.terminated
            tr = res.trace
            omega = max(np.linalg.norm(problem.reference_hessian(r.x), 2) for r in tr)
            for a, b in zip(tr, tr[1:] + [None]):
                if not a.successful:
                    continue
                x_next = b.x if b is not None else res.x_final
                steps.append((a.f_val, problem.f(x_next), np.linalg.norm(x_next - a.x), a.grad_norm,
                              c_hat[key], omega))
    return steps


def test_criterion_02_sufficient_decrease(decrease_steps):
    viol = sum(1 for fx, fy, s, g, c, w in decrease_steps if fx - fy < 0.5 * (1 - c) * s * s - 1e-10)
    n = len(decrease_steps)
    record(2, "sufficient decrease", n >= 1000 and viol == 0,
           f"{n} accepted steps, {viol} violations, max c_hat={max(r[4] for r in decrease_steps):.3f}")


def test_criterion_03_subdifferential_lower_bound(decrease_steps):
    viol = sum(1 for fx, fy, s, g, c, w in decrease_steps if g > w * s + 1e-10)
    n = len(decrease_steps)
    record(3, "subdifferential lower bound", n >= 1000 and viol == 0, f"{n} accepted steps, {viol} violations")


# ---------------------------------------------------------------- 4, 5


@pytest.fixture(scope="module")
def noisy_setup():
    n, s = 4, 0.01
    eigs = np.array([1.0, 2.0, 3.0, 4.0])
    p = QuadraticProblem.from_spectrum(eigs, rng=rngmod.stream(3, 902), x0=np.ones(n))
    noise = NoisyOracleConfig.isotropic(n, s)
    c_hat, omega, Omega = 0.0, float(eigs.max()), float(1 / eigs.min())
    # applicability: c + n^{3/2} sqrt(tr Sigma) < 1 / Omega
    assert c_hat + noise.threshold() < 1 / Omega
    cfg = SolverConfig(c0=1.0, alpha=0.5, epsilon=1e-6)
    start = time.perf_counter()
    ens = run_solver_ensemble(p, NoisyOracle(noise), cfg, 10_000, seed=11)
    reports = validate_solver_bounds(p, NoisyOracle(noise), cfg, 10_000, 11, c_hat=c_hat, omega=omega,
                                     delta=1 / n, ensemble=ens)
    elapsed = time.perf_counter() - start
    bound = noisy_expected_K_bound(p.f(p.x0) - p.known_min[1], c_hat, omega, cfg.epsilon, cfg.c0, cfg.alpha, n)
    return ens, reports, bound, elapsed


def test_criterion_04_expected_K(noisy_setup):
    ens, reports, bound, elapsed = noisy_setup
    ek = next(r for r in reports if r.name == "expected_K")
    mean_K = float(ens.K.mean())
    ok = ek.bound == pytest.approx(bound) and mean_K <= bound and elapsed < 120
    record(4, "noisy expected K", ok, f"mean K={mean_K:.3f} bound={bound:.4g} time={elapsed:.1f}s")


def test_criterion_05_K_tail(noisy_setup):
    ens, reports, _, _ = noisy_setup
    tails = [r for r in reports if r.name == "K_tail"]
    gammas = sorted(r.params["gamma"] for r in tails)
    ok = gammas == [0.3, 0.5] and all(r.empirical <= r.bound + 3 * r.se for r in tails)
    detail = ", ".join(f"gamma={r.params['gamma']}: P(K>={r.params['threshold']:.3g})={r.empirical:.4f} tail={r.bound:.3g}" for r in tails)
    record(5, "noisy K tail", ok, detail)


# ---------------------------------------------------------------- 6, 7, 8


def test_criterion_06_stopping_chernoff():
    start = time.perf_counter()
    worst, ok, count = [], True, 0
    for p in (0.7, 0.9):
        for thr in (10, 50):
            spec = BernoulliProcessSpec(p)
            ens = simulate_stopping_ensemble(spec, thr, 10_000, seed=100 + count)
            for g in (0.3, 0.5):
                rep = validate_stopping_chernoff(spec, thr, g, trials=10_000, rng=100 + count, ensemble=ens,
                                                 pilot_trials=10_000)
                ok &= rep.empirical <= rep.bound + 3 * rep.se and rep.satisfied
                worst.append(rep.empirical - rep.bound)
            es = validate_expectation_of_sums(ens)
            ok &= es.empirical >= es.bound - 3 * es.se
            count += 1
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    record(6, "stopping-time Chernoff", ok, f"{count * 2} event checks, max(freq-bound)={max(worst):.3g}, "
                                           f"time={elapsed:.1f}s")


def test_criterion_07_fixed_n_chernoff():
    rep = validate_fixed_n_chernoff(100, 0.1, 0.5, 100_000, rng=7)
    ok = rep.empirical <= rep.bound + 3 * rep.se
    record(7, "fixed-n Chernoff", ok, f"freq={rep.empirical:.2e} bound={rep.bound:.3e} se={rep.se:.1e}")


def test_criterion_08_noise_markov():
    gen = np.random.default_rng(8)
    ok, parts = True, []
    for n in (2, 4, 8):
        cfg = NoisyOracleConfig.isotropic(n, 0.3)
        N = cfg.draw(gen, size=100_000)
        norms = np.linalg.norm(N, axis=(1, 2))
        freq = float(np.mean(norms >= cfg.threshold()))
        se = math.sqrt(freq * (1 - freq) / norms.size)
        moment = float(np.mean(norms ** 2))
        target = n * n * cfg.trace_sigma
        ok &= freq <= 1 / n + 3 * se and abs(moment / target - 1) <= 0.02
        parts.append(f"n={n}: P={freq:.4f} E|N|^2/target={moment / target:.4f}")
    record(8, "noise Markov bound", ok, "; ".join(parts))


# ---------------------------------------------------------------- 9, 10


def test_criterion_09_sketch_implication():
    p = QuadraticProblem.from_spectrum([1.0, 2.0, 3.0, 4.0], rng=rngmod.stream(3, 902))
    gen = np.random.default_rng(9)
    counter = nonvacuous = singular = 0
    for t in range(10_000):
        kind = GAUSSIAN if t % 2 == 0 else PROJECTION
        S = sample_sketch(kind, int(gen.integers(1, 5)), 4, gen, replace=bool(gen.random() < 0.5))
        y = p.xbar + gen.standard_normal(4)
        eps = float(gen.choice([0.5, 2.0, 4.0]))
        try:
            out = sketched_contraction_diagnostics(p.A, p.subgrad, p.xbar, y, S, eps, c=0.0)
        except Exception:
            singular += 1
            continue
        nonvacuous += out.all_conditions
        counter += out.all_conditions and out.ratio > out.bound
    record(9, "sketching lemma implication", counter == 0 and nonvacuous > 0,
           f"{counter} counterexamples, {nonvacuous} draws met all conditions, {singular} singular draws skipped")


def test_criterion_10_sketch_degeneracy():
    gen = np.random.default_rng(10)
    worst = 0.0
    for i in range(50):
        n = int(gen.integers(2, 10))
        kind = i % 3
        if kind == 0:
            prob = QuadraticProblem.from_spectrum(gen.uniform(0.5, 10, n), rng=gen)
        elif kind == 1:
            prob = DenoisingProblem(gen.random((3, n)), float(gen.uniform(0.1, 2)))
        else:
            prob = ReluQuadProblem(n, 0.5, gen.standard_normal(n))
        x = gen.uniform(-1, 2, prob.dim)
        g = prob.subgrad(x)
        newton = x - exact_sample(prob, x).action(g)
        sketches = [SketchMatrix(GAUSSIAN, prob.dim, prob.dim, entries=np.eye(prob.dim)),
                    sample_projection_sketch(prob.dim, prob.dim, gen, replace=False)]
        for S in sketches:
            y = x - sketched_sample(prob, x, S).action(g)
            worst = max(worst, np.linalg.norm(y - newton) / np.linalg.norm(newton - x))
    record(10, "sketch degeneracy", worst <= 1e-10, f"max relative deviation {worst:.2e} over 50 instances")


# ---------------------------------------------------------------- 11


def test_criterion_11_denoise_fractions(tmp_path):
    out = tmp_path / "den"
    code = main(["denoise", "--config", str(CONFIGS / "denoise.toml"), "--out", str(out)])
    assert code == 0
    with open(out / "steps.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    summary = json.loads((out / "denoise_summary.json").read_text())
    ok, parts = True, []
    for kind in ("gaussian", "projection"):
        runs = sorted((r for r in summary["runs"] if r["kind"] == kind), key=lambda r: -r["frac"])
        fracs = [r["frac"] for r in runs]
        med = [float(np.median([float(x["trial_step_norm"]) for x in rows
                                if x["kind"] == kind and float(x["frac"]) == f])) for f in fracs]
        Ks = [r["K"] for r in runs]
        monotone = all(a >= b for a, b in zip(med, med[1:]))
        fastest = Ks[0] == min(Ks) and fracs[0] == 1.0
        ok &= monotone and fastest and all(r["terminated"] for r in runs)
        parts.append(f"{kind}: medians(1.0->low)=" + ",".join(f"{m:.3g}" for m in med) + f" K={Ks}")
    record(11, "sketched denoising step sizes", ok, "; ".join(parts))


# ---------------------------------------------------------------- 12


MONTECARLO_SMALL = """
seed = 12
mode = "both"
trials = 1000
ensemble_csv = true
oracle = "noisy"
noise.sigma_scale = 0.01
[stopping]
p = [0.7]
threshold = [10.0]
gamma = [0.3]
[fixed_n]
n = 50
trials = 5000
[problem]
id = "quadratic"
rotation_seed = 3
[bounds]
omega = 4.0
"""


def test_criterion_12_determinism(tmp_path, monkeypatch):
    mc = tmp_path / "montecarlo.toml"
    mc.write_text(MONTECARLO_SMALL, encoding="utf-8")
    configs = {name: CONFIGS / f"{name}.toml" for name in ("solve", "mle", "denoise", "sketchbench")}
    configs["montecarlo"] = mc
    mismatched, files = [], 0
    for name, cfg in configs.items():
        dirs = []
        for rep, threads in enumerate(("1", "4")):
            monkeypatch.setenv("SN_THREADS", threads)
            d = tmp_path / f"{name}-{rep}"
            assert main([name, "--config", str(cfg), "--out", str(d), "--seed", "99"]) == 0
            dirs.append(d)
        produced = sorted(p.name for p in dirs[0].iterdir())
        assert produced == sorted(p.name for p in dirs[1].iterdir())
        for fname in produced:
            files += 1
            if (dirs[0] / fname).read_bytes() != (dirs[1] / fname).read_bytes():
                mismatched.append(f"{name}/{fname}")
    record(12, "determinism", not mismatched,
           f"{files} artifacts compared across two runs (SN_THREADS 1 vs 4), mismatched={mismatched}")
