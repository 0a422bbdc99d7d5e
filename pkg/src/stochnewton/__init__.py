"""Stochastic Newton-type optimization with backtracking on the acceptance constant."""

from .errors import (ConfigError, ContractViolation, InvalidSetError, OracleFailureError,
                     SingularOracleError, StochNewtonError, UndefinedBoundError,
                     UnsupportedDiagnosticError, UnsupportedProblemError, ValidationAbortedError)
from .oracle import (ExactOracle, NoisyOracle, NoisyOracleConfig, QuasiNewtonOracle, QuasiNewtonState,
                     ScaledIdentityOracle, SketchedOracle, exact_sample, noisy_sample, noisy_truth_test,
                     qn_oracle_step, qn_update, sketched_sample)
from .problem import (AbsQuadProblem, BatchMLEProblem, DenoisingProblem, FunctionProblem, ObjectiveProblem,
                      QuadraticProblem, ReluQuadProblem, estimate_newton_constant, eval_objective,
                      eval_subgradient, hessian_norm_bounds, min_norm_in_box, mle_batch_gradient)
from .sketch import (SketchMatrix, jl_empirical_check, sample_gaussian_sketch, sample_projection_sketch,
                     sketched_contraction_diagnostics)
from .solver import IterationRecord, RunResult, SolverConfig, accept_step, classify_run, newton_like_step, run
from .stochastics import (BernoulliProcessSpec, BoundReport, K_tail_bound, chernoff_fixed_n_tail,
                          chernoff_stopping_tail, expected_K_bound, noisy_expected_K_bound, residual_tail_bound,
                          simulate_hitting_time, validate_solver_bounds, validate_stopping_chernoff)

__version__ = "0.1.0"
