"""Exception hierarchy shared by all modules."""


class StochNewtonError(Exception):
    """Base class for library errors."""


class ContractViolation(StochNewtonError, ValueError):
    """An operation was called outside its documented domain."""


class InvalidSetError(ContractViolation):
    """A box description with some lower bound above its upper bound."""


class UnsupportedProblemError(StochNewtonError):
    """The problem lacks a capability the operation needs (e.g. a Hessian)."""


class UnsupportedDiagnosticError(StochNewtonError):
    """A truth test was requested on a sample that carries no diagnostics."""


class SingularOracleError(StochNewtonError):
    """The sampled step operator is (numerically) singular."""


class OracleFailureError(StochNewtonError):
    """Repeated singular draws; the oracle configuration is pathological."""


class UndefinedBoundError(StochNewtonError):
    """A closed-form bound was evaluated where its denominator is not positive."""


class ValidationAbortedError(StochNewtonError):
    """A Monte Carlo validation could not be carried out (e.g. censoring)."""


class ConfigError(StochNewtonError):
    """Malformed or unknown configuration."""
