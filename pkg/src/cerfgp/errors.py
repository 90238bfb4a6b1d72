"""Exception hierarchy shared across the package.

Three broad families map onto the CLI exit codes: configuration problems
(exit 2), data problems (exit 3) and numerical problems (exit 4).
"""


class CerfgpError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class ConfigError(CerfgpError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class DataError(CerfgpError):
    """Problem with input data."""

    exit_code = 3


class SchemaError(DataError):
    """A required column is missing or the schema is malformed."""


class ParseError(DataError):
    """A cell could not be parsed as a number."""


class DatasetTooSmallError(DataError):
    """Fewer observations than the operation requires."""


class ZeroVarianceError(DataError):
    """A vector that must vary is constant."""


class NumericalError(CerfgpError):
    """Numerical failure during estimation."""

    exit_code = 4


class DegenerateGpsError(NumericalError):
    """Exposure is (near-)perfectly predicted by covariates; no overlap."""


class IllConditionedError(NumericalError):
    """Gram system could not be factorized even with escalated jitter."""


class NoSupportError(NumericalError):
    """All weights for some unit truncated to zero at a query exposure."""


class NonDifferentiableKernelError(NumericalError):
    """Derivative operation requested for a non-differentiable kernel."""


class InsufficientSideDataError(NumericalError):
    """Too few observations on one side of a candidate change point."""


class GridTooSmallError(DataError):
    """Too few usable grid points for change-point detection."""


class StateError(CerfgpError):
    """Operation called before a required earlier step."""

    exit_code = 4


class EstimationError(NumericalError):
    """An estimator could not produce a result."""


class TuningFailedError(NumericalError):
    """No hyperparameter candidate produced a usable balance score."""


class BenchmarkError(NumericalError):
    """Too many replicates failed for the benchmark to be meaningful."""
