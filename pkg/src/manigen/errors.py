"""Exception taxonomy shared by all modules.

Every error carries an ``exit_code`` used by the CLI: 2 for usage/config
problems, 1 for runtime/numerical failures.
"""


class ManigenError(Exception):
    exit_code = 1


class FormatError(ManigenError):
    """Malformed or truncated file content."""

    exit_code = 2


class DataError(ManigenError):
    """Non-finite or otherwise invalid payload values."""


class ParameterError(ManigenError):
    """Argument outside its documented domain."""

    exit_code = 2


class ConfigError(ManigenError):
    """Inconsistent or incomplete configuration."""

    exit_code = 2


class AlignmentError(ManigenError):
    """Row counts of paired inputs disagree."""

    exit_code = 2


class ShapeError(ManigenError):
    """Layer or tensor shapes do not compose."""


class ConnectivityError(ManigenError):
    """Neighbor graph is disconnected; message names component sizes."""


class ConvergenceError(ManigenError):
    """Iterative solver exhausted its iteration cap."""


class SolverError(ManigenError):
    """Singular or numerically unusable linear system."""


class CalibrationError(ManigenError):
    """Perplexity bisection failed to bracket the entropy target."""


class OptimizationError(ManigenError):
    """Divergence (NaN/Inf) during gradient-based optimization."""


class SamplingError(ManigenError):
    """Divergence during the reverse diffusion trajectory."""


class DegenerateDimensionError(ManigenError):
    """Zero-variance coordinate where positive spread is required."""
