"""Exception hierarchy shared by every pvestim module.

Each exception belongs to one of three failure classes (configuration,
data, numerical) which the command-line front end maps to exit codes.
"""


class PVEstimError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PVEstimError):
    exit_code = 2


class DataError(PVEstimError):
    exit_code = 3


class NumericalError(PVEstimError):
    exit_code = 4


class ParseError(DataError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientHistoryError(DataError):
    pass


class RejectedSampleError(DataError):
    """A sample or estimate falls outside the admissible range."""


class AbsentChannelError(DataError):
    """A requested measurement channel (e.g. GNI) is missing."""


class DegenerateOperatingPointError(NumericalError):
    """The (v, i, T) combination makes the closed-form inversion singular."""


class ExponentOverflowError(NumericalError):
    """Diode exponent argument beyond the configured bound."""


class SolverError(NumericalError):
    pass


class IdentificationError(NumericalError):
    """STC parameter identification did not converge."""

    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)


class EstimatorDivergenceError(NumericalError):
    pass


class FilterSingularityError(NumericalError):
    pass


class ClusteringError(NumericalError):
    pass


class NormalizationError(NumericalError):
    """A metric cannot be normalized because the reference mean is zero."""
