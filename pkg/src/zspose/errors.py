"""Exception types shared across the package.

Exceptions are grouped by how the CLI maps them to exit codes: data errors
(unreadable or malformed inputs) exit 2, estimation failures (the solver could
not produce a pose) exit 3.
"""


class ZsposeError(Exception):
    """Base class for all package-specific errors."""


# --- data errors -----------------------------------------------------------


class DataError(ZsposeError):
    """Input files or values are missing, malformed, or inconsistent."""


class BadMagic(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class TruncatedFile(DataError):
    pass


class InvalidDepth(DataError):
    pass


class NoValidDepth(DataError):
    pass


class MissingFile(DataError):
    pass


class SchemaError(DataError):
    pass


class MissingLabel(DataError):
    """Sequence manifest lacks the canonical alignment needed for ground truth."""


class DimMismatch(DataError):
    """Two feature grids disagree on descriptor dimensionality."""


class EmptyForeground(DataError):
    """A feature grid has no foreground cells to match."""


# --- estimation failures ---------------------------------------------------


class EstimationError(ZsposeError):
    """The solver ran but could not produce a usable estimate."""


class DegenerateConfiguration(EstimationError):
    """Point configuration does not constrain a similarity transform."""


class NoConsensus(EstimationError):
    """No RANSAC trial reached the minimum inlier count."""


class AllViewsUnusable(EstimationError):
    """Every candidate view scored unusable during view selection."""


class NumericalUnderflow(EstimationError):
    """Transport scaling collapsed; the regularizer is too small."""


# --- synthetic data generation ---------------------------------------------


class SamplingExhausted(ZsposeError):
    """Rejection sampling hit its draw budget without satisfying constraints."""


class NoVisibleParts(ZsposeError):
    """A rendered view sees no part of the instance."""
