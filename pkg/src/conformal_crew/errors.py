"""Exception types shared across the package.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`DataError`
to exit code 3; everything else is a bug and propagates.
"""


class CrewError(Exception):
    """Base class for all package errors."""


class ConfigError(CrewError):
    """Invalid experiment configuration (bad key, bad value, bad JSON)."""


class DataError(CrewError):
    """Invalid or insufficient input data."""


# -- data ingestion -----------------------------------------------------

class MalformedRow(DataError):
    """A CSV row does not match the expected column layout."""


class ProbabilityOutOfRange(DataError):
    """A probability entry falls outside [0, 1]."""


class DuplicateId(DataError):
    """The same instance id appears more than once."""


class NonStochasticRow(DataError):
    """A probability vector does not sum to 1 within tolerance."""


class UnknownInstance(DataError):
    """An annotation references an instance id absent from the outputs."""


class LabelOutOfRange(DataError):
    """A label index falls outside [0, n)."""


class DegenerateSplit(DataError):
    """A requested split would leave one of the three parts empty."""


class InsufficientData(DataError):
    """Not enough instances to run the requested experiment."""


class NoAnnotations(DataError):
    """No annotation rows are available where at least one is required."""


class EmptyCalibration(DataError):
    """Calibration requires at least one score."""


class EmptyEstimationSet(DataError):
    """Team-size estimation requires a nonempty estimation split."""


# -- operation contracts ------------------------------------------------

class KOutOfRange(CrewError):
    """Top-k size must lie in [1, n]."""


class LengthMismatch(CrewError):
    """Parallel sequences have different lengths."""


class EmptySet(CrewError):
    """A prediction set must be nonempty."""


class EmptyPredictions(CrewError):
    """Majority voting needs at least one prediction."""


class EmptyTrace(CrewError):
    """Bound estimation needs at least one trace record."""


class EmptyAfterFilter(CrewError):
    """No trace record satisfies the bound comparison's assumption."""
