"""Exception hierarchy.

``InputError`` and its subclasses are caller mistakes (bad config, bad
files) and map to CLI exit code 2; everything else under ``MLDPError`` is a
runtime failure and maps to exit code 1.
"""


class MLDPError(Exception):
    pass


class InputError(MLDPError, ValueError):
    pass


class ConfigError(InputError):
    pass


class IngestionError(InputError):
    pass


class EncodingError(InputError):
    pass


class GroupingError(InputError):
    pass


class ShapeError(InputError):
    pass


class PriorConfigError(ConfigError):
    """Base prior hyperparameters are not valid (e.g. scale matrix not SPD)."""


class NumericError(MLDPError, ArithmeticError):
    pass


class UndefinedMetricError(MLDPError, ValueError):
    pass


class StateError(MLDPError, RuntimeError):
    """Sampler bookkeeping is inconsistent, or an operation needs state that is absent."""


class IndexRangeError(InputError, IndexError):
    """A group or basis index lies outside its configured range."""
