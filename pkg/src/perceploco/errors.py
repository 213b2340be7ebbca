"""Exception hierarchy shared by all modules."""


class PercepLocoError(Exception):
    """Base class for every error raised by this package."""


class SpecificationError(PercepLocoError, ValueError):
    """Invalid parameters or inputs (bad family, non-unit direction, ...)."""


class RangeError(PercepLocoError, ValueError):
    """A query falls outside the bounds of a heightfield."""


class ShapeError(PercepLocoError, ValueError):
    """Array shapes are inconsistent with the network dimensions."""


class FormatError(PercepLocoError, ValueError):
    """A serialized file is malformed, truncated or fails its checksum."""


class PhaseError(PercepLocoError, RuntimeError):
    """A foot event arrived in the wrong contact phase."""


class EmptyWindowError(PercepLocoError, ValueError):
    """Window statistics requested for an empty point set."""


class StatisticError(PercepLocoError, ValueError):
    """A statistic was requested over an empty sample."""


class StateError(PercepLocoError, RuntimeError):
    """An operation needs state (e.g. a forward trace) that is missing."""
