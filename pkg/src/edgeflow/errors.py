"""Exception hierarchy shared by every edgeflow module."""


class EdgeflowError(Exception):
    """Base class for all library errors."""


class ConfigError(EdgeflowError, ValueError):
    pass


class InvalidGraphError(ConfigError):
    pass


class InvalidSparsityError(ConfigError):
    pass


class EdgeIndexError(EdgeflowError, IndexError):
    pass


class MaskViolationError(EdgeflowError, ValueError):
    """An edge was added twice to the same trajectory."""


class BudgetError(EdgeflowError, ValueError):
    """A trajectory would grow past its step budget."""


class EnumerationTooLargeError(EdgeflowError, ValueError):
    pass


class ShapeError(EdgeflowError, ValueError):
    pass


class DegenerateDistributionError(EdgeflowError, ValueError):
    """A masked distribution has no support left."""


class ContractError(EdgeflowError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(EdgeflowError, FloatingPointError):
    pass


class CheckpointFormatError(EdgeflowError, ValueError):
    pass


class CheckpointCorruptError(CheckpointFormatError):
    pass
