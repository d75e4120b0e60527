"""Exceptions raised by the cascade lab"""


class CascadeLabError(Exception):
    """Base class for every error raised by this package"""


class SchemaError(CascadeLabError, ValueError):
    """Spec document does not match the expected JSON layout"""


class InvariantError(CascadeLabError, ValueError):
    """Spec document parses but violates a normalization or range rule"""


class DepthError(CascadeLabError, ValueError):
    """Requested level goes deeper than the sampled realization"""


class OutOfRangeError(CascadeLabError, ValueError):
    """Level-set value lies outside the projected range"""


class BinningError(CascadeLabError, ValueError):
    """Bin width below the floating point floor"""


class DivergedError(CascadeLabError, ArithmeticError):
    """A moment functional is zero or infinite"""


class BracketError(CascadeLabError, ArithmeticError):
    """Root bracket expansion ran past its limit"""


class EmptyJError(CascadeLabError, ArithmeticError):
    """No q with q*tau'(q) - tau(q) > 0 inside the scan window"""


class NonMonotoneError(CascadeLabError, ArithmeticError):
    """F_L samples are not strictly increasing"""


class EmptyBallError(CascadeLabError, ArithmeticError):
    """Every sampled point has an empty smallest ball"""


class DegenerateError(CascadeLabError, ArithmeticError):
    """Too few usable levels for a scaling fit"""


class CapacityError(CascadeLabError, MemoryError):
    """Requested depth exceeds the memory guard"""
