"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``InputError`` -> 2, ``NumericalError`` -> 3.
"""


class RoadAugError(Exception):
    pass


class ContractError(RoadAugError, ValueError):
    """A caller broke a precondition (shapes, ranges, non-scalar objective)."""


class InputError(RoadAugError):
    """Bad data on disk or in a config: missing files, malformed annotations."""


class ImageNotFoundError(InputError, FileNotFoundError):
    pass


class UnsupportedFormatError(InputError):
    pass


class CorruptImageError(InputError):
    pass


class NumericalError(RoadAugError, ArithmeticError):
    """Non-finite values, solver breakdown or non-convergence."""
