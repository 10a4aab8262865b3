"""Exception hierarchy shared by every module."""


class MvgError(Exception):
    """Base class for all library errors."""


class ParameterError(MvgError, ValueError):
    """A scalar or shape parameter is outside its valid range."""


class StructureError(MvgError, ValueError):
    """An operand lacks the required structure (SPD, symmetric, PSD flag)."""


class AllocationError(MvgError, ValueError):
    """A precision allocation is invalid (non-positive share or overspend)."""


class SizeError(MvgError, ValueError):
    """An operation would allocate more memory than its configured cap."""


class NumericalError(MvgError, ArithmeticError):
    """A numerical routine failed to converge."""


class ConsistencyError(MvgError, AssertionError):
    """An internal invariant was violated; indicates a bug, not user error."""


class ConfigError(MvgError, ValueError):
    """An experiment configuration is inconsistent with its task."""
