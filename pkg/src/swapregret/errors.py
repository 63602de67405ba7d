"""Exception hierarchy shared by every module."""


class SwapRegretError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(SwapRegretError, ValueError):
    """Inputs have inconsistent shapes or are otherwise malformed."""


class ParameterError(SwapRegretError, ValueError):
    """A scalar parameter is outside its admissible range."""


class WidthViolationError(SwapRegretError, ValueError):
    """A reward lies outside the declared ``[lo, lo + width]`` range."""


class LifecycleError(SwapRegretError, RuntimeError):
    """An object was used after its horizon or after it finished."""


class ConfigurationError(SwapRegretError, OverflowError):
    """Derived configuration is not representable (e.g. horizon overflow)."""


class CapacityError(SwapRegretError, MemoryError):
    """An exact computation was requested beyond its size bound."""


class ValidationError(StructuralError):
    """A loaded object failed a semantic check (e.g. perfect recall)."""
