from typing import Optional, Sequence


class VortexError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidInputError(VortexError, ValueError):
    pass


class SingularityError(VortexError):
    """Two points (or a point and itself) closer than the evaluation floor."""


class CapacityError(VortexError):
    pass


class PreconditionError(VortexError):
    pass


class ConditionFailure(PreconditionError):
    """The non-resonance condition on the vortex strengths fails for some subset."""

    def __init__(self, message: str, subset: Optional[Sequence[int]] = None, value: float = 0.0):
        super().__init__(message)
        self.subset = tuple(subset or ())
        self.value = float(value)
