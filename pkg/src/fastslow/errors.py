"""Exception types shared across the package."""


class FastSlowError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(FastSlowError):
    pass


class NonFiniteValue(FastSlowError):
    pass


class DegenerateInput(FastSlowError):
    pass


class UntrainedCodec(FastSlowError):
    pass


class TokenOutOfRange(FastSlowError):
    pass


class DivergedTraining(FastSlowError):
    pass


class InvalidTau(FastSlowError):
    pass


class UntrainedModel(FastSlowError):
    pass


class BufferEmpty(FastSlowError):
    pass


class UnreachableGoal(FastSlowError):
    pass


class ConfigInvalid(FastSlowError):
    pass


class IOFailure(FastSlowError):
    pass


class VersionMismatch(FastSlowError):
    pass
