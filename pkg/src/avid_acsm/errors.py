"""Exception types raised across the package."""


class AcsmError(ValueError):
    pass


class ZeroNorm(AcsmError):
    pass


class LengthMismatch(AcsmError):
    pass


class ShapeMismatch(AcsmError):
    pass


class StaleCache(AcsmError):
    pass


class NonPositiveTemperature(AcsmError):
    pass


class MomentumOutOfRange(AcsmError):
    pass


class InvalidTarget(AcsmError):
    pass


class EmptyBucket(AcsmError):
    pass


class EmptyNegativePool(AcsmError):
    pass


class InsufficientPool(AcsmError):
    pass


class InvalidLabel(AcsmError):
    pass


class DuplicateEpochUpdate(AcsmError):
    pass


class InvalidConfig(AcsmError):
    pass


class EmptyCollection(AcsmError):
    pass


class DegenerateSplit(AcsmError):
    pass


class InvalidSweepKey(AcsmError):
    pass
