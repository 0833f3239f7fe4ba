"""Exception types shared across the package."""


class RiccmodError(Exception):
    """Base class for all errors raised by riccmod."""


class NonFinite(RiccmodError, ValueError):
    pass


class DimensionMismatch(RiccmodError, ValueError):
    pass


class NotPsd(RiccmodError):
    pass


class NotPd(RiccmodError):
    pass


class KindMismatch(RiccmodError):
    pass


class DowndateBreaksPd(RiccmodError):
    """A Cholesky downdate would leave a non-positive pivot.

    Callers are expected to fall back to an eigen factorization of the
    explicitly formed matrix.
    """


class InnerSystemSingular(RiccmodError):
    pass


class InfeasibleOrUnbounded(RiccmodError):
    """The right-hand side at a singular stage is outside range(G).

    ``stage`` is the time index t whose G_{t+1} failed; ``direction`` is a
    unit vector in null(G_{t+1}) with a nonzero component of the right-hand
    side, usable as a zero-curvature search ray.
    """

    def __init__(self, stage, direction=None, message=None):
        self.stage = stage
        self.direction = direction
        super().__init__(message or f"inconsistent singular system at stage {stage}")


class RangeConditionViolated(RiccmodError):
    pass


class IterationLimit(RiccmodError):
    pass


class UnboundedDirection(RiccmodError):
    pass


class CycleDetected(RiccmodError):
    pass


class ThresholdExceeded(RiccmodError):
    def __init__(self, worst, value, threshold):
        self.worst = worst
        self.value = value
        self.threshold = threshold
        super().__init__(f"residual {value:.3e} exceeds {threshold:.1e} (row {worst})")
