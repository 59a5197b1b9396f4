"""Exception types raised across the package.

Every error derives from :class:`LiteFBCNError`; the subclasses that
signal bad input also derive from ``ValueError`` so callers that only
care about "bad argument" can catch that.
"""


class LiteFBCNError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(LiteFBCNError, ValueError):
    pass


class BadAxis(LiteFBCNError, ValueError):
    pass


class RtfError(LiteFBCNError, ValueError):
    """Malformed raw-tensor file."""


class BadMagic(RtfError):
    pass


class TruncatedPayload(RtfError):
    pass


class UnsupportedVersion(RtfError):
    pass


class ZeroBatch(LiteFBCNError, ValueError):
    pass


class UnrecordedForward(LiteFBCNError, RuntimeError):
    pass


class NonDivisible(LiteFBCNError, ValueError):
    pass


class SpatialMismatch(ShapeMismatch):
    pass


class VariantShapeMismatch(ShapeMismatch):
    pass


class NotPositiveDefinite(LiteFBCNError, ValueError):
    pass


class TooFewSamples(LiteFBCNError, ValueError):
    pass


class DivergedLoss(LiteFBCNError, ArithmeticError):
    def __init__(self, epoch, loss):
        super().__init__(f"loss diverged to {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class LabelOutOfRange(LiteFBCNError, ValueError):
    pass


class ConfigError(LiteFBCNError, ValueError):
    pass
