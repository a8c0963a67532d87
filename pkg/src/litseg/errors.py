"""Exception types raised across the package."""


class LitsegError(Exception):
    """Base class; ``stage`` names the pipeline step that failed, if known."""

    stage = None


class ShapeMismatch(LitsegError, ValueError):
    pass


class InvalidConfig(LitsegError, ValueError):
    pass


# volume io
class BadMagic(LitsegError, ValueError):
    pass


class UnsupportedDatatype(LitsegError, ValueError):
    pass


class UnsupportedDim(LitsegError, ValueError):
    pass


class TruncatedFile(LitsegError, ValueError):
    pass


class HeaderParseError(LitsegError, ValueError):
    pass


class ObliqueAffine(LitsegError, ValueError):
    pass


# preprocessing / data
class InvalidRange(LitsegError, ValueError):
    pass


class EmptyDataset(LitsegError, ValueError):
    pass


class ZeroVariance(LitsegError, ValueError):
    pass


class EmptyLiver(LitsegError, ValueError):
    pass


class LesionOutsideLiver(LitsegError, ValueError):
    pass


class ExtentMismatch(LitsegError, ValueError):
    pass


class EmptyMask(LitsegError, ValueError):
    pass


# layers / training
class InvalidRate(LitsegError, ValueError):
    pass


class DegenerateBatch(LitsegError, ValueError):
    pass


class InvalidFanIn(LitsegError, ValueError):
    pass


class BackwardBeforeForward(LitsegError, RuntimeError):
    pass


class NonFiniteLoss(LitsegError, FloatingPointError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class EmptyLog(LitsegError, ValueError):
    pass


class CheckpointMismatch(LitsegError, ValueError):
    pass
