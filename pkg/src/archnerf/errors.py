"""Exception hierarchy shared by every module of the package."""


class ArchNerfError(Exception):
    """Base class for all package errors."""


# geometry
class Collinear(ArchNerfError, ValueError):
    pass


class Degenerate(ArchNerfError, ValueError):
    pass


# scene / camera
class UnknownPreset(ArchNerfError, KeyError):
    pass


class OriginOutsideRoom(ArchNerfError, ValueError):
    pass


class InvalidFov(ArchNerfError, ValueError):
    pass


class OutOfBounds(ArchNerfError, IndexError):
    pass


class StationOutsideRoom(ArchNerfError, ValueError):
    pass


# dataset
class DepthOverflow(ArchNerfError, ValueError):
    pass


class MissingFile(ArchNerfError, FileNotFoundError):
    pass


class MalformedManifest(ArchNerfError, ValueError):
    pass


class NonRigidPose(ArchNerfError, ValueError):
    pass


# priors
class AmbiguousFloor(ArchNerfError, ValueError):
    pass


# rendering / losses / metrics
class ShapeMismatch(ArchNerfError, ValueError):
    pass


class InvalidBounds(ArchNerfError, ValueError):
    pass


class CountMismatch(ArchNerfError, ValueError):
    pass


class DimensionMismatch(ArchNerfError, ValueError):
    pass


class EmptyBatch(ArchNerfError, ValueError):
    pass


class EmptyMask(ArchNerfError, ValueError):
    pass


class TooSmall(ArchNerfError, ValueError):
    pass


# training
class ConfigInvalid(ArchNerfError, ValueError):
    pass


class MissingPriors(ArchNerfError, ValueError):
    pass


class ImageTooSmall(ArchNerfError, ValueError):
    pass
