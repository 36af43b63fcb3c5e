"""Exception types shared across the package."""


class PlanemixError(Exception):
    """Base class for all package-specific errors."""


class DegenerateFrame(PlanemixError):
    """Normal/up pair cannot form an orthonormal frame."""


class DegenerateNeighborhood(PlanemixError):
    """Local point neighborhood has covariance rank < 2."""


class InvalidK(PlanemixError):
    """Requested sample/plane count is out of range."""


class EmptyInput(PlanemixError):
    """An operation received an empty cloud or plane list."""


class ShapeMismatch(PlanemixError):
    """Mismatched array shapes in a loss or metric."""


class UnsortedSamples(PlanemixError):
    """Composition received samples out of depth order."""


class OutOfImage(PlanemixError):
    """Pixel coordinates fall outside the image."""


class EmptyDataset(PlanemixError):
    """Dataset has no usable training frames."""


class ParseError(PlanemixError):
    """A manifest, PLY file or checkpoint failed to parse."""


class MissingFile(PlanemixError):
    """A file referenced by a manifest does not exist."""


class InvalidCamera(PlanemixError):
    """Camera parameters violate their invariants."""


class VersionMismatch(PlanemixError):
    """Checkpoint format version is not recognized."""


class CorruptBlock(PlanemixError):
    """Checkpoint parameter block is truncated or mis-sized."""
