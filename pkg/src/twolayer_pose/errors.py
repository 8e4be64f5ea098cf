"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Base class for geometric contract violations."""


class BehindCameraError(GeometryError):
    """A point required to be in front of the camera has Z <= epsilon."""


class DegenerateParamError(GeometryError):
    """A rotation/translation parameterization cannot be decoded."""


class InvalidMeshError(GeometryError):
    """Mesh is empty, has out-of-range faces, or a non-positive diameter."""


class MeshParseError(ValueError):
    """A mesh file could not be parsed; message carries line/offset info."""


class NoDetectionError(RuntimeError):
    """Map has an empty mask; there is nothing to initialize a pose from."""


class NoSolutionError(RuntimeError):
    """A solver could not produce a pose (e.g. too few correspondences)."""


class UndefinedRateError(ValueError):
    """A rate/AUC was requested over an empty error list."""
