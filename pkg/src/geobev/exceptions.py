class GeoBEVError(Exception):
    """Base class for all package errors."""


class ShapeError(GeoBEVError, ValueError):
    pass


class ConfigError(GeoBEVError, ValueError):
    pass


class FormatError(GeoBEVError, ValueError):
    """Malformed or wrong-version file contents."""


class GenerationError(GeoBEVError, RuntimeError):
    pass


class StateError(GeoBEVError, RuntimeError):
    pass


class GeometryError(GeoBEVError, ValueError):
    pass


class InvalidValueError(GeoBEVError, ValueError):
    """Out-of-domain values: labels, masks, non-binary inputs."""
