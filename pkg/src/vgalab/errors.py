"""Exception taxonomy shared by all vgalab modules."""


class VgalabError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(VgalabError, ValueError):
    """A numeric argument is malformed: NaN/Inf, negative where forbidden, etc."""


class ShapeError(VgalabError, ValueError):
    """Array arguments have incompatible or unexpected shapes."""


class InvalidParams(VgalabError, ValueError):
    """A scalar parameter is outside its documented range."""


class FormatError(VgalabError, RuntimeError):
    """A weight container file is malformed or inconsistent."""


class IoError(VgalabError, RuntimeError):
    """A file could not be read or written."""


class CapacityError(VgalabError, RuntimeError):
    """The KV cache (or sequence budget) is exhausted."""


class InvalidSpec(VgalabError, ValueError):
    """A planted-model spec is internally inconsistent."""


class ConfigError(VgalabError, ValueError):
    """A guidance config violates its invariants or lacks required inputs."""
