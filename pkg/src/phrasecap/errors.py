"""Exception types shared across the package."""


class PhrasecapError(Exception):
    """Base class for all package errors."""


class ShapeError(PhrasecapError):
    """Tensor dimensions do not match an operation's contract."""


class ConfigError(PhrasecapError):
    """Invalid or inconsistent configuration."""


class ContractError(PhrasecapError):
    """A caller violated an operation precondition."""


class NumericError(PhrasecapError):
    """NaN/Inf or divergence detected during computation."""


class FormatError(PhrasecapError):
    """A persisted artifact has the wrong schema or version."""


class ValidationError(PhrasecapError):
    """A record failed its invariants; message names the field path."""
