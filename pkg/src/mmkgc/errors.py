"""Exception hierarchy shared across the package."""


class MmkgcError(Exception):
    """Base class for all package errors."""


class ShapeError(MmkgcError):
    """Tensor dimension mismatch."""


class UsageError(MmkgcError):
    """API misuse: bad call order, invalid argument combinations."""


class ConfigError(MmkgcError):
    """Invalid configuration value."""


class DataError(MmkgcError):
    """Malformed input file or vocabulary violation."""


class OptimError(MmkgcError):
    """Optimizer abort, e.g. non-finite gradients."""


class CheckpointError(MmkgcError):
    """Corrupt or mismatched checkpoint."""


class TransportError(MmkgcError):
    """LLM endpoint unreachable or persistently failing."""
