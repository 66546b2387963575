"""Exception taxonomy shared across the package."""


class DensifyError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DensifyError):
    """Invalid configuration value or combination; names the offending keys."""


class DatasetError(DensifyError):
    """Malformed or unreadable dataset input; carries file context."""


class OrderingError(DensifyError):
    """Keyframes submitted out of id order."""
