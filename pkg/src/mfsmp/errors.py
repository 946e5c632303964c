"""Exception types shared across the package."""


class MfsmpError(ValueError):
    """Base class for all package-specific errors."""


class ConfigError(MfsmpError):
    """Malformed or inconsistent problem configuration."""


class TreeSizeError(MfsmpError):
    """Requested tree exceeds the exact-enumeration node cap."""


class SimulationError(MfsmpError):
    """Forward recursion produced a non-finite state."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class CostDomainError(MfsmpError):
    """A cost coefficient is undefined at some node value."""

    def __init__(self, message, level=None, node=None):
        super().__init__(message)
        self.level = level
        self.node = node
