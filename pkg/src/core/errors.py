"""
Exception hierarchy shared by every package in the kit.

Each subsystem derives its own family from ``DlrmKitError`` so the CLI can
turn any expected failure into a diagnostic and a nonzero exit code.
"""


class DlrmKitError(Exception):
    """Base exception for all expected kit failures."""
    pass


class ShapeError(DlrmKitError, ValueError):
    """Raised when tensor extents do not agree."""
    pass


class ConfigError(DlrmKitError, ValueError):
    """Raised for invalid model or run configuration."""
    pass


class InfeasibleConfigError(ConfigError):
    """Raised when a configuration cannot be allocated at desk scale."""
    pass


class ReportMismatchError(DlrmKitError, ValueError):
    """Raised when two reports cannot be compared."""
    pass


class InvariantViolation(DlrmKitError):
    """Raised when a finished run breaks a correctness invariant."""
    pass
