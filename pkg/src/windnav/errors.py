"""Exception types shared across the package."""

from __future__ import annotations


class WindNavError(Exception):
    """Base class for all package errors."""


class WindExceedsAirspeedError(WindNavError):
    """Raised when ``|w| >= vbar`` at an evaluation point."""


class SpeedBelowFloorError(WindNavError):
    """Raised when a path interval is slower than the configured floor."""


class DegenerateGeometryError(WindNavError):
    """Raised for coincident endpoints, zero-length intervals or empty domains."""


class ShapeMismatchError(WindNavError):
    """Raised when grid sizes of combined objects disagree."""


class SingularSystemError(WindNavError):
    """Raised when the saddle-point matrix cannot be factorized reliably."""


class WitnessError(WindNavError):
    """Raised when a witness construction is given invalid hypotheses."""


class DisconnectedGraphError(WindNavError):
    """Raised when origin and destination are not connected."""


class DiagnosticsError(WindNavError):
    """Raised when a solve history is too short for diagnostics."""


class ConfigError(WindNavError):
    """Raised for malformed or unknown scenario configuration."""
