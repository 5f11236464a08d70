"""Exception hierarchy shared by the services and the command line."""

from __future__ import annotations

from typing import Optional


class InputError(ValueError):
    """Raised when user-supplied data violates a precondition."""


class GridMismatchError(InputError):
    """Raised when per-pixel arrays do not share the same grid."""


class LightingError(InputError):
    """Raised for malformed or degenerate (coplanar) light matrices."""


class SceneError(InputError):
    """Raised for invalid synthetic scene parameters."""


class FileFormatError(InputError):
    """Raised when a PGM, PFM, CSV or JSON artifact cannot be parsed."""


class ConfigError(InputError):
    """Raised for malformed solver configuration."""


class OracleSizeError(InputError):
    """Raised when the dense gradient oracle is asked for a large grid."""


class SolverError(RuntimeError):
    """Raised when a numerical solver fails to produce a result."""


class IntegrationError(SolverError):
    """Raised when normal integration does not converge."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(message)
        self.residual = residual


class DivergenceError(SolverError):
    """Raised when lazy backtracking cannot find an admissible constant."""

    def __init__(self, message: str, lipschitz: Optional[float] = None) -> None:
        super().__init__(message)
        self.lipschitz = lipschitz


__all__ = [
    "ConfigError",
    "DivergenceError",
    "FileFormatError",
    "GridMismatchError",
    "InputError",
    "IntegrationError",
    "LightingError",
    "OracleSizeError",
    "SceneError",
    "SolverError",
]
