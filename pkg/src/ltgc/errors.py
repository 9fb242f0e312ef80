"""Exception hierarchy shared across the package."""


class LtgcError(Exception):
    """Base class for all package errors."""


class DomainError(LtgcError, ValueError):
    """State outside the region where the equinoctial dynamics are defined."""


class DegenerateCostateError(LtgcError, ValueError):
    """|B^T lambda| (or the policy direction vector) too small to define a direction."""


class PropagationError(LtgcError, RuntimeError):
    """Integration failed: step underflow, step budget exhausted or domain error."""

    def __init__(self, message: str, status: int = -1):
        super().__init__(message)
        self.status = status


class ShootingError(LtgcError, RuntimeError):
    """Root solve of a shooting function did not converge."""


class FormatError(LtgcError, ValueError):
    """Malformed model or database file."""


class ConfigError(LtgcError, ValueError):
    """Invalid run configuration."""
