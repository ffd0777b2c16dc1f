"""Exception types shared across the package."""


class LatentikError(Exception):
    """Base class for all package errors."""


class DimensionError(LatentikError, ValueError):
    """Operand shapes or sizes are incompatible."""


class DomainError(LatentikError, ValueError):
    """Mathematical operation applied outside its domain (log/sqrt of <= 0, sigma <= 0)."""


class DegenerateInputError(LatentikError, ValueError):
    """Input too close to a singular configuration (e.g. near-zero quaternion)."""


class InvalidPoseError(LatentikError, ValueError):
    """Pose violates its invariants (non-unit quaternions beyond tolerance, wrong size)."""


class InvalidLatentError(LatentikError, ValueError):
    """Latent vector contains non-finite values or has the wrong length."""


class MissingRoleError(LatentikError, KeyError):
    """Sensor role not mapped on the skeleton."""


class InsufficientDataError(LatentikError, ValueError):
    """Dataset too small for the requested operation."""


class ColdStartError(LatentikError, RuntimeError):
    """Temporal predictor asked to run with an empty history."""


class RefreshRequiredError(LatentikError, RuntimeError):
    """Autoregressive prediction buffer is full; encoder memory must be refreshed."""


class ConfigurationError(LatentikError, ValueError):
    """Constraint or session configuration cannot be resolved."""


class CheckpointError(LatentikError, ValueError):
    """Checkpoint missing, malformed, or incompatible with the requested model."""


class ContractError(LatentikError, TypeError):
    """API contract violation (e.g. backward() on a non-scalar)."""


class ParseError(LatentikError, ValueError):
    """Malformed motion file."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(LatentikError, ValueError):
    """Malformed or out-of-order wire message."""
