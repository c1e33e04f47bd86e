"""Exception types shared across the package."""


class SlimsplatError(Exception):
    """Base class for all package errors."""


class DegenerateRotationError(SlimsplatError, ValueError):
    """A quaternion with (near-)zero norm cannot define a rotation."""


class SingularCovarianceError(SlimsplatError, ValueError):
    """A 2D covariance is not invertible / not positive definite."""


class ContractViolationError(SlimsplatError, ValueError):
    """An operation was called with inputs violating its preconditions."""


class EmptySceneError(SlimsplatError, ValueError):
    """An operation would leave (or was given) a scene with no Gaussians."""


class ConfigError(SlimsplatError, ValueError):
    """Invalid configuration file, key, or value."""


class FormatError(SlimsplatError, ValueError):
    """Malformed or unsupported file content."""


class DivergenceError(SlimsplatError, RuntimeError):
    """Training produced a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}
