"""Exception types shared across the package."""


class ShillAuditError(Exception):
    """Base class for all package-specific errors."""


class DatasetError(ShillAuditError):
    """Malformed or inconsistent interaction/catalog data."""


class ConfigError(ShillAuditError):
    """Invalid configuration detected before any work is done."""


class ResponseParseError(ShillAuditError):
    """Auditor response text does not match the expected template."""


class TransportError(ShillAuditError):
    """Chat-completion request failed after exhausting retries.

    ``user_index`` identifies the audited user when the failure happened
    inside a per-candidate request, else it is None.
    """

    def __init__(self, message: str, user_index: int | None = None):
        super().__init__(message)
        self.user_index = user_index


class TrainingDivergedError(ShillAuditError):
    """Recommender loss became non-finite; carries the epoch index."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch
