"""Exception types raised across the package."""


class ConfAwareError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ConfAwareError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class InvalidConfig(ConfigError):
    pass


# numerics

class DimensionMismatch(ConfAwareError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotPositiveDefinite(ConfAwareError, ValueError):
    pass


class SingularMatrix(ConfAwareError, ValueError):
    pass


class NonFiniteGradient(ConfAwareError, FloatingPointError):
    pass


# prototypes / losses / training

class EmptySet(ConfAwareError, ValueError):
    pass


class UnknownCategory(ConfAwareError, KeyError):
    pass


class EmptyBatch(ConfAwareError, ValueError):
    pass


class EmptyDataset(ConfAwareError, ValueError):
    pass


class EmptyCategory(ConfAwareError, ValueError):
    pass


class CategoryTooSmall(ConfAwareError, ValueError):
    pass


# inference / metrics

class EmptyList(ConfAwareError, ValueError):
    pass


class InvalidQuantile(ConfAwareError, ValueError):
    pass


class MissingClass(ConfAwareError, ValueError):
    pass


# I/O

class FormatVersionMismatch(ConfAwareError, ValueError):
    pass


class CorruptChecksum(ConfAwareError, ValueError):
    pass


class MalformedRow(ConfAwareError, ValueError):
    """A dataset CSV row failed validation. Row 0 is the header."""

    def __init__(self, row: int, reason: str):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")
