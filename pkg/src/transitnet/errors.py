"""Shared exception types."""


class TransitNetError(Exception):
    """Base class for all package errors."""


class DimensionError(TransitNetError):
    """Tensor or matrix shapes do not conform."""


class UnsupportedOpError(TransitNetError):
    """Requested primitive is not part of the engine."""


class NumericError(TransitNetError):
    """Non-finite values encountered during computation."""


class ConfigError(TransitNetError):
    """Invalid or inconsistent configuration."""


class DataError(TransitNetError):
    """Malformed or inconsistent input data (unknown ids, bad ranges)."""


class CoverageError(TransitNetError):
    """Input data does not span the required time range."""


class ContractError(TransitNetError):
    """An operation precondition was violated by the caller."""


class IntegrityError(TransitNetError):
    """Checkpoint file failed checksum or format validation."""
