"""Exception hierarchy shared across the package."""


class PandaError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(PandaError):
    """A configuration value violates its contract."""


class ShortageError(PandaError):
    """A manifest cannot supply enough items for a class."""

    def __init__(self, label, needed, available):
        self.label = label
        self.needed = needed
        self.available = available
        super().__init__(
            f"class {label!r} needs {needed} items but manifest supplies {available}"
        )


class StoreFormatError(PandaError):
    """Base for embedding-store file format violations."""


class BadMagicError(StoreFormatError):
    pass


class VersionMismatchError(StoreFormatError):
    pass


class TruncatedStoreError(StoreFormatError):
    pass


class DimensionMismatchError(StoreFormatError):
    pass


class MissingRecordError(PandaError):
    """A requested embedding record does not exist in the backend."""


class TransportError(PandaError):
    """The remote embedding endpoint failed at the network/protocol level."""


class PartialBalanceWarning(UserWarning):
    """Balancing stopped at max_iterations with a residual head/tail gap."""

    def __init__(self, residual_gap):
        self.residual_gap = residual_gap
        super().__init__(f"balancing stopped early with residual gap {residual_gap:.3f}")
