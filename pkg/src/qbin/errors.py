"""Exception hierarchy shared by every module."""


class QBinError(Exception):
    """Base class for all package errors."""


class SchemaError(QBinError):
    pass


class IngestionError(QBinError):
    pass


class ConfigError(QBinError):
    pass


class CapacityError(QBinError):
    pass


class AssociationError(QBinError):
    """Association is not 1:1 where the construction requires it."""


class ConsistencyError(QBinError):
    pass


class IntegrityError(QBinError):
    """Layout, store or ciphertext failed an integrity check."""


class TamperError(IntegrityError):
    pass


class VersionMismatch(IntegrityError):
    pass


class ConstraintError(QBinError):
    pass


class KeyReuseError(QBinError):
    pass


class ProtocolError(QBinError):
    pass


class MalformedLog(QBinError):
    pass


class BestMatchTooWide(QBinError):
    """Only the root (or a bin-less level) covers the range."""
