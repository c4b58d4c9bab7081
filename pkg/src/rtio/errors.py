"""Exception hierarchy shared by every rtio module."""


class RtioError(Exception):
    """Base class for all rtio errors."""


# data / I/O errors ---------------------------------------------------------


class FormatError(RtioError):
    """The container file is malformed."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class ShortReadError(FormatError):
    pass


class CodecError(RtioError):
    """Encoding, decoding or (de)compression failed."""


class StorageError(RtioError):
    """A storage adapter could not satisfy a request."""


class IngestError(RtioError):
    """An ASCII input line could not be ingested."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# user errors ---------------------------------------------------------------


class UsageError(RtioError):
    """The caller asked for something the API does not allow."""


class ClosedHandleError(UsageError):
    pass


class SchemaError(UsageError):
    pass


class IncompatibleSchemaError(SchemaError):
    pass


class ExprError(UsageError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprTypeError(ExprError):
    pass


class UnknownLeafError(ExprError):
    pass


class ScanFormatError(UsageError):
    pass


class BinningMismatchError(UsageError):
    pass
