"""Exception hierarchy shared by every stage of the pipeline."""


class PhecgError(Exception):
    """Base class for all package errors."""


# ingest
class FormatError(PhecgError):
    pass


class UnsupportedFormat(FormatError):
    pass


class TruncatedSignal(PhecgError):
    pass


class CalibrationError(PhecgError):
    pass


class SchemaError(PhecgError):
    pass


class RowError(PhecgError):
    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmptyCohort(PhecgError):
    pass


# preprocess
class EmptyDataset(PhecgError):
    pass


class ShapeError(PhecgError):
    pass


class TooFewExamples(PhecgError):
    pass


class CorruptCache(PhecgError):
    pass


class VersionError(PhecgError):
    pass


# features
class TooShort(PhecgError):
    pass


class NoBeats(PhecgError):
    pass


class AxisUndefined(PhecgError):
    pass


# network
class ConfigError(PhecgError):
    pass


class DivergenceError(PhecgError):
    def __init__(self, epoch, message="non-finite loss"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


# metrics
class EmptyInput(PhecgError):
    pass


class UndefinedRoc(PhecgError):
    pass
