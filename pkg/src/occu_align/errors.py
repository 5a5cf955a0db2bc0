"""Exception hierarchy.

Every error maps onto one of three CLI exit classes: configuration (2),
missing dependency (3) and data (4).
"""


class OccuAlignError(Exception):
    exit_code = 4


class ConfigError(OccuAlignError):
    exit_code = 2


class DependencyError(OccuAlignError):
    exit_code = 3


class DataError(OccuAlignError, ValueError):
    exit_code = 4


# corpus
class NotFiveDigits(DataError):
    pass


class RequirementOutOfRange(DataError):
    pass


class UnknownCategory(DataError):
    pass


class EmptyTitle(DataError):
    pass


class MalformedRecord(DataError):
    pass


class IoFailure(OccuAlignError, OSError):
    exit_code = 3


class HttpError(OccuAlignError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class SchemaMismatch(DataError):
    pass


# triplets
class InsufficientKeys(DataError):
    pass


# encoder
class EmptyBatch(DataError):
    pass


class NormViolation(DataError):
    pass


class DimExceedsVector(DataError):
    pass


class EmptyTripletSet(DataError):
    pass


class NonFiniteLoss(OccuAlignError, ArithmeticError):
    pass


class EmptyCorpus(DataError):
    pass


class NotEmbeddable(DataError):
    pass


class SingleClass(DataError):
    pass


class HeaderMismatch(DataError):
    pass


class UnknownText(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


# index
class DimensionMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyIndex(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class VersionMismatch(DataError):
    pass


# isced
class NoRuleMatched(DataError):
    pass


# classifier
class EmbeddingFailure(DataError):
    pass


# evaluation
class TooFewRecords(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyQuerySet(DataError):
    pass


class EmptyApplicableSet(DataError):
    pass


# pipeline
class MissingDependency(DependencyError):
    def __init__(self, artifact: str):
        super().__init__(f"missing dependency: {artifact}")
        self.artifact = artifact


class ConfigInvalid(ConfigError):
    def __init__(self, field: str, reason: str = "invalid value"):
        super().__init__(f"config field {field!r}: {reason}")
        self.field = field
