"""Exception hierarchy.

Each top-level family maps to one CLI exit code: configuration problems
exit with 2, backend/model problems with 3, data problems with 4.
"""

from __future__ import annotations


class EngineError(Exception):
    exit_code = 1


class ConfigError(EngineError):
    exit_code = 2


class BackendError(EngineError):
    exit_code = 3


class TransportError(BackendError):
    pass


class BackendRefusal(BackendError):
    pass


class BudgetExceeded(BackendError):
    pass


class ParseFailure(BackendError):
    """A model reply could not be turned into the structure we asked for."""


class DataError(EngineError):
    exit_code = 4


class UnknownDataset(DataError):
    pass


class MissingBinding(DataError):
    pass


class EmptyInput(DataError):
    pass


class ZeroVector(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ImageLoadError(DataError):
    pass


class CorpusParseError(DataError):
    pass


class InsufficientData(DataError):
    pass


class ManifestParseError(DataError):
    pass


class SplitLeakage(DataError):
    pass


class MissingPrediction(DataError):
    pass


class InsufficientNegatives(DataError):
    pass


class FrozenPromptsViolation(DataError):
    pass


class EmptyExtraction(DataError):
    """Every extraction prompt came back empty for an image.

    Carries the (empty) extraction so callers can continue with
    image-only retrieval.
    """

    def __init__(self, message: str, extraction=None):
        super().__init__(message)
        self.extraction = extraction
