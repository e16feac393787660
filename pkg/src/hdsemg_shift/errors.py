"""Exception hierarchy.

Errors fall into two families that the command line maps to distinct exit
codes: data errors (bad files, bad parameters, unusable recordings) and
analysis degeneracies (nothing left to fit, test, or summarise).
"""


class HDsEMGError(Exception):
    """Base class for all package errors."""


class DataError(HDsEMGError):
    """Input data or configuration cannot be used."""


class AnalysisDegeneracyError(HDsEMGError):
    """An analysis step has no well-defined result for the given data."""


class InvalidConfigurationError(DataError, ValueError):
    pass


class InvalidInputError(DataError, ValueError):
    pass


class FileFormatError(DataError):
    pass


class ManifestError(DataError):
    pass


class InsufficientDataError(DataError, ValueError):
    pass


class DegenerateRegistrationError(DataError):
    pass


class UnreliableScanError(DataError):
    pass


class CornerLabelingError(DataError):
    pass


class EmptySegmentationError(AnalysisDegeneracyError):
    pass


class UndefinedFeatureError(AnalysisDegeneracyError):
    pass


class UnfittableError(AnalysisDegeneracyError):
    pass


class InsufficientOverlapError(AnalysisDegeneracyError):
    pass


class DegenerateSampleError(AnalysisDegeneracyError):
    pass
