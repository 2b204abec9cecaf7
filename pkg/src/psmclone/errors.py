"""Exception hierarchy shared by all modules."""


class PSMError(Exception):
    """Base class for data and contract errors raised by this package."""


# trace parsing
class TraceError(PSMError):
    pass


class MalformedHeader(TraceError):
    pass


class RowArityMismatch(TraceError):
    pass


class TypeMismatch(TraceError):
    pass


class EmptyTrace(TraceError):
    pass


# encoding
class EmptyColumn(PSMError):
    pass


class UnknownCategory(PSMError):
    pass


# density model
class NonFiniteInput(PSMError):
    pass


class TooFewRows(PSMError):
    pass


class NonFiniteLoss(PSMError):
    pass


class AllDimsConstrained(PSMError):
    pass


class ModelFormatError(PSMError):
    pass


# statistics
class EmptySample(PSMError):
    pass


# search space
class DuplicateId(PSMError):
    pass


class TooFew(PSMError):
    pass


class UnknownId(PSMError):
    pass


# pipeline
class MissingTrace(PSMError):
    pass


class InconsistentInputs(PSMError):
    pass


class ReportFormatError(PSMError):
    pass


# corpus
class EvaluationError(PSMError):
    pass
