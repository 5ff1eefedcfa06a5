"""Exception hierarchy shared by every module of the package."""


class AlfaError(Exception):
    """Base class for all errors raised by :mod:`alfa`."""


# belief calculus
class FrameMismatch(AlfaError, ValueError):
    pass


class TotalConflict(AlfaError, ArithmeticError):
    """Dempster combination of fully contradictory sources."""


class UnknownClass(AlfaError, KeyError):
    pass


# models
class EmptyTrainingSet(AlfaError, ValueError):
    pass


class DimensionMismatch(AlfaError, ValueError):
    pass


class DegenerateData(AlfaError, ValueError):
    """All training points coincide, so no distance scale can be derived."""


class MissingClass(AlfaError, ValueError):
    pass


# acquisition loop
class EmptyPool(AlfaError, ValueError):
    pass


class InvalidConfig(AlfaError, ValueError):
    pass


# data ingestion
class DataError(AlfaError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class UnknownColumn(DataError):
    pass


class NonNumericValue(ParseError):
    pass


class TooShort(DataError):
    """A sequence has no valid k-mer window."""


# statistics
class ZeroVariance(AlfaError, ArithmeticError):
    pass


class LengthMismatch(AlfaError, ValueError):
    pass
