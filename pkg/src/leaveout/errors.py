"""Exception hierarchy shared by all modules.

Validation problems (bad input, violated preconditions) derive from
``ValidationError``; failures of the numerics derive from ``NumericalError``.
The command line maps the two families onto distinct exit codes.
"""


class LeaveOutError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(LeaveOutError):
    pass


class NumericalError(LeaveOutError):
    pass


# input and design construction
class EmptyPanel(ValidationError):
    pass


class SingletonWorker(ValidationError):
    pass


class DuplicateObservation(ValidationError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class MissingColumn(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class LabelMismatch(ValidationError):
    pass


class DisconnectedGraph(ValidationError):
    pass


class NoPath(ValidationError):
    pass


class NoPlan(ValidationError):
    pass


class OddT(ValidationError):
    pass


class InsufficientPeriods(ValidationError):
    pass


class DegenerateDof(ValidationError):
    pass


class RankDeficientR(ValidationError):
    pass


class InsufficientEigen(ValidationError):
    pass


# numerics
class RankDeficient(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class LeverageOne(NumericalError):
    pass


class SketchedLeverageOne(NumericalError):
    pass


class ClusterLeverageOne(NumericalError):
    pass


class SingularConditional(NumericalError):
    pass


class OptFailed(NumericalError):
    pass


class DisconnectedDraw(NumericalError):
    pass
