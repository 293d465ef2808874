"""Exception hierarchy.

Two roots map onto CLI exit codes: :class:`ValidationError` (bad input,
exit 2) and :class:`NumericalError` (solver or divergence failure, exit 3).
"""


class MFKnotsError(Exception):
    pass


class ValidationError(MFKnotsError, ValueError):
    pass


class NumericalError(MFKnotsError, ArithmeticError):
    pass


# data
class ParseError(ValidationError):
    def __init__(self, msg, line=None):
        self.line = line
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)


class DuplicateInput(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class PaddingTooSmall(ValidationError):
    pass


# particle
class StepTooLarge(ValidationError):
    pass


class WidthTooLarge(ValidationError):
    pass


class CurvatureUndefined(ValidationError):
    pass


class NonFinite(NumericalError):
    pass


# gibbs
class QuadratureNotConverged(NumericalError):
    pass


class ChainNotMixed(NumericalError):
    pass


class NotConverged(NumericalError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory if trajectory is not None else []


# clusterset / pwl
class LambdaZero(ValidationError):
    pass


class PointInsideOmega(ValidationError):
    pass


class PointNotPositive(ValidationError):
    pass


class PositiveSetTooSmall(ValidationError):
    pass


class TooManyKnots(NumericalError):
    pass


# harness
class LambdaOutOfRange(ValidationError):
    pass


class UnknownFigure(ValidationError):
    pass
