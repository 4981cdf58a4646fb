"""Exception types raised across the package."""


class MorError(Exception):
    """Base class for all errors raised by mortv."""


class NonFiniteMatrix(MorError, ValueError):
    pass


class EmptyMatrix(MorError, ValueError):
    pass


class AllColumnsDegenerate(MorError, ValueError):
    pass


class RankTooLow(MorError, ValueError):
    pass


class SingularShift(MorError, ArithmeticError):
    """(A - s0 E) is singular: s0 sits on a generalized eigenvalue."""


class ConvergenceFailure(MorError, RuntimeError):
    pass


class UnstablePencil(MorError, ValueError):
    pass


class SizeGuard(MorError, ValueError):
    pass


class SingularStiffness(MorError, ValueError):
    pass


class PositionOutOfRange(MorError, ValueError):
    pass


class SingularReducedE(MorError, ArithmeticError):
    pass


class BasisDegenerate(MorError, ValueError):
    pass


class WrongCoupling(MorError, ValueError):
    pass


class SingularTransformation(MorError, ArithmeticError):
    pass


class SingularStep(MorError, ArithmeticError):
    pass


class GridMismatch(MorError, ValueError):
    pass


class MissingData(MorError, FileNotFoundError):
    pass


class ConfigError(MorError, ValueError):
    pass
