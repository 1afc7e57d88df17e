"""Exception types raised across the package."""


class SmearFMError(Exception):
    """Base class for all package errors."""


class ConfigInvalid(SmearFMError, ValueError):
    pass


class DimensionMismatch(SmearFMError, ValueError):
    pass


class EmptyInput(SmearFMError, ValueError):
    pass


class DegenerateLine(SmearFMError):
    """The queried point is an epipole, so its epipolar line is undefined."""


class RankDeficient(SmearFMError):
    """A matrix has fewer than two significant singular values."""


class RankDeficientConstraints(SmearFMError):
    """The 7x9 constraint matrix has a null space of dimension > 2."""


class AllDegenerate(SmearFMError):
    """Every sign assignment produced a rank-deficient constraint system."""


class InsufficientData(SmearFMError):
    pass


class AllHypothesesDegenerate(SmearFMError):
    pass


class DegenerateMotion(SmearFMError):
    """Relative camera translation is (near) zero; F is undefined."""


class SparseScene(SmearFMError):
    pass


class NonConvergenceWarning(UserWarning):
    pass
