"""Exception types shared across the package."""


class LsrError(Exception):
    """Base class for all package errors."""


class DegenerateShape(LsrError):
    """Shape has no spatial variance; alignment is undefined."""


class EmptyInput(LsrError):
    pass


class EmptySeed(LsrError):
    """No manually labeled samples to start from."""


class NoSurvivors(LsrError):
    """Every sample has survival flag 0; nothing to train on."""


class SingularSystem(LsrError):
    """Unregularized normal equations are rank deficient."""


class InsufficientClass(LsrError):
    """A landmark is missing positive or negative training samples."""


class DimensionMismatch(LsrError):
    pass


class DegenerateConfiguration(LsrError):
    """Near-collinear points make the projective invariant unstable."""


class NoStableCombination(LsrError):
    """No landmark combination passed the stability threshold."""


class MalformedFile(LsrError):
    pass


class IoError(LsrError):
    pass


class InvalidRatios(LsrError):
    pass


class ZeroPupilDistance(LsrError):
    pass


class ConstantInput(LsrError):
    """Rank correlation undefined when a variable is constant."""
