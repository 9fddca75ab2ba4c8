"""Exception hierarchy shared by all manifoldmix modules."""


class ManifoldError(Exception):
    """Base class for every error raised by manifoldmix."""


class InvalidPointError(ManifoldError, ValueError):
    pass


class InvalidTangentError(ManifoldError, ValueError):
    pass


class BasepointMismatchError(ManifoldError, ValueError):
    pass


class CutLocusError(ManifoldError):
    """Raised when a computation would cross the cut locus.

    On the sphere the exponential map stops being a diffeomorphism at the
    antipode of the basepoint, so logarithms (and anything built on them)
    are undefined there.
    """


class ConvergenceError(ManifoldError):
    """An iterative solver hit its iteration cap.

    The last iterate is kept on ``last`` so callers can decide whether it is
    good enough.
    """

    def __init__(self, message, last=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


class UnsupportedError(ManifoldError):
    pass


class PathologicalCovarianceError(ManifoldError):
    pass


class ExperimentError(ManifoldError):
    pass
