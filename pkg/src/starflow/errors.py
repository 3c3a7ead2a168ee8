"""Exception hierarchy shared by all modules."""


class StarflowError(Exception):
    """Base class for every error raised by the package."""


class CatalogError(StarflowError):
    pass


class ValidationError(StarflowError, ValueError):
    pass


class IntegrationError(StarflowError):
    """Step size underflow; carries the last good state and time."""

    def __init__(self, msg, state=None, time=None):
        super().__init__(msg)
        self.state = state
        self.time = time


class DivergenceError(IntegrationError):
    pass


class ResourceError(StarflowError):
    pass


class AlignmentError(StarflowError, ValueError):
    pass


class SingularPointError(StarflowError):
    """Raised when a normal-bundle construction is attempted too close to a zero of the field."""

    def __init__(self, msg, time=None, point=None, distance=None):
        super().__init__(msg)
        self.time = time
        self.point = point
        self.distance = distance


class SectionMissError(StarflowError):
    pass


class DegenerateSplittingError(StarflowError):
    def __init__(self, msg, index=None, angle=None):
        super().__init__(msg)
        self.index = index
        self.angle = angle


class MissingDataError(StarflowError):
    pass


class NoConvergenceError(StarflowError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


class InconsistentMonodromyError(StarflowError):
    pass


class ShadowingMismatchError(StarflowError):
    pass


class StalenessError(StarflowError):
    pass


class DomainError(StarflowError, ValueError):
    pass


class ZeroCandidatesError(StarflowError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report
