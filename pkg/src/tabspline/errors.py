"""Exception and warning types raised across the package."""


class TabSplineError(ValueError):
    """Base class for all recoverable input errors."""


class NonIncreasingKnots(TabSplineError):
    pass


class KnotOutOfDomain(TabSplineError):
    pass


class DegenerateDomain(TabSplineError):
    pass


class EmptyInput(TabSplineError):
    pass


class SingleClass(TabSplineError):
    pass


class InvalidDelta(TabSplineError):
    pass


class InvalidBudget(TabSplineError):
    pass


class ShapeMismatch(TabSplineError):
    pass


class StaleCache(TabSplineError):
    """Backward pass requested with a cache from an older parameter state."""


class EmptyTrainingSet(TabSplineError):
    pass


class TargetMissing(TabSplineError):
    pass


class AllRowsDropped(TabSplineError):
    pass


class TooFewRows(TabSplineError):
    pass


class ZeroRange(TabSplineError):
    pass


class UnsupportedK(TabSplineError):
    pass


class SingularSystem(TabSplineError):
    pass


class ConfigError(TabSplineError):
    """Invalid method tag, flag combination or configuration value."""


class DegenerateDistributionWarning(UserWarning):
    pass


class ConstantColumnWarning(UserWarning):
    pass


class ClassSmallerThanKWarning(UserWarning):
    pass
