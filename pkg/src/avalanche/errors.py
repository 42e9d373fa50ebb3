"""Exception hierarchy shared by every module of the package."""


class AvalancheError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(AvalancheError, ValueError):
    """An argument lies outside the domain of the operation."""


class VerticalGeodesic(DomainError):
    """The geodesic through two points is the vertical line mu = const."""


class CoincidentPoints(DomainError):
    pass


class ApexSingularity(DomainError):
    """dmu/dsigma is unbounded at the top of a semicircle."""


class SharpeMismatch(DomainError):
    """Two points do not lie on a common constant-Sharpe ray."""


class NonConvergence(AvalancheError, RuntimeError):
    pass


class InsufficientTail(DomainError):
    pass


class ZeroDelta(DomainError):
    """Hedge ratio requested where delta vanishes but vega does not."""


class ConfigError(DomainError):
    pass
