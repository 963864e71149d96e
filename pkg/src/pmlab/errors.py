"""Exception types shared across the package."""


class PmlabError(Exception):
    """Base class for all package-specific errors."""


class UndefinedRatio(PmlabError):
    """Metropolis ratio r(x, y) requested where pi(x) = 0 or q(x, y) = 0."""


class NonFiniteSpace(PmlabError):
    """Exact matrix build requested for a model that has not been discretized."""


class SupportExplosion(PmlabError):
    """Exact discrete convolution would exceed the configured atom budget."""


class GridTooLarge(PmlabError):
    """Joint transition matrix would exceed the configured entry budget."""


class AsymmetricG(PmlabError):
    """A pair functional was given a non-symmetric or negative g."""


class NotReversible(PmlabError):
    """Detailed-balance residual of a kernel exceeds tolerance."""


class ZeroGap(PmlabError):
    """Operation requires a strictly positive right spectral gap."""


class TraceTooShort(PmlabError):
    """Estimator needs a longer chain trace."""


class TruncationTooSmall(PmlabError):
    """State-space truncation does not contain the construction it must hold."""


class DivergentIntegral(PmlabError):
    """Kernel application to a test function failed a truncation-doubling check."""


class DriftFail(PmlabError):
    """A drift inequality failed at one or more evaluated points."""

    def __init__(self, message, worst_point=None):
        super().__init__(message)
        self.worst_point = worst_point


class MinorizationFail(PmlabError):
    """A claimed minorization P^n(x, .) >= eps * nu(.) failed entrywise."""


class HypothesisFail(PmlabError):
    """Preconditions (moment bounds, exponent constraints) of a check failed."""


class InequalityViolated(PmlabError):
    """A verified ordering/bound failed; carries the offending instance."""

    def __init__(self, message, instance=None):
        super().__init__(message)
        self.instance = instance


class ConfigError(PmlabError):
    """Scenario configuration failed to parse or validate."""
