"""Exception hierarchy for the kspread package."""


class KspreadError(Exception):
    """Base class for all package errors."""


class NormalizationError(KspreadError):
    """Type proportions or weights violate their normalization constraints."""


class NonFiniteMoment(KspreadError):
    """An offspring law has an undefined or infinite mean/variance."""


class EmptySupport(KspreadError):
    """An empirical offspring law was given no support atoms."""


class PopulationTooSmall(KspreadError):
    """Integer type counts cannot be realized with every class nonempty."""


class ConvergenceFailure(KspreadError):
    """An iterative numerical routine exhausted its iteration budget."""


class NonConvergence(ConvergenceFailure):
    """Fixed-point iteration for the extinction probability did not settle."""


class Subcritical(KspreadError):
    """The mean offspring matrix has spectral radius <= 1; no positive root."""


class DegenerateDenominator(KspreadError):
    """The Taylor-inversion constant 1 - sum beta_i gamma_i E[L^i] e^{-beta_i theta} is <= 0."""


class DegenerateVariance(KspreadError):
    """A closed-form variance evaluated to a negative number."""


class DomainError(KspreadError):
    """Kernel evaluated outside its domain (e.g. acquisition fraction >= 1)."""


class CalledOnTerminated(KspreadError):
    """step() was invoked on a chain state with zero remaining capacity."""


class RunawayEpidemic(KspreadError):
    """The chain exceeded its hard iteration cap; indicates an RNG or model bug."""


class ThetaUnavailable(KspreadError):
    """Survival classification requested without a duration scale theta."""


class TooFewSamples(KspreadError):
    """A statistical test was given fewer samples than it supports."""


class SparseCells(KspreadError):
    """Contingency table cannot be binned to expected cell counts >= 5."""


class GridMismatch(KspreadError):
    """Snapshots passed to a covariance check do not share a common grid."""


class InsufficientSurvivors(KspreadError):
    """Fewer than 30 surviving replicates for a distributional check."""


class RebalanceImpossible(KspreadError):
    """A sweep point cannot be rebalanced to keep the total weight equal to 1."""


class ConfigError(KspreadError):
    """A configuration document is missing fields or has invalid values."""
