"""Exception types raised across the package."""


class MissknockError(Exception):
    """Base class for all package errors."""


class SingularObservedBlock(MissknockError):
    """The observed covariance block could not be factorized, even after jitter."""


class NotPositiveDefinite(MissknockError):
    pass


class ZeroEvidence(MissknockError):
    """The observed values have probability zero under the model."""


class SingleClassLabels(MissknockError):
    pass


class NonFiniteInput(MissknockError):
    pass


class FoldConstructionError(MissknockError):
    pass


class SupportTooLarge(MissknockError):
    pass


class SupportMismatch(MissknockError):
    pass


class NotStrictlyPositive(MissknockError):
    pass


class MarMechanismRefused(MissknockError):
    """The univariate pipeline only carries its guarantee under MCAR."""


class PatternSamplerError(MissknockError):
    """A per-pattern knockoff sampler could not be built."""

    def __init__(self, mask, cause):
        self.mask = mask
        self.cause = cause
        pattern = "".join("1" if bit else "0" for bit in mask)
        super().__init__(f"knockoff sampler failed for missingness pattern {pattern}: {cause}")


class ExperimentAborted(MissknockError):
    """Too many trials of a simulation failed."""
