"""Named errors raised by the pipelines.

The CLI maps every subclass of :class:`PipelineError` to exit code 1.
"""


class PipelineError(Exception):
    """Base class for failures a caller is expected to handle."""


class DimensionMismatch(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class InterpolationError(PipelineError):
    pass


class CharacteristicTooSmall(PipelineError):
    pass


class BudgetExceeded(PipelineError):
    pass


class AtomNotHit(PipelineError):
    pass


class Diverged(PipelineError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class RefinementBroken(PipelineError):
    def __init__(self, msg, counterexample=None):
        super().__init__(msg)
        self.counterexample = counterexample


class NoCorrelatedMultiple(PipelineError):
    pass


class NoHeavyLowDegreeCoefficient(PipelineError):
    pass


class PromiseViolated(PipelineError):
    pass


class NoApproximation(PipelineError):
    pass
