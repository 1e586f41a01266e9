"""Shared exception types mapped to CLI exit codes."""


class MeanConditionError(ValueError):
    """A weight law has zero mean weight on a nearest-neighbor offset."""


class DegenerateLawError(ValueError):
    """The projected drift variance is zero; CLT experiments refuse to run."""


class BudgetError(RuntimeError):
    """A requested computation exceeds the configured cell budget."""


class QuadratureError(RuntimeError):
    """A quadrature failed to reach its target error estimate."""
