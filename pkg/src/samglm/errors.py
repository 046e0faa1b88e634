"""Exception hierarchy shared across the package."""


class SamGlmError(Exception):
    """Base class for all errors raised by samglm."""


class DegenerateCovariateError(SamGlmError, ValueError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"covariate column {column!r} has zero variance")


class SingularKernelError(SamGlmError, ValueError):
    """Covariance matrix is not positive definite even after jitter."""


class UndefinedMetricError(SamGlmError, ValueError):
    """A metric is undefined for the given inputs (e.g. zero total count)."""


class FitFailureError(SamGlmError, RuntimeError):
    """An iterative fit did not converge."""


class SimulationSpecError(SamGlmError, ValueError):
    """A simulation specification is inconsistent or would overflow."""


class SamplingError(SamGlmError, RuntimeError):
    """The MCMC sampler hit persistent divergences."""


class ConfigError(SamGlmError, ValueError):
    """Invalid or inconsistent run configuration."""


class DatasetValidationError(SamGlmError, ValueError):
    """Dataset files violate an invariant or do not match the run."""
