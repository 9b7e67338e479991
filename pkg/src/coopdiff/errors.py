"""Exception types shared across the package."""


class CoopDiffError(Exception):
    """Base class for all package errors."""


class ConfigError(CoopDiffError):
    """An invalid configuration value; the message names the offending field."""


class SingularConversionError(CoopDiffError):
    """A prediction conversion requested at a timestep where it is undefined."""


class ContractViolationError(CoopDiffError):
    """A caller broke a structural contract (gradient through a frozen or
    stop-gradient branch, unfrozen feature extractor, ...)."""


class ScheduleMismatchError(CoopDiffError):
    """Two schedules that must be related (e.g. student = rescaled teacher) are not."""


class WeightAlgebraError(CoopDiffError):
    """Checkpoint arithmetic over mismatched tensor names or shapes."""


class NonFiniteLossError(CoopDiffError):
    """Training produced a NaN/Inf loss; a diagnostic snapshot is written first."""
