"""Exception hierarchy shared by all modules."""


class GrbmError(Exception):
    """Base class for errors raised by this package."""


class ContractViolation(GrbmError, ValueError):
    """An argument violated a documented precondition (shape, range, emptiness)."""


class NumericFailure(GrbmError, FloatingPointError):
    """A NaN or Inf appeared during a computation.

    ``last_good`` carries the most recent finite parameters when the failure
    happened inside a training run.
    """

    def __init__(self, message, last_good=None, epoch=None, batch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch
        self.batch = batch


class CapabilityError(GrbmError):
    """The requested exact computation is infeasible (too many hidden units)."""


class FormatError(GrbmError, ValueError):
    """A binary file does not match its expected layout."""


class ResolutionError(GrbmError, LookupError):
    """A stopping decision points at an epoch that has no stored checkpoint."""


class MissingArtifact(GrbmError, FileNotFoundError):
    """A prerequisite file produced by another command is absent or unreadable."""


class ConfigError(GrbmError, ValueError):
    """Invalid run configuration."""
