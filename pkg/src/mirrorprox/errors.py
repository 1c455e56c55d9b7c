"""Exception hierarchy shared by all solver modules."""


class MirrorProxError(Exception):
    """Base class for every error raised by the package."""


class InputError(MirrorProxError, ValueError):
    """Malformed arguments: shape mismatch, out-of-range parameters, domain violations."""


class UnboundedProxError(MirrorProxError):
    """The prox-mapping has no minimizer (nonpositive cost on an uncapped epigraph scalar)."""


class NumericalError(MirrorProxError):
    """A linear-algebra kernel failed (e.g. SVD did not converge)."""


class CapabilityError(MirrorProxError):
    """The requested operation is not available for this block, domain or problem."""


class StepsizeCollapseError(MirrorProxError):
    """Adaptive stepsize search exhausted its retries without satisfying the acceptance test."""

    def __init__(self, message, gamma=None, delta=None):
        super().__init__(message)
        self.gamma = gamma
        self.delta = delta


class ScheduleError(MirrorProxError):
    """Averaging weights violate the nondecreasing weight/stepsize ratio condition."""


class AssemblyError(MirrorProxError):
    """A multi-term or constrained problem description is structurally inconsistent."""


class StateError(MirrorProxError):
    """An operation was invoked on an object in an unusable state (e.g. empty filter)."""


class BoundInconsistencyError(MirrorProxError):
    """Bound inputs contradict each other (e.g. an upper bound below a provable minimum)."""
