"""Composite Mirror Prox: extragradient steps, adaptive stepsizes and the run loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .certificates import AccuracyCertificate, ExecutionProtocol, ProtocolAccumulator
from .errors import InputError, ScheduleError, StepsizeCollapseError
from .prox import CompositePoint, composite_prox

ACCEPT_RTOL = 1e-12


@dataclass
class SaddleOperator:
    """Field ``F(u, v) = [Fu(u); Fv]`` of a composite saddle problem.

    Parameters
    ----------
    Fu : callable
        Maps the flat ``u`` vector to the ``u`` part of the field.
    Fv : array_like
        Constant positive costs of the epigraph scalars.
    lipschitz : float, optional
        Lipschitz constant of ``Fu`` w.r.t. the aggregated norm, when known.
    M : float
        Size of the non-Lipschitz part; zero for smooth operators.
    """

    Fu: Callable
    Fv: np.ndarray
    lipschitz: float | None = None
    M: float = 0.0

    def __post_init__(self):
        self.Fv = np.atleast_1d(np.asarray(self.Fv, dtype=float))
        if self.M < 0:
            raise InputError("M must be nonnegative")


@dataclass
class StepPolicy:
    """Grow/shrink rule for the stepsize guess."""

    initial_guess: float = 1.0
    grow_factor: float = 1.2
    shrink_factor: float = 0.8
    max_retries: int = 50

    def __post_init__(self):
        if self.initial_guess <= 0:
            raise InputError("initial stepsize guess must be positive")
        if self.grow_factor <= 1:
            raise InputError("grow factor must exceed 1")
        if not 0 < self.shrink_factor < 1:
            raise InputError("shrink factor must lie in (0, 1)")
        if self.max_retries < 1:
            raise InputError("max_retries must be at least 1")


@dataclass
class StepResult:
    y: CompositePoint
    x_next: CompositePoint
    delta: float
    gamma: float
    Fu_y: np.ndarray
    Fu_x: np.ndarray
    scale: float = 0.0


@dataclass
class RunState:
    """Mutable state of one solve: the current prox center and the protocol so far."""

    x_current: CompositePoint
    protocol: object
    gamma_history: list = field(default_factory=list)
    delta_history: list = field(default_factory=list)
    iteration: int = 0
    next_gamma: float = 1.0
    retries: int = 0
    fu_cache: np.ndarray | None = None

    @property
    def averaged(self):
        return self.protocol.averaged_point() if isinstance(self.protocol, ProtocolAccumulator) else None


def comp_mp_step(state, op, setup, gamma):
    """One extragradient step from ``state.x_current`` with stepsize ``gamma``.

    Returns the search point ``y``, the next center and
    ``delta = gamma<Fu(y) - Fu(x), y - x_next> - V_y(x_next) - V_x(y)``.
    """
    if gamma <= 0:
        raise InputError(f"stepsize must be positive, got {gamma}")
    x = state.x_current
    if state.fu_cache is None:
        state.fu_cache = op.Fu(x.u)
    Fu_x = state.fu_cache
    gFv = gamma * op.Fv
    y = composite_prox(x, gamma * Fu_x, gFv, setup)
    Fu_y = op.Fu(y.u)
    x_next = composite_prox(x, gamma * Fu_y, gFv, setup)
    lin = gamma * float(np.dot(Fu_y - Fu_x, y.u - x_next.u))
    v1 = setup.bregman(y.u, x_next.u)
    v2 = setup.bregman(x.u, y.u)
    delta = lin - v1 - v2
    return StepResult(y, x_next, delta, gamma, Fu_y, Fu_x, abs(lin) + v1 + v2)


def _accepts(step, M):
    bound = step.gamma ** 2 * M ** 2
    return step.delta <= bound + ACCEPT_RTOL * max(1.0, step.scale)


def _record(state, op, step):
    p = state.protocol
    if isinstance(p, ProtocolAccumulator):
        p.append(step.y, step.Fu_y, op.Fv, step.gamma)
    else:
        p.append(step.y, step.Fu_y, op.Fv)
    state.gamma_history.append(step.gamma)
    state.delta_history.append(step.delta)
    state.x_current = step.x_next
    state.fu_cache = None
    state.iteration += 1


def adaptive_step(state, op, setup, policy):
    """Shrink the stepsize until ``delta <= gamma^2 M^2``, record the step, grow the guess."""
    gamma = state.next_gamma
    step = None
    for _ in range(policy.max_retries):
        step = comp_mp_step(state, op, setup, gamma)
        if np.isfinite(step.delta) and _accepts(step, op.M):
            _record(state, op, step)
            state.next_gamma = gamma * policy.grow_factor
            return step
        state.retries += 1
        gamma *= policy.shrink_factor
    raise StepsizeCollapseError(
        f"no acceptable stepsize after {policy.max_retries} trials (last gamma={gamma:.3e}, "
        f"delta={step.delta:.3e})",
        gamma=gamma,
        delta=step.delta,
    )


def fixed_step(state, op, setup, gamma):
    """Step with a prescribed stepsize; the step is recorded whatever ``delta`` is."""
    step = comp_mp_step(state, op, setup, gamma)
    _record(state, op, step)
    return step


def power_of_two_checkpoints(max_iters):
    out = []
    t = 1
    while t <= max_iters:
        out.append(t)
        t *= 2
    return out


@dataclass
class Restart:
    """Signal from a callback: start a new certificate phase, optionally with a new problem."""

    operator: SaddleOperator | None = None
    setup: object | None = None
    x: CompositePoint | None = None


STOP = "stop"


@dataclass
class RunResult:
    state: RunState
    checkpoints: dict
    phases: int
    stopped: bool
    exhausted: bool
    operator: SaddleOperator
    setup: object

    @property
    def protocol(self):
        return self.state.protocol

    @property
    def certificate(self):
        """Stepsize-proportional certificate of the last phase."""
        n = len(self.state.protocol)
        return AccuracyCertificate.proportional(self.state.gamma_history[-n:])


def _new_protocol(setup, keep_history):
    if keep_history:
        return ExecutionProtocol()
    return ProtocolAccumulator(setup.layout.dim_u, setup.layout.dim_v)


def run(op, setup, x1, policy=None, max_iters=1000, checkpoints=None, callback=None,
        keep_history=False, gamma=None):
    """Run CoMP for up to ``max_iters`` steps.

    Parameters
    ----------
    op : SaddleOperator
    setup : AggregatedSetup
    x1 : CompositePoint
        Starting point.
    policy : StepPolicy, optional
        Adaptive stepsize rule; ignored when ``gamma`` is given.
    checkpoints : iterable of int, optional
        Steps at which the averaged point is stored (default powers of two).
    callback : callable, optional
        ``callback(state, step)`` after every accepted step.  Returning a
        :class:`Restart` starts a new phase from the current point; returning
        ``STOP`` ends the run.
    keep_history : bool
        Store the full protocol instead of running sums.
    gamma : float, optional
        Constant stepsize.

    Returns
    -------
    RunResult
    """
    if max_iters < 0:
        raise InputError("max_iters must be nonnegative")
    policy = policy or StepPolicy()
    marks = set(power_of_two_checkpoints(max_iters) if checkpoints is None else checkpoints)
    state = RunState(x_current=x1.copy(), protocol=_new_protocol(setup, keep_history),
                     next_gamma=policy.initial_guess)
    saved = {}
    phases = 1
    stopped = False
    while state.iteration < max_iters:
        if gamma is not None:
            step = fixed_step(state, op, setup, gamma)
        else:
            step = adaptive_step(state, op, setup, policy)
        if state.iteration in marks:
            saved[state.iteration] = _averaged(state)
        if callback is not None:
            signal = callback(state, step)
            if signal is STOP:
                stopped = True
                break
            if isinstance(signal, Restart):
                op = signal.operator or op
                setup = signal.setup or setup
                if signal.x is not None:
                    state.x_current = signal.x.copy()
                state.fu_cache = None
                state.protocol = _new_protocol(setup, keep_history)
                phases += 1
    return RunResult(state, saved, phases, stopped, not stopped, op, setup)


def _averaged(state):
    p = state.protocol
    if isinstance(p, ProtocolAccumulator):
        return p.averaged_point()
    n = len(p)
    cert = AccuracyCertificate.proportional(state.gamma_history[-n:])
    return p.summary(cert).point


def validate_schedule(weights, gammas):
    """Raise :class:`ScheduleError` unless ``lambda_tau / gamma_tau`` is nondecreasing."""
    w = np.asarray(weights, dtype=float)
    g = np.asarray(gammas, dtype=float)
    if w.shape != g.shape:
        raise InputError("weights and stepsizes must have equal length")
    r = w / g
    bad = np.nonzero(np.diff(r) < -1e-15 * np.maximum(1.0, np.abs(r[:-1])))[0]
    if bad.size:
        i = int(bad[0])
        raise ScheduleError(f"lambda/gamma decreases at step {i + 1}: {r[i]:.6g} > {r[i + 1]:.6g}")


def weighted_schedule(gamma_history, kind="proportional"):
    """Averaging weights built from the stepsizes.

    ``proportional`` gives ``gamma / sum(gamma)``; ``last_half_uniform`` drops the
    first half of the steps and keeps stepsize-proportional weights on the
    rest; ``uniform`` gives equal weights and is checked like any other schedule.
    """
    g = np.asarray(gamma_history, dtype=float)
    if g.size == 0 or np.any(g <= 0):
        raise InputError("need at least one positive stepsize")
    if kind == "proportional":
        w = g / g.sum()
    elif kind == "last_half_uniform":
        w = g.copy()
        w[: g.size // 2] = 0.0
        w /= w.sum()
    elif kind == "uniform":
        w = np.full(g.size, 1.0 / g.size)
    else:
        raise InputError(f"unknown schedule {kind!r}")
    validate_schedule(w, g)
    return AccuracyCertificate(w)
