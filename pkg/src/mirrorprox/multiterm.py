"""Multi-term composite minimization through a penalized saddle problem.

A problem is a set of primal blocks ``y`` (each possibly carrying a lifted
nonsmooth term), dual blocks ``z`` (balls), smooth terms ``phi(y, z)`` and
linear couplings ``y_target = A y_source + b``.  Couplings are relaxed by
``rho * ||y_target - A y_source - b||_2`` written as a max over a unit ball
``w``.  :func:`assemble` turns this into a composite saddle operator; the
correction restores every coupling exactly, and :class:`PenaltyController`
raises ``rho`` when the correction costs more than a small tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .certificates import (
    Ball,
    EpigraphCapped,
    ProtocolAccumulator,
    ResolutionDomain,
    Singleton,
    resolution,
)
from .comp import STOP, Restart, SaddleOperator, StepPolicy, run
from .errors import AssemblyError, BoundInconsistencyError, InputError
from .prox import AggregatedSetup, CompositePoint, EpigraphBlock, Layout, capped_simplex_value


def _identity(y):
    return y


# ---------------------------------------------------------------------------
# problem description


@dataclass(frozen=True)
class PrimalBlock:
    """A minimization block ``y`` with an optional lifted term ``weight*||y||``."""

    name: str
    shape: tuple
    nonsmooth: str = "none"
    weight: float = 0.0
    base: str = "whole_space"
    radius: float | None = None


@dataclass(frozen=True)
class DualBlock:
    """A maximization block ``z`` ranging over a ball."""

    name: str
    shape: tuple
    radius: float = 1.0


class SmoothTerm:
    """Smooth convex-concave ``phi(y, z)`` acting on some primal blocks and at most one dual block.

    Subclasses implement ``grad``, ``value`` and ``value_max`` (the exact
    maximum over the dual block, or ``value`` when there is none).
    ``lipschitz`` maps primal block names to Lipschitz constants of
    ``value_max`` w.r.t. the Euclidean norm, when finite.
    """

    primal: tuple = ()
    dual: str | None = None
    lipschitz: dict = {}

    def grad(self, ys, z):
        raise NotImplementedError

    def value(self, ys, z):
        raise NotImplementedError

    def value_max(self, ys):
        raise NotImplementedError


class MaskedLeastSquares(SmoothTerm):
    """``0.5*||P_Omega y - b||^2`` with ``P_Omega`` a boolean mask."""

    def __init__(self, block, mask, b):
        self.primal = (block,)
        self.block = block
        self.mask = np.asarray(mask, dtype=bool)
        self.b = np.asarray(b, dtype=float).ravel()
        if self.b.size != int(self.mask.sum()):
            raise AssemblyError("observation vector does not match the mask")
        self.lipschitz = {}

    def residual(self, y):
        return y[self.mask] - self.b

    def grad(self, ys, z):
        y = ys[self.block]
        g = np.zeros_like(y)
        g[self.mask] = self.residual(y)
        return {self.block: g}, None

    def value(self, ys, z=None):
        r = self.residual(ys[self.block])
        return 0.5 * float(np.dot(r, r))

    value_max = value


class NormResidual(SmoothTerm):
    """``<z, A(sum of blocks) - b>`` over ``||z||_2 <= radius``; its max is ``radius*||A(.) - b||``."""

    def __init__(self, blocks, dual, b, forward=_identity, adjoint=_identity, op_norm=1.0, radius=1.0):
        self.primal = tuple(blocks)
        self.dual = dual
        self.b = np.asarray(b, dtype=float)
        self.forward = forward
        self.adjoint = adjoint
        self.radius = radius
        self.lipschitz = {k: radius * op_norm for k in self.primal}

    def residual(self, ys):
        total = ys[self.primal[0]]
        for k in self.primal[1:]:
            total = total + ys[k]
        return self.forward(total) - self.b

    def grad(self, ys, z):
        g = self.adjoint(z)
        return {k: g for k in self.primal}, self.residual(ys)

    def value(self, ys, z):
        return float(np.vdot(z, self.residual(ys)))

    def value_max(self, ys):
        return self.radius * float(np.linalg.norm(self.residual(ys)))


class QuadraticDistance(SmoothTerm):
    """``0.5*||y - c||^2``."""

    def __init__(self, block, c):
        self.primal = (block,)
        self.block = block
        self.c = np.asarray(c, dtype=float)
        self.lipschitz = {}

    def grad(self, ys, z):
        return {self.block: ys[self.block] - self.c}, None

    def value(self, ys, z=None):
        d = ys[self.block] - self.c
        return 0.5 * float(np.vdot(d, d))

    value_max = value


@dataclass(frozen=True)
class Coupling:
    """Constraint ``y_target = forward(y_source) + offset`` penalized by ``rho*||.||_2``.

    ``G`` and ``H`` are Lipschitz constants of the smooth and nonsmooth parts
    acting on the target; when omitted they are derived from the terms.
    """

    target: str
    source: str
    forward: Callable = _identity
    adjoint: Callable = _identity
    offset: np.ndarray | None = None
    G: float | None = None
    H: float | None = None

    @property
    def w_name(self):
        return f"w:{self.target}"


@dataclass
class MultiTermProblem:
    primal: list
    dual: list = field(default_factory=list)
    terms: list = field(default_factory=list)
    couplings: list = field(default_factory=list)

    def __post_init__(self):
        names = [b.name for b in self.primal] + [b.name for b in self.dual]
        if len(set(names)) != len(names):
            raise AssemblyError("block names must be unique")
        pnames = {b.name for b in self.primal}
        dnames = {b.name for b in self.dual}
        targets = [c.target for c in self.couplings]
        if len(set(targets)) != len(targets):
            raise AssemblyError("each block may be the target of at most one coupling")
        for c in self.couplings:
            if c.target not in pnames or c.source not in pnames:
                raise AssemblyError(f"coupling {c.source}->{c.target} refers to unknown primal blocks")
            if c.source in targets:
                raise AssemblyError(f"source block {c.source} is itself a coupling target")
            if c.source == c.target:
                raise AssemblyError("a block cannot be coupled to itself")
        used = set()
        for t in self.terms:
            for k in t.primal:
                if k not in pnames:
                    raise AssemblyError(f"smooth term refers to unknown primal block {k}")
            if t.dual is not None:
                if t.dual not in dnames:
                    raise AssemblyError(f"smooth term refers to unknown dual block {t.dual}")
                if t.dual in used:
                    raise AssemblyError(f"dual block {t.dual} is shared by several terms")
                used.add(t.dual)
        for b in self.primal:
            if b.nonsmooth not in ("none", "l1", "nuclear"):
                raise AssemblyError(f"unsupported nonsmooth kind {b.nonsmooth!r} on {b.name}")

    def block(self, name):
        for b in self.primal:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def K(self):
        return len(self.couplings)


def penalty_floor(problem):
    """Exact-penalty thresholds ``G_k + H_k`` per coupling (``None`` when a constant is unavailable).

    ``H`` defaults to the norm-equivalence bound ``weight*sqrt(size)`` for l1
    targets and ``weight*sqrt(min(shape))`` for nuclear targets, both
    conservative.  ``G`` defaults to the sum of the terms' Lipschitz
    constants on the target block.
    """
    out = []
    for c in problem.couplings:
        blk = problem.block(c.target)
        H = c.H
        if H is None:
            shape = tuple(np.atleast_1d(blk.shape))
            if blk.nonsmooth == "l1":
                H = blk.weight * np.sqrt(np.prod(shape))
            elif blk.nonsmooth == "nuclear":
                H = blk.weight * np.sqrt(min(shape))
            else:
                H = 0.0
        G = c.G
        if G is None:
            G = 0.0
            for t in problem.terms:
                if c.target in t.primal:
                    lip = t.lipschitz.get(c.target)
                    if lip is None:
                        G = None
                        break
                    G += lip
        out.append(None if G is None else float(G + H))
    return out


# ---------------------------------------------------------------------------
# assembly


class AssembledProblem:
    """Composite saddle operator, aggregated setup and evaluation helpers for one ``rho``.

    Unpacks as ``(operator, setup, initial)``.
    """

    def __init__(self, problem, rho, weights, initial_values=None):
        self.problem = problem
        self.rho = np.asarray(rho, dtype=float).ravel()
        if self.rho.size != problem.K:
            raise AssemblyError(f"need {problem.K} penalty coefficients, got {self.rho.size}")
        if np.any(self.rho <= 0):
            raise AssemblyError("penalty coefficients must be positive")
        blocks = []
        for b in problem.primal:
            blocks.append(EpigraphBlock(b.shape, b.nonsmooth, b.weight, b.base, b.radius, name=b.name))
        for b in problem.dual:
            blocks.append(EpigraphBlock(b.shape, base="ball", radius=b.radius, name=b.name))
        for c in problem.couplings:
            blocks.append(EpigraphBlock(problem.block(c.target).shape, base="ball", radius=1.0, name=c.w_name))
        self.layout = Layout(blocks)
        w = np.array([weights[b.name] for b in blocks], dtype=float)
        self.setup = AggregatedSetup(self.layout, w)
        self._idx = {b.name: i for i, b in enumerate(blocks)}
        self.primal_names = [b.name for b in problem.primal]
        self.operator = SaddleOperator(self.field, np.ones(self.layout.dim_v))
        self.initial = self._initial(initial_values or {})

    def __iter__(self):
        return iter((self.operator, self.setup, self.initial))

    # views -------------------------------------------------------------
    def view(self, u, name):
        return self.layout.block(u, self._idx[name])

    def primal_values(self, u):
        return {k: self.view(u, k) for k in self.primal_names}

    def _initial(self, values):
        parts = []
        for b in self.layout.blocks:
            if b.name in values:
                parts.append(np.asarray(values[b.name], dtype=float).reshape(b.shape))
            else:
                parts.append(np.zeros(b.shape))
        x = self.layout.point(parts)
        return self.correction(x)

    # operator ---------------------------------------------------------
    def field(self, u):
        """``F_u``: gradient slots for ``y``, negated gradients for ``z``, residual slots for ``w``."""
        out = np.zeros_like(u)
        ys = self.primal_values(u)
        for t in self.problem.terms:
            z = None if t.dual is None else self.view(u, t.dual)
            gy, gz = t.grad(ys, z)
            for k, g in gy.items():
                out[self.layout.slices[self._idx[k]]] += np.ravel(g)
            if t.dual is not None:
                out[self.layout.slices[self._idx[t.dual]]] -= np.ravel(gz)
        for rho, c in zip(self.rho, self.problem.couplings):
            w = self.view(u, c.w_name)
            out[self.layout.slices[self._idx[c.source]]] -= rho * np.ravel(c.adjoint(w))
            out[self.layout.slices[self._idx[c.target]]] += rho * np.ravel(w)
            out[self.layout.slices[self._idx[c.w_name]]] -= rho * np.ravel(self._residual(ys, c))
        return out

    def _residual(self, ys, c):
        r = ys[c.target] - c.forward(ys[c.source])
        if c.offset is not None:
            r = r - c.offset
        return r

    def residuals(self, u):
        ys = self.primal_values(u)
        return [self._residual(ys, c) for c in self.problem.couplings]

    # evaluation -------------------------------------------------------
    def correction(self, x):
        """Restore every coupling: ``y_t = A y_s + b`` and ``tau = Psi(y)`` on all primal blocks."""
        u = x.u.copy()
        for c in self.problem.couplings:
            val = c.forward(self.view(u, c.source))
            if c.offset is not None:
                val = val + c.offset
            u[self.layout.slices[self._idx[c.target]]] = np.ravel(val)
        v = x.v.copy()
        for name in self.primal_names:
            i = self._idx[name]
            j = self.layout.scalar_index[i]
            if j is not None:
                v[j] = self.layout.blocks[i].psi(u[self.layout.slices[i]])
        return CompositePoint(u, v)

    def _tau_sum(self, x):
        total = 0.0
        for name in self.primal_names:
            j = self.layout.scalar_index[self._idx[name]]
            if j is not None:
                total += x.v[j]
        return total

    def phi_bar(self, x):
        """``max_{x2} Phi(x1, x2)``: smooth maxima plus epigraph scalars plus ``rho``-weighted residual norms."""
        ys = self.primal_values(x.u)
        val = sum(t.value_max(ys) for t in self.problem.terms) + self._tau_sum(x)
        for rho, r in zip(self.rho, self.residuals(x.u)):
            val += rho * float(np.linalg.norm(r))
        return val

    def objective(self, x):
        """Objective of the original problem at the correction of ``x`` (its y-part only)."""
        return self.objective_of_corrected(self.correction(x))

    def objective_of_corrected(self, xc):
        ys = self.primal_values(xc.u)
        return sum(t.value_max(ys) for t in self.problem.terms) + self._tau_sum(xc)

    def primal_norm(self, x):
        return float(np.sqrt(sum(np.vdot(self.view(x.u, k), self.view(x.u, k)) for k in self.primal_names)))

    def violation_parts(self, x):
        """Per-coupling cost of the correction, used by selective penalty growth."""
        xc = self.correction(x)
        ys_bar = self.primal_values(x.u)
        ys_hat = self.primal_values(xc.u)
        out = []
        for rho, c, r in zip(self.rho, self.problem.couplings, self.residuals(x.u)):
            terms = [t for t in self.problem.terms if c.target in t.primal]
            j = self.layout.scalar_index[self._idx[c.target]]
            tau_bar = x.v[j] if j is not None else 0.0
            tau_hat = xc.v[j] if j is not None else 0.0
            psi_hat = sum(t.value_max(ys_hat) for t in terms)
            psi_bar = sum(t.value_max(ys_bar) for t in terms)
            out.append(psi_hat + tau_hat - (psi_bar + tau_bar + rho * float(np.linalg.norm(r))))
        return out

    def block_slice(self, name):
        return self.layout.slices[self._idx[name]]

    def block_index(self, name):
        return self._idx[name]


def default_weights(problem, D=1.0, exponent=2):
    """Aggregation weights ``1/D**exponent`` on primal blocks and 1 on dual and ``w`` blocks."""
    if D <= 0:
        raise InputError("D must be positive")
    w = {b.name: 1.0 / D ** exponent for b in problem.primal}
    w.update({b.name: 1.0 for b in problem.dual})
    w.update({c.w_name: 1.0 for c in problem.couplings})
    return w


def assemble(problem, rho=None, weights=None, initial_values=None):
    """Build the penalized composite saddle problem.

    Parameters
    ----------
    problem : MultiTermProblem
    rho : array_like, optional
        Penalty coefficients (default 1 for every coupling).
    weights : dict, optional
        Aggregation weight per block name (default :func:`default_weights`).
    initial_values : dict, optional
        Starting values per block name; missing blocks start at zero, then the
        point is corrected so couplings hold and epigraph scalars sit at their terms.

    Returns
    -------
    AssembledProblem
        Unpacks into ``(operator, setup, initial_point)``.
    """
    rho = np.ones(problem.K) if rho is None else rho
    weights = weights or default_weights(problem)
    return AssembledProblem(problem, rho, weights, initial_values)


def correction(assembled, x):
    return assembled.correction(x)


# ---------------------------------------------------------------------------
# penalty control

KEEP = "keep"
RESTART = "restart"


@dataclass
class PenaltyController:
    """Online growth of the penalty coefficients."""

    rho: np.ndarray
    growth: float = 3.0
    kappa: float = 1e-4
    initial: float = 1e-3
    selective: bool = False

    def __post_init__(self):
        if self.growth <= 1:
            raise InputError("growth must exceed 1")
        if self.kappa <= 0:
            raise InputError("kappa must be positive")
        self.rho = np.asarray(self.rho, dtype=float).copy()
        self.restarts = 0

    @classmethod
    def fresh(cls, K, **kw):
        initial = kw.pop("initial", 1e-3)
        return cls(np.full(K, initial), initial=initial, **kw)


def adapt_penalty(controller, upsilon_at_correction, phi_bar_at_raw, parts=None):
    """Grow ``rho`` when ``upsilon > (1 + kappa) * Phi_bar``.

    With ``controller.selective`` and per-coupling correction costs ``parts``,
    only couplings whose cost exceeds ``kappa*|Phi_bar|`` grow (all grow if
    none stands out).
    """
    threshold = phi_bar_at_raw + controller.kappa * abs(phi_bar_at_raw)
    if upsilon_at_correction <= threshold:
        return KEEP
    grow = np.ones(controller.rho.size, dtype=bool)
    if controller.selective and parts is not None:
        sig = np.asarray(parts) > controller.kappa * abs(phi_bar_at_raw)
        if sig.any():
            grow = sig
    controller.rho[grow] *= controller.growth
    controller.restarts += 1
    return RESTART


# ---------------------------------------------------------------------------
# matrix completion


def matrix_completion_problem(mask, b, lam, mu):
    """``0.5*||P_Omega y - b||^2 + lam*||y||_1 + mu*||y||_nuc`` split over two copies of ``y``."""
    mask = np.asarray(mask, dtype=bool)
    shape = mask.shape
    if lam <= 0 or mu <= 0:
        raise InputError("lam and mu must be positive")
    return MultiTermProblem(
        primal=[
            PrimalBlock("y0", shape, "l1", lam),
            PrimalBlock("y1", shape, "nuclear", mu),
        ],
        terms=[MaskedLeastSquares("y0", mask, b)],
        couplings=[Coupling("y1", "y0", G=0.0, H=mu * np.sqrt(min(shape)))],
    )


def mc_radius_bound(upsilon_best, lam, b):
    """Largest ``r`` with ``lam*r + theta(r) <= upsilon_best``, an upper bound on ``||y_*||_1``.

    ``theta(r) = min {0.5*||v - |b|||^2 : v >= 0, sum v <= r}``.  Bisection on
    the convex function ``lam*r + theta(r)`` starting from its minimizer
    ``sum(max(|b| - lam, 0))`` and ``upsilon_best/lam``; the upper end of
    the final bracket is returned so the bound stays valid.
    """
    if lam <= 0:
        raise InputError("lam must be positive")
    a = np.abs(np.asarray(b, dtype=float)).ravel()

    def theta_plus(r):
        return lam * r + capped_simplex_value(a, r)

    lo = float(np.maximum(a - lam, 0.0).sum())
    if theta_plus(lo) > upsilon_best * (1 + 1e-12) + 1e-300:
        raise BoundInconsistencyError(
            f"upper bound {upsilon_best!r} lies below min theta+ = {theta_plus(lo)!r}"
        )
    hi = max(upsilon_best / lam, lo)
    if theta_plus(hi) <= upsilon_best:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if theta_plus(mid) <= upsilon_best:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return hi


def mc_lower_bound(protocol, cert, upsilon_best, lam, mu, b, assembled):
    """Certificate lower bound for matrix completion.

    Returns ``(ell, R)`` with ``ell = Phi_bar(x^t) - Res`` over the set where
    ``||y0||_1, ||y1||_nuc <= R+`` and ``R`` the radius bound from
    :func:`mc_radius_bound`.
    """
    R = mc_radius_bound(upsilon_best, lam, b)
    avg = protocol.averaged_point() if cert is None else protocol.summary(cert).point
    R_plus = max(R, float(np.abs(assembled.view(avg.u, "y0")).sum()))
    shape = assembled.problem.block("y0").shape
    domain = ResolutionDomain(
        assembled.layout,
        [
            EpigraphCapped("l1", lam, R_plus, shape),
            EpigraphCapped("nuclear", mu, R_plus, shape),
            Ball(1.0),
        ],
    )
    ell = assembled.phi_bar(avg) - resolution(protocol, cert, domain)
    return ell, R


def singleton_domain(assembled, optimal_values):
    """``{x1_*} x X2`` for a known optimal primal point given as block values."""
    descs = []
    for b in assembled.layout.blocks:
        if b.name in optimal_values:
            val = np.asarray(optimal_values[b.name], dtype=float)
            descs.append(Singleton(val, b.psi(val.ravel()) if b.lifted else None))
        else:
            descs.append(Ball(b.radius))
    return ResolutionDomain(assembled.layout, descs)


# ---------------------------------------------------------------------------
# solve loop


@dataclass
class TraceRow:
    t: int
    seconds: float
    upper: float
    lower: float
    gap: float
    rho_or_alpha: float
    restarts: int


@dataclass
class MultiTermConfig:
    max_iters: int = 1000
    policy: StepPolicy = field(default_factory=StepPolicy)
    D: float = 1.0
    weight_exponent: int = 2
    adapt_D: bool = False
    D_fraction: float = 0.2
    rho: np.ndarray | None = None
    adapt_rho: bool = True
    rho_initial: float = 1e-3
    rho_growth: float = 3.0
    kappa: float = 1e-4
    selective_rho: bool = False
    checkpoints: list | None = None
    lower_every: int = 1
    evaluate_search_points: bool = True


@dataclass
class MultiTermReport:
    upper: float
    lower: float
    best_point: CompositePoint | None
    rows: list
    restarts: int
    rho: np.ndarray
    D: float
    iterations: int
    run: object
    assembled: AssembledProblem
    upper_history: list
    lower_history: list


def solve_multiterm(problem, config=None, initial_values=None, lower_bound=None, on_checkpoint=None):
    """Run CoMP on the penalized problem with penalty and scale adaptation.

    Parameters
    ----------
    problem : MultiTermProblem
    config : MultiTermConfig
    initial_values : dict, optional
        Starting block values (corrected before use).
    lower_bound : callable, optional
        ``lower_bound(protocol, assembled, upper) -> float`` giving a valid
        lower bound on the optimal value; evaluated every ``lower_every``
        steps and at every checkpoint.
    on_checkpoint : callable, optional
        Receives each :class:`TraceRow` as it is produced.

    Returns
    -------
    MultiTermReport
    """
    cfg = config or MultiTermConfig()
    if cfg.adapt_rho:
        ctrl = PenaltyController.fresh(problem.K, initial=cfg.rho_initial, growth=cfg.rho_growth,
                                       kappa=cfg.kappa, selective=cfg.selective_rho)
    else:
        rho = np.ones(problem.K) if cfg.rho is None else np.asarray(cfg.rho, dtype=float)
        ctrl = PenaltyController(rho)
    D = float(cfg.D)
    assembled = assemble(problem, ctrl.rho.copy(), default_weights(problem, D, cfg.weight_exponent),
                         initial_values)
    marks = set(cfg.checkpoints) if cfg.checkpoints is not None else None
    if marks is None:
        t, marks = 1, set()
        while t <= cfg.max_iters:
            marks.add(t)
            t *= 2
    ctx = {"assembled": assembled, "D": D, "upper": np.inf, "lower": -np.inf, "best": None,
           "rows": [], "restarts": 0, "uh": [], "lh": []}
    t0 = time.perf_counter()

    def offer(x):
        xc = assembled_now().correction(x)
        val = assembled_now().objective_of_corrected(xc)
        if val < ctx["upper"]:
            ctx["upper"] = val
            ctx["best"] = xc
        return val

    def assembled_now():
        return ctx["assembled"]

    def rebuild(rho, D):
        ctx["assembled"] = assemble(problem, rho, default_weights(problem, D, cfg.weight_exponent))
        ctx["D"] = D
        ctx["restarts"] += 1
        a = ctx["assembled"]
        return Restart(operator=a.operator, setup=a.setup)

    def callback(state, step):
        a = assembled_now()
        t = state.iteration
        avg = state.protocol.averaged_point()
        candidates = [avg] + ([step.y] if cfg.evaluate_search_points else [])
        restart = False
        for x in candidates:
            ups = offer(x)
            if cfg.adapt_rho and not restart:
                parts = a.violation_parts(x) if cfg.selective_rho else None
                if adapt_penalty(ctrl, ups, a.phi_bar(x), parts) == RESTART:
                    restart = True
        if lower_bound is not None and (t % cfg.lower_every == 0 or t in marks):
            ell = lower_bound(state.protocol, a, ctx["upper"])
            if ell > ctx["lower"]:
                ctx["lower"] = ell
        ctx["uh"].append(ctx["upper"])
        ctx["lh"].append(ctx["lower"])
        if t in marks:
            row = TraceRow(t, time.perf_counter() - t0, ctx["upper"], ctx["lower"],
                           ctx["upper"] - ctx["lower"], float(a.rho[0]) if a.rho.size else 0.0,
                           ctx["restarts"])
            ctx["rows"].append(row)
            if on_checkpoint is not None and on_checkpoint(row) is STOP:
                return STOP
        if restart:
            return rebuild(ctrl.rho.copy(), ctx["D"])
        if cfg.adapt_D and a.primal_norm(avg) > cfg.D_fraction * ctx["D"]:
            D = ctx["D"]
            while a.primal_norm(avg) > cfg.D_fraction * D:
                D *= 2.0
            return rebuild(a.rho.copy(), D)
        return None

    op, setup, x1 = assembled
    result = run(op, setup, x1, policy=replace(cfg.policy), max_iters=cfg.max_iters,
                 checkpoints=[], callback=callback)
    a = assembled_now()
    return MultiTermReport(ctx["upper"], ctx["lower"], ctx["best"], ctx["rows"], ctx["restarts"],
                           a.rho.copy(), ctx["D"], result.state.iteration, result, a,
                           ctx["uh"], ctx["lh"])


def mc_lower_bound_fn(lam, mu, b):
    """Adapter turning :func:`mc_lower_bound` into a ``lower_bound`` callback."""

    def fn(protocol, assembled, upper):
        if not np.isfinite(upper):
            return -np.inf
        return mc_lower_bound(protocol, None, upper, lam, mu, b, assembled)[0]

    return fn


__all__ = [
    "PrimalBlock", "DualBlock", "SmoothTerm", "MaskedLeastSquares", "NormResidual", "QuadraticDistance",
    "Coupling", "MultiTermProblem", "AssembledProblem", "assemble", "correction", "default_weights",
    "penalty_floor", "PenaltyController", "adapt_penalty", "KEEP", "RESTART", "matrix_completion_problem",
    "mc_radius_bound", "mc_lower_bound", "mc_lower_bound_fn", "singleton_domain", "TraceRow",
    "MultiTermConfig", "MultiTermReport", "solve_multiterm",
]
