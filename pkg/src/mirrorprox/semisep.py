"""Staged solution of ``min {f(y) : g(y) <= 0}`` for semi-separable problems.

Each stage minimizes ``alpha*f + (1 - alpha)*g`` by CoMP.  Every evaluated
point feeds a filter of ``(f, g)`` pairs; the filter together with a running
lower bound on the optimal value gives

    h(alpha) = min_{(p, q)} [alpha*(p - opt_lb) + (1 - alpha)*q],
    Gap = max_{alpha in [0, 1]} h(alpha),

and a convex combination of two filter points that is ``Gap``-feasible and
``Gap``-optimal.  The working ``alpha`` moves to the midpoint of
``{alpha : h(alpha) >= 0}`` whenever it leaves the middle third of that segment.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .certificates import Ball, EpigraphBall, ResolutionDomain, resolution
from .comp import STOP, SaddleOperator, StepPolicy, run
from .errors import InputError, StateError
from .multiterm import PrimalBlock, TraceRow
from .prox import AggregatedSetup, CompositePoint, EpigraphBlock, Layout

ALPHA_CLAMP = 1e-6


# ---------------------------------------------------------------------------
# filter and gap machinery


@dataclass
class FilterEntry:
    p: float
    q: float
    point: object = None


class Filter:
    """Achieved ``(f, g)`` pairs with attached points and the best lower bound ``opt_lb``.

    Only entries on the lower-left convex hull of the pairs are kept: every
    other entry is beaten by a hull entry for each ``alpha`` in ``[0, 1]``, so
    ``h``, ``Gap`` and the combined point do not depend on it.
    """

    def __init__(self, opt_lb=-np.inf, prune=True):
        self.entries = []
        self.opt_lb = float(opt_lb)
        self.prune = prune

    def __len__(self):
        return len(self.entries)

    def raise_lower_bound(self, value):
        if value > self.opt_lb:
            self.opt_lb = float(value)
            return True
        return False

    def add(self, p, q, point=None):
        if not (np.isfinite(p) and np.isfinite(q)):
            raise InputError("filter values must be finite")
        self.entries.append(FilterEntry(float(p), float(q), point))
        if self.prune:
            self.entries = _lower_left_hull(self.entries)

    @property
    def pq(self):
        return np.array([[e.p, e.q] for e in self.entries]).reshape(-1, 2)


def _cross(o, a, b):
    return (a.p - o.p) * (b.q - o.q) - (a.q - o.q) * (b.p - o.p)


def _lower_left_hull(entries):
    """Entries minimizing ``alpha*p + (1-alpha)*q`` for some ``alpha`` in [0, 1]."""
    pts = sorted(entries, key=lambda e: (e.p, e.q))
    # keep only the Pareto staircase (strictly decreasing q as p grows)
    stair = []
    for e in pts:
        if not stair or e.q < stair[-1].q:
            stair.append(e)
    hull = []
    for e in stair:
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], e) <= 0:
            hull.pop()
        hull.append(e)
    return hull


def h_eval(filt, alpha):
    """``min over entries of alpha*(p - opt_lb) + (1 - alpha)*q``."""
    if len(filt) == 0:
        raise StateError("filter is empty")
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    pq = filt.pq
    return float(np.min(alpha * (pq[:, 0] - filt.opt_lb) + (1 - alpha) * pq[:, 1]))


def _lines(filt):
    pq = filt.pq
    icpt = pq[:, 1]
    slope = (pq[:, 0] - filt.opt_lb) - pq[:, 1]
    return icpt, slope


def _breakpoints(filt):
    """Candidate kinks of ``h`` in [0, 1]: the endpoints and crossings of all line pairs."""
    icpt, slope = _lines(filt)
    cands = [0.0, 1.0]
    k = icpt.size
    if k > 1:
        i, j = np.triu_indices(k, 1)
        ds = slope[i] - slope[j]
        ok = np.abs(ds) > 1e-300
        a = (icpt[j][ok] - icpt[i][ok]) / ds[ok]
        cands.extend(a[(a > 0) & (a < 1)].tolist())
    return np.unique(np.array(cands))


def _h_many(filt, alphas):
    icpt, slope = _lines(filt)
    return np.min(icpt[None, :] + alphas[:, None] * slope[None, :], axis=1)


@dataclass
class GapResult:
    gap: float
    alpha: float
    weights: list
    indices: list
    point: object
    p_bar: float
    q_bar: float


def _mix_value(p1, q1, p2, q2):
    """``min over theta in [0,1] of max(theta*p1 + (1-theta)*p2, theta*q1 + (1-theta)*q2)``."""
    best_val, best_theta = max(p2, q2), 0.0
    if max(p1, q1) < best_val:
        best_val, best_theta = max(p1, q1), 1.0
    den = (p1 - p2) - (q1 - q2)
    if abs(den) > 1e-300:
        th = (q2 - p2) / den
        if 0.0 < th < 1.0:
            v = th * p1 + (1 - th) * p2
            if v < best_val:
                best_val, best_theta = v, th
    return best_val, best_theta


def gap_and_weights(filt, combine=None):
    """Exact ``Gap``, a maximizer ``alpha*`` and optimal mixing weights.

    Parameters
    ----------
    filt : Filter
    combine : callable, optional
        ``combine(points, weights)`` returning the convex combination of the
        attached points (default: weighted sum of ``CompositePoint`` or arrays).

    Returns
    -------
    GapResult
        ``weights`` has at most two nonzero entries, ``p_bar - opt_lb`` and
        ``q_bar`` are both at most ``gap`` (up to rounding).
    """
    if len(filt) == 0:
        raise StateError("filter is empty")
    alphas = _breakpoints(filt)
    hv = _h_many(filt, alphas)
    k = int(np.argmax(hv))
    gap, alpha = float(hv[k]), float(alphas[k])
    # the mixing side: min over the hull of max(p - opt_lb, q), attained on a vertex or an edge
    ent = filt.entries if filt.prune else _lower_left_hull(filt.entries)
    pl = [e.p - filt.opt_lb for e in ent]
    qs = [e.q for e in ent]
    best = (np.inf, [1.0], [0])
    for i in range(len(ent)):
        v = max(pl[i], qs[i])
        if v < best[0]:
            best = (v, [1.0], [i])
        if i + 1 < len(ent):
            v, th = _mix_value(pl[i], qs[i], pl[i + 1], qs[i + 1])
            if v < best[0]:
                best = (v, [th, 1.0 - th], [i, i + 1])
    _, weights, idx = best
    keep = [(w, i) for w, i in zip(weights, idx) if w > 0]
    weights = [w for w, _ in keep]
    idx = [i for _, i in keep]
    chosen = [ent[i] for i in idx]
    p_bar = sum(w * e.p for w, e in zip(weights, chosen))
    q_bar = sum(w * e.q for w, e in zip(weights, chosen))
    pts = [e.point for e in chosen]
    if any(p is None for p in pts):
        point = None
    else:
        point = (combine or _combine)(pts, weights)
    if filt.prune:
        entry_idx = idx
    else:
        entry_idx = [filt.entries.index(e) for e in chosen]
    return GapResult(gap, alpha, weights, entry_idx, point, p_bar, q_bar)


def _combine(points, weights):
    if isinstance(points[0], CompositePoint):
        u = sum(w * p.u for w, p in zip(weights, points))
        v = sum(w * p.v for w, p in zip(weights, points))
        return CompositePoint(u, v)
    return sum(w * np.asarray(p) for w, p in zip(weights, points))


def delta_segment(filt):
    """``{alpha in [0, 1] : h(alpha) >= 0}`` as ``(lo, hi)``, or ``None`` when empty."""
    if len(filt) == 0:
        raise StateError("filter is empty")
    alphas = _breakpoints(filt)
    hv = _h_many(filt, alphas)
    if hv.max() < 0:
        return None
    nonneg = np.nonzero(hv >= 0)[0]
    first, last = nonneg[0], nonneg[-1]
    lo = alphas[first]
    if first > 0:
        a0, a1, h0, h1 = alphas[first - 1], alphas[first], hv[first - 1], hv[first]
        lo = a1 - h1 * (a1 - a0) / (h1 - h0)
    hi = alphas[last]
    if last < alphas.size - 1:
        a0, a1, h0, h1 = alphas[last], alphas[last + 1], hv[last], hv[last + 1]
        hi = a0 + h0 * (a1 - a0) / (h0 - h1)
    return float(lo), float(hi)


CONTINUE = "continue"
NEW_STAGE = "new_stage"


@dataclass
class StageState:
    alpha: float = 0.5
    segment: tuple = (0.0, 1.0)
    stage_index: int = 1


def stage_control(state, segment):
    """``(CONTINUE, alpha)`` while ``alpha`` sits in the closed middle third of ``segment``,
    else ``(NEW_STAGE, midpoint)``."""
    if segment is None:
        raise InputError("segment is empty")
    lo, hi = segment
    third = (hi - lo) / 3.0
    if lo + third <= state.alpha <= hi - third:
        return CONTINUE, state.alpha
    return NEW_STAGE, 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# constrained problem and stage problems


@dataclass
class ConstrainedProblem:
    """``min sum_k [phi_k(y^k) + Psi_k(y^k)]  s.t.  ||sum_k A_k y^k - b||_2 <= 0`` over bounded blocks.

    Parameters
    ----------
    blocks : list of PrimalBlock
        Each block must be a ball (bounded domain) and may lift an l1 or nuclear term.
    A : list of callables
        ``A[k](y^k)`` maps block ``k`` to the constraint space.
    At : list of callables
        Adjoints of ``A``.
    b : numpy.ndarray
    terms : list of SmoothTerm, optional
        Smooth terms over the blocks (no dual blocks).
    L_bound : float
        Bound on ``max(|f|, |g|)`` over the domain.
    """

    blocks: list
    A: list
    At: list
    b: np.ndarray
    terms: list = field(default_factory=list)
    L_bound: float = 1.0
    A_norm: float | None = None

    def __post_init__(self):
        if len(self.blocks) != len(self.A) or len(self.A) != len(self.At):
            raise InputError("one linear map and adjoint per block is required")
        for blk in self.blocks:
            if blk.base != "ball":
                raise InputError(f"block {blk.name} must be bounded (ball)")
        self.b = np.asarray(self.b, dtype=float)

    def ys(self, u, layout):
        return {blk.name: layout.block(u, i) for i, blk in enumerate(self.blocks)}

    def constraint_residual(self, ys):
        total = -self.b
        for blk, A in zip(self.blocks, self.A):
            total = total + A(ys[blk.name])
        return total

    def f_value(self, ys):
        val = sum(t.value_max(ys) for t in self.terms)
        for blk in self.blocks:
            if blk.nonsmooth != "none":
                val += EpigraphBlock(blk.shape, blk.nonsmooth, blk.weight).psi(ys[blk.name])
        return float(val)

    def g_value(self, ys):
        return float(np.linalg.norm(self.constraint_residual(ys)))


class StageProblem:
    """Saddle form of ``min alpha*f + (1 - alpha)*g`` with ``g`` as a max over the unit ball ``w``.

    ``F_u``: ``alpha*grad phi + (1 - alpha)*A^T w`` on the blocks and
    ``(1 - alpha)*(b - sum A y)`` on ``w``; ``F_v = alpha``.
    """

    def __init__(self, problem, alpha, weights=None, clamp=True):
        if not 0.0 <= alpha <= 1.0:
            raise InputError(f"alpha must lie in [0, 1], got {alpha}")
        if clamp:
            alpha = min(max(alpha, ALPHA_CLAMP), 1.0 - ALPHA_CLAMP)
        self.problem = problem
        self.alpha = alpha
        blocks = [EpigraphBlock(b.shape, b.nonsmooth, b.weight, b.base, b.radius, name=b.name)
                  for b in problem.blocks]
        blocks.append(EpigraphBlock(problem.b.shape, base="ball", radius=1.0, name="w"))
        self.layout = Layout(blocks)
        w = np.ones(len(blocks)) if weights is None else np.asarray(weights, dtype=float)
        self.setup = AggregatedSetup(self.layout, w)
        self.operator = SaddleOperator(self.field, np.full(self.layout.dim_v, alpha))
        self._wslice = self.layout.slices[-1]

    def field(self, u):
        a = self.alpha
        out = np.zeros_like(u)
        ys = self.problem.ys(u, self.layout)
        w = u[self._wslice]
        for t in self.problem.terms:
            gy, _ = t.grad(ys, None)
            for k, g in gy.items():
                out[self.layout.slices[self.layout.index(k)]] += a * np.ravel(g)
        for i, (blk, At) in enumerate(zip(self.problem.blocks, self.problem.At)):
            out[self.layout.slices[i]] += (1 - a) * np.ravel(At(w))
        out[self._wslice] = -(1 - a) * self.problem.constraint_residual(ys)
        return out

    def phi_bar(self, x):
        """``alpha*(sum phi + sum tau) + (1 - alpha)*g`` at ``x``."""
        ys = self.problem.ys(x.u, self.layout)
        smooth = sum(t.value_max(ys) for t in self.problem.terms)
        return self.alpha * (smooth + float(np.sum(x.v))) + (1 - self.alpha) * self.problem.g_value(ys)

    def domain(self):
        descs = []
        for b in self.layout.blocks[:-1]:
            if b.lifted:
                descs.append(EpigraphBall(b.nonsmooth, b.weight, b.radius, b.shape, b.cap))
            else:
                descs.append(Ball(b.radius))
        descs.append(Ball(1.0))
        return ResolutionDomain(self.layout, descs)

    def lower_bound(self, protocol):
        """Valid lower bound on ``min alpha*f + (1 - alpha)*g`` from the stage certificate."""
        avg = protocol.averaged_point()
        return self.phi_bar(avg) - resolution(protocol, None, self.domain())

    def fg(self, x):
        ys = self.problem.ys(x.u, self.layout)
        return self.problem.f_value(ys), self.problem.g_value(ys)


def stage_problem(problem, alpha, weights=None):
    """Assemble the stage saddle problem for the working parameter ``alpha`` in (0, 1)."""
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    return StageProblem(problem, alpha, weights)


# ---------------------------------------------------------------------------
# drivers


@dataclass
class StageLogRow:
    stage: int
    alpha: float
    steps: int
    gap: float
    opt_lb: float
    lo: float
    hi: float


@dataclass
class CheckRow:
    """Per-step record of the combined-point guarantee."""

    t: int
    gap: float
    opt_lb: float
    f_hat: float
    g_hat: float


@dataclass
class SequentialReport:
    point: np.ndarray | None
    gap_history: list
    stage_log: list
    checks: list
    steps: int
    stages: int
    converged: bool
    stopped_by_rule: bool
    opt_lb: float
    segment_lengths: list
    rows: list
    seconds: float


def _u_only(layout, x, problem):
    return {blk.name: layout.block(x.u, i).copy() for i, blk in enumerate(problem.blocks)}


def run_sequential(problem, eps, max_steps=100000, per_stage_budget=None, policy=None,
                   stop_rule=None, record_checks=True, checkpoints=None, rule_on_search=False):
    """Staged CoMP with filter-driven ``alpha`` updates.

    Parameters
    ----------
    problem : ConstrainedProblem
    eps : float
        Stop once ``Gap <= eps``.
    max_steps : int
        Total CoMP step budget across stages.
    per_stage_budget : int, optional
        Force a new stage after this many steps (default unlimited).
    policy : StepPolicy, optional
    stop_rule : callable, optional
        ``stop_rule(ys) -> bool`` evaluated on the combined point (and on the
        search points too with ``rule_on_search``); a true value ends the run.
    record_checks : bool
        Keep the per-step combined-point record.

    Returns
    -------
    SequentialReport
    """
    if eps <= 0:
        raise InputError("eps must be positive")
    policy = policy or StepPolicy()
    filt = Filter(opt_lb=-problem.L_bound)
    st = StageState(alpha=0.5, segment=(0.0, 1.0), stage_index=1)
    gap_hist, stage_log, checks, seg_lengths, rows = [], [], [], [1.0], []
    marks = set(checkpoints or [])
    ctx = {"steps": 0, "done": False, "rule": False, "x": None, "gamma": policy.initial_guess,
           "last": None, "gap": np.inf}
    t0 = time.perf_counter()
    layout0 = StageProblem(problem, 0.5).layout
    x_start = layout0.point([np.zeros(b.shape) for b in layout0.blocks])

    while not ctx["done"] and ctx["steps"] < max_steps:
        sp = stage_problem(problem, st.alpha)
        stage_steps = {"n": 0}
        decision = {"next": None}

        def callback(state, step, sp=sp):
            ctx["steps"] += 1
            stage_steps["n"] += 1
            avg = state.protocol.averaged_point()
            for x in (step.y, avg):
                f, g = sp.fg(x)
                filt.add(f, g, x.u.copy())
                if rule_on_search and stop_rule is not None and stop_rule(_u_only(sp.layout, x, problem)):
                    ctx["rule"] = True
            lb = sp.lower_bound(state.protocol)
            if np.isfinite(lb) and sp.alpha >= ALPHA_CLAMP:
                filt.raise_lower_bound(lb / sp.alpha)
            gr = gap_and_weights(filt)
            ctx["gap"] = gr.gap
            gap_hist.append(gr.gap)
            ys_hat = problem.ys(gr.point, sp.layout)
            ctx["last"] = ys_hat
            if record_checks:
                checks.append(CheckRow(ctx["steps"], gr.gap, filt.opt_lb,
                                       problem.f_value(ys_hat), problem.g_value(ys_hat)))
            if stop_rule is not None and not ctx["rule"] and stop_rule(
                    {k: np.array(v) for k, v in ys_hat.items()}):
                ctx["rule"] = True
            if ctx["steps"] in marks:
                rows.append(TraceRow(ctx["steps"], time.perf_counter() - t0, filt.opt_lb + gr.gap,
                                     filt.opt_lb, gr.gap, sp.alpha, st.stage_index - 1))
            if gr.gap <= eps or ctx["rule"] or ctx["steps"] >= max_steps:
                ctx["done"] = True
                return STOP
            seg = delta_segment(filt)
            what, nxt = stage_control(st, seg)
            forced = per_stage_budget is not None and stage_steps["n"] >= per_stage_budget
            if what == NEW_STAGE or forced:
                decision["next"] = nxt
                st.segment = seg
                return STOP
            return None

        x1 = x_start if ctx["x"] is None else ctx["x"]
        res = run(sp.operator, sp.setup, x1, policy=StepPolicy(ctx["gamma"], policy.grow_factor,
                                                               policy.shrink_factor, policy.max_retries),
                  max_iters=max_steps - ctx["steps"], checkpoints=[], callback=callback)
        ctx["x"] = res.state.x_current
        ctx["gamma"] = res.state.next_gamma
        seg = st.segment
        stage_log.append(StageLogRow(st.stage_index, st.alpha, stage_steps["n"], ctx["gap"],
                                     filt.opt_lb, seg[0], seg[1]))
        if ctx["done"] or decision["next"] is None:
            break
        seg_lengths.append(seg[1] - seg[0])
        st.alpha = decision["next"]
        st.stage_index += 1

    gr = gap_and_weights(filt)
    return SequentialReport(gr.point, gap_hist, stage_log, checks, ctx["steps"], st.stage_index,
                            gr.gap <= eps, ctx["rule"], filt.opt_lb, seg_lengths, rows,
                            time.perf_counter() - t0)


def stage_bound(L, eps):
    """Upper bound ``ln(3L/eps)/ln(4/3)`` on the number of stage changes."""
    return float(np.log(3.0 * L / eps) / np.log(4.0 / 3.0))


@dataclass
class SimpleReport:
    point: np.ndarray
    steps: int
    stopped_by_rule: bool
    seconds: float


def run_simple(problem, R, max_steps=100000, policy=None, stop_rule=None, rule_on_search=False):
    """CoMP on ``min f + R*g`` (penalized form) with the same stop rule as :func:`run_sequential`.

    The penalized problem is the stage problem with ``alpha = 1/(1 + R)``
    rescaled by ``1 + R``.
    """
    if R <= 0:
        raise InputError("R must be positive")
    sp = StageProblem(problem, 1.0 / (1.0 + R), clamp=False)
    scale = 1.0 + R
    op = SaddleOperator(lambda u: scale * sp.field(u), scale * sp.operator.Fv)
    layout = sp.layout
    ctx = {"rule": False, "best": None}
    t0 = time.perf_counter()

    def callback(state, step):
        avg = state.protocol.averaged_point()
        for x in ((step.y, avg) if rule_on_search else (avg,)):
            ys = _u_only(layout, x, problem)
            if stop_rule is not None and stop_rule(ys):
                ctx["rule"] = True
                ctx["best"] = x.u.copy()
                return STOP
        return None

    x1 = layout.point([np.zeros(b.shape) for b in layout.blocks])
    res = run(op, sp.setup, x1, policy=policy or StepPolicy(), max_iters=max_steps, checkpoints=[],
              callback=callback)
    point = ctx["best"] if ctx["best"] is not None else res.state.protocol.averaged_point().u
    return SimpleReport(point, res.state.iteration, ctx["rule"], time.perf_counter() - t0)


def l1_constrained_problem(A, b, radius=1.0):
    """``min ||x||_1  s.t.  A x = b`` over the Euclidean ball of the given radius."""
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    A_norm = float(np.linalg.norm(A, 2))
    L = max(radius * np.sqrt(n), A_norm * radius + float(np.linalg.norm(b)))
    return ConstrainedProblem(
        blocks=[PrimalBlock("x", (n,), "l1", 1.0, "ball", radius)],
        A=[lambda x: A @ x],
        At=[lambda w: A.T @ w],
        b=np.asarray(b, dtype=float),
        L_bound=L,
        A_norm=A_norm,
    )
