import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrorprox.comp import run
from mirrorprox.errors import InputError, StateError
from mirrorprox.harness.generators import gen_l1_planted
from mirrorprox.multiterm import PrimalBlock, QuadraticDistance
from mirrorprox.semisep import (
    CONTINUE,
    NEW_STAGE,
    ConstrainedProblem,
    Filter,
    StageProblem,
    StageState,
    delta_segment,
    gap_and_weights,
    h_eval,
    l1_constrained_problem,
    run_sequential,
    run_simple,
    stage_bound,
    stage_control,
    stage_problem,
)


def make_filter(pairs, opt_lb=0.0, prune=True):
    f = Filter(opt_lb=opt_lb, prune=prune)
    for i, (p, q) in enumerate(pairs):
        f.add(p, q, np.array([float(i)]))
    return f


# ---------------------------------------------------------------------------
# h, Gap and segments


def test_h_examples():
    f = make_filter([(1, 3), (4, 0)])
    assert h_eval(f, 0.5) == 2.0
    assert h_eval(f, 0.0) == 0.0
    single = make_filter([(0.0, 0.0)])
    for a in (0.0, 0.3, 1.0):
        assert h_eval(single, a) == 0.0
    with pytest.raises(StateError):
        h_eval(Filter(), 0.5)
    with pytest.raises(InputError):
        h_eval(f, 1.5)


def test_gap_two_entries():
    r = gap_and_weights(make_filter([(1, 3), (4, 0)]))
    assert r.gap == pytest.approx(2.0)
    assert r.alpha == pytest.approx(0.5)
    np.testing.assert_allclose(r.weights, [2 / 3, 1 / 3])
    assert r.p_bar == pytest.approx(2.0) and r.q_bar == pytest.approx(2.0)
    np.testing.assert_allclose(r.point, [1 / 3])


def test_gap_mixing_weights_grid():
    # min over theta of max(theta*1 + (1-theta)*4, theta*3) on a 1e-6 grid
    th = np.linspace(0, 1, 1_000_001)
    val = np.maximum(th * 1 + (1 - th) * 4, th * 3)
    assert th[np.argmin(val)] == pytest.approx(2 / 3, abs=1e-6)
    al = np.linspace(0, 1, 1_000_001)
    h = np.minimum(3 - 2 * al, 4 * al)
    assert h.max() == pytest.approx(2.0, abs=1e-6)


def test_gap_singleton_and_crossing():
    r = gap_and_weights(make_filter([(0.0, 0.0)]))
    assert r.gap == 0.0 and r.weights == [1.0]
    r = gap_and_weights(make_filter([(-1, 2), (2, -1)]))
    assert r.gap == pytest.approx(0.5)
    assert r.alpha == pytest.approx(0.5)
    assert gap_and_weights(make_filter([(3.0, 1.0)])).gap == pytest.approx(3.0)


def test_delta_segment_examples():
    lo, hi = delta_segment(make_filter([(-1, 2), (2, -1)]))
    assert (lo, hi) == (pytest.approx(1 / 3), pytest.approx(2 / 3))
    assert delta_segment(make_filter([(1, 3), (4, 0)])) == (0.0, 1.0)
    lo, hi = delta_segment(make_filter([(-1, 1), (1, -1)]))
    assert lo == pytest.approx(0.5) and hi == pytest.approx(0.5)
    assert delta_segment(make_filter([(-1, -1)])) is None
    with pytest.raises(StateError):
        delta_segment(Filter())


def test_filter_pruning_keeps_lower_left_hull():
    f = make_filter([(1, 3), (4, 0), (3, 3), (2.5, 1.5), (2, 2)])
    # (3,3) is dominated; (2.5,1.5) and (2,2) lie on the segment between the hull vertices
    assert sorted((e.p, e.q) for e in f.entries) == [(1, 3), (4, 0)]
    raw = make_filter([(1, 3), (4, 0), (3, 3), (2, 2)], prune=False)
    assert len(raw) == 4
    r = gap_and_weights(raw)
    assert r.gap == pytest.approx(2.0)
    assert set(r.indices) <= {0, 1}
    with pytest.raises(InputError):
        f.add(np.inf, 0.0)


def test_lower_bound_only_rises():
    f = Filter(opt_lb=-1.0)
    assert f.raise_lower_bound(0.5)
    assert not f.raise_lower_bound(0.2)
    assert f.opt_lb == 0.5


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=25),
       st.floats(-3, 3))
def test_gap_matches_alpha_grid(pairs, opt_lb):
    f = make_filter(pairs, opt_lb)
    r = gap_and_weights(f)
    al = np.linspace(0, 1, 20001)
    P = np.array(pairs)
    h = np.min(al[:, None] * (P[None, :, 0] - opt_lb) + (1 - al[:, None]) * P[None, :, 1], axis=1)
    assert r.gap >= h.max() - 1e-9
    assert r.gap <= h.max() + 1e-3
    # the combination certifies the gap
    assert r.p_bar - opt_lb <= r.gap + 1e-9
    assert r.q_bar <= r.gap + 1e-9
    assert abs(sum(r.weights) - 1) < 1e-12 and len(r.weights) <= 2


# ---------------------------------------------------------------------------
# stage control


def test_stage_control_examples():
    assert stage_control(StageState(0.5), (1 / 3, 2 / 3)) == (CONTINUE, 0.5)
    what, nxt = stage_control(StageState(0.4), (1 / 3, 2 / 3))
    assert what == NEW_STAGE and nxt == pytest.approx(0.5)
    assert stage_control(StageState(0.5), (0.0, 1.0)) == (CONTINUE, 0.5)
    with pytest.raises(InputError):
        stage_control(StageState(0.5), None)


def test_stage_bound_formula():
    assert stage_bound(1.0, 3.0) == pytest.approx(0.0)
    assert stage_bound(10.0, 1e-5) == pytest.approx(np.log(3e6) / np.log(4 / 3))


# ---------------------------------------------------------------------------
# stage problems


def _quad_problem():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((2, 3))
    c = rng.standard_normal(3)
    prob = ConstrainedProblem(
        blocks=[PrimalBlock("x", (3,), "l1", 0.5, "ball", 2.0)],
        A=[lambda x: A @ x], At=[lambda w: A.T @ w], b=rng.standard_normal(2),
        terms=[QuadraticDistance("x", c)], L_bound=50.0)
    return prob, A, c


def test_stage_problem_field_structure():
    prob, A, c = _quad_problem()
    alpha = 0.3
    sp = stage_problem(prob, alpha)
    np.testing.assert_allclose(sp.operator.Fv, [alpha])
    rng = np.random.default_rng(1)
    u = rng.standard_normal(5)
    x, w = u[:3], u[3:]
    F = sp.field(u)
    np.testing.assert_allclose(F[:3], alpha * (x - c) + (1 - alpha) * A.T @ w)
    np.testing.assert_allclose(F[3:], (1 - alpha) * (prob.b - A @ x))
    with pytest.raises(InputError):
        stage_problem(prob, 0.0)
    with pytest.raises(InputError):
        stage_problem(prob, 1.0)


def test_stage_problem_alpha_one_is_unconstrained():
    prob, A, c = _quad_problem()
    sp = StageProblem(prob, 1.0, clamp=False)
    u = np.arange(5.0)
    np.testing.assert_allclose(sp.field(u), np.concatenate([u[:3] - c, np.zeros(2)]))


def test_stage_problem_gradient_finite_differences():
    prob, A, c = _quad_problem()
    sp = stage_problem(prob, 0.6)
    rng = np.random.default_rng(4)
    u = rng.standard_normal(5)

    def phi(uu):  # alpha*phi(x) + (1 - alpha)*<w, A x - b>
        return 0.6 * 0.5 * np.sum((uu[:3] - c) ** 2) + 0.4 * uu[3:] @ (A @ uu[:3] - prob.b)

    F = sp.field(u)
    for i in range(5):
        e = np.zeros(5)
        e[i] = 1e-6
        fd = (phi(u + e) - phi(u - e)) / 2e-6
        assert F[i] == pytest.approx(fd if i < 3 else -fd, abs=1e-6)


def test_stage_lower_bound_is_valid():
    inst = gen_l1_planted(32, 16, 1.0, seed=2)
    prob = l1_constrained_problem(inst.A, inst.b)
    for alpha in (0.2, 0.5, 0.9):
        sp = stage_problem(prob, alpha)
        res = run(sp.operator, sp.setup, sp.layout.point([np.zeros(32), np.zeros(16)]), max_iters=200)
        # min alpha*f + (1 - alpha)*g <= alpha*Opt since x* is feasible
        assert sp.lower_bound(res.protocol) <= alpha * inst.opt + 1e-9


def test_constrained_problem_validation():
    with pytest.raises(InputError):
        ConstrainedProblem([PrimalBlock("x", (2,))], [lambda x: x], [lambda w: w], np.zeros(2))
    with pytest.raises(InputError):
        ConstrainedProblem([PrimalBlock("x", (2,), base="ball", radius=1.0)], [], [], np.zeros(2))


def test_l1_problem_bound():
    A = np.array([[3.0, 0.0], [0.0, 1.0]])
    b = np.array([1.0, 0.0])
    prob = l1_constrained_problem(A, b)
    assert prob.L_bound == pytest.approx(max(np.sqrt(2), 3.0 + 1.0))


# ---------------------------------------------------------------------------
# drivers


def test_sequential_trivial_instance_stops_immediately():
    prob = l1_constrained_problem(np.eye(3)[:2], np.zeros(2))
    rep = run_sequential(prob, 1e-8, max_steps=100)
    assert rep.converged and rep.steps == 1 and rep.stages == 1
    assert rep.opt_lb == pytest.approx(0.0)


def test_sequential_small_planted():
    inst = gen_l1_planted(32, 16, 1.0, seed=0)
    prob = l1_constrained_problem(inst.A, inst.b)
    rep = run_sequential(prob, 1e-4, max_steps=60000)
    assert rep.converged
    x = rep.point[:32]
    assert np.abs(x).sum() <= inst.opt + 1e-4 + 1e-9
    assert np.linalg.norm(inst.A @ x - inst.b) <= 1e-4 + 1e-9
    assert all(c.opt_lb <= inst.opt + 1e-9 for c in rep.checks)
    assert all(c.f_hat <= c.opt_lb + c.gap + 1e-9 and c.g_hat <= c.gap + 1e-9 for c in rep.checks)
    assert np.all(np.diff(rep.gap_history) <= 1e-12)
    with pytest.raises(InputError):
        run_sequential(prob, 0.0)


def test_simple_small_planted_reaches_rule():
    inst = gen_l1_planted(32, 16, 1.0, seed=0)
    prob = l1_constrained_problem(inst.A, inst.b)
    rep = run_simple(prob, inst.R_star, max_steps=50000, stop_rule=lambda ys: inst.accuracy(ys["x"]) <= 1e-3)
    assert rep.stopped_by_rule
    assert inst.accuracy(rep.point[:32]) <= 1e-3
    with pytest.raises(InputError):
        run_simple(prob, 0.0)
