"""Solve configurations and per-family drivers used by the command line."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..certificates import StoredSummary, WeightedSummary
from ..comp import StepPolicy
from ..errors import InputError
from ..multiterm import (
    MultiTermConfig,
    assemble,
    default_weights,
    matrix_completion_problem,
    mc_lower_bound,
    mc_lower_bound_fn,
    solve_multiterm,
)
from ..prox import CompositePoint
from ..semisep import StageProblem, l1_constrained_problem, run_sequential, run_simple, stage_bound
from . import io
from .generators import (
    ImageInstance,
    L1Instance,
    MCInstance,
    build_image_problem,
    gen_image_synthetic,
    gen_l1_planted,
    gen_matrix_completion,
    gen_mc_known_opt,
    image_from_matrix,
    verify_l1_planted,
    verify_mc_known_opt,
)
from .reference import image_dual_bound

FAMILIES = ("matrix_completion", "mc_known_opt", "image_decomp_synthetic", "image_decomp_file", "l1_planted")


@dataclass
class SolveConfig:
    """Everything a ``solve`` run depends on; printed by ``--dump-config``."""

    family: str = "mc_known_opt"
    n: int = 64
    m: int = 0
    seed: int = 0
    # matrix completion
    obs_prob: float = 0.25
    noise_factor: float = 0.1
    density: float = 0.1
    start: str = "observed"
    # image decomposition
    image: str = ""
    sparsity: float = 0.01
    sigma: float = 0.01
    mu1: float = 0.0
    mu2: float = 0.0
    mu3: float = 0.0
    image_lower_bound: bool = True
    # l1 planted
    c: float = 1.0
    x_norm: float = 0.5
    mode: str = "sequential"
    eps: float = 1e-5
    # solver
    max_iters: int = 1000
    D: float = 0.0
    weight_exponent: int = 2
    adapt_D: bool = False
    kappa: float = 1e-4
    rho_policy: str = "adaptive"
    rho: float = 1.0
    rho_initial: float = 1e-3
    rho_growth: float = 3.0
    lower_every: int = 0
    initial_step: float = 1.0

    def validate(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.family != "image_decomp_file" and self.n < 2:
            raise InputError("n must be at least 2")
        if self.family == "image_decomp_file" and not self.image:
            raise InputError("image_decomp_file needs --image")
        if not 0 < self.obs_prob <= 1:
            raise InputError("obs_prob must lie in (0, 1]")
        if not 0 < self.density <= 1 or not 0 < self.sparsity <= 1:
            raise InputError("density and sparsity must lie in (0, 1]")
        if self.max_iters < 1:
            raise InputError("max_iters must be positive")
        if self.eps <= 0 or self.kappa <= 0 or self.c <= 0:
            raise InputError("eps, kappa and c must be positive")
        if min(self.mu1, self.mu2, self.mu3, self.D) < 0:
            raise InputError("weights and D must be nonnegative")
        if self.mode not in ("sequential", "simple"):
            raise InputError("mode must be sequential or simple")
        if self.rho_policy not in ("adaptive", "fixed"):
            raise InputError("rho_policy must be adaptive or fixed")
        if self.start not in ("observed", "zero"):
            raise InputError("start must be observed or zero")
        if self.weight_exponent not in (1, 2):
            raise InputError("weight_exponent must be 1 or 2")
        return self

    @classmethod
    def from_mapping(cls, values):
        """Build from string values (config file or flags); unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise InputError(f"unknown config key {key!r}")
            kw[key] = _coerce(type(getattr(cls, key)) if hasattr(cls, key) else str, raw, key)
        return cls(**kw).validate()

    def as_text(self):
        return io.dump_config({k: _show(v) for k, v in asdict(self).items()})


def _coerce(kind, raw, key):
    if not isinstance(raw, str):
        return kind(raw)
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise InputError(f"bad value {raw!r} for {key}") from None
    return raw


def _show(v):
    return str(v).lower() if isinstance(v, bool) else str(v)


@dataclass
class SolveOutcome:
    """Final bounds, trace rows, solution blocks and a printable summary."""

    family: str
    upper: float
    lower: float
    steps: int
    restarts: int
    rows: list
    solution: dict
    summary: dict = field(default_factory=dict)
    protocol: dict | None = None
    instance: object = None

    @property
    def rel_gap(self):
        if not np.isfinite(self.lower):
            return np.inf
        return (self.upper - self.lower) / max(abs(self.upper), 1e-300)


# ---------------------------------------------------------------------------
# instances


def make_instance(cfg):
    if cfg.family == "matrix_completion":
        return gen_matrix_completion(cfg.n, cfg.seed, cfg.obs_prob, cfg.noise_factor, cfg.density)
    if cfg.family == "mc_known_opt":
        inst = gen_mc_known_opt(cfg.n, cfg.seed, cfg.density, cfg.noise_factor)
        verify_mc_known_opt(inst)
        return inst
    if cfg.family == "image_decomp_synthetic":
        inst = gen_image_synthetic(cfg.n, cfg.seed, cfg.sparsity, cfg.sigma)
        return _override_mu(inst, cfg)
    if cfg.family == "image_decomp_file":
        b = io.load_image(cfg.image)
        sigma = cfg.sigma
        return image_from_matrix(b, cfg.mu1 or 10 * sigma, cfg.mu2 or sigma, cfg.mu3 or sigma)
    m = cfg.m or cfg.n // 2
    return gen_l1_planted(cfg.n, m, cfg.c, cfg.seed, cfg.density, cfg.x_norm)


def _override_mu(inst, cfg):
    inst.mu1 = cfg.mu1 or inst.mu1
    inst.mu2 = cfg.mu2 or inst.mu2
    inst.mu3 = cfg.mu3 or inst.mu3
    return inst


# ---------------------------------------------------------------------------
# solving


def _multiterm_config(cfg, D):
    return MultiTermConfig(
        max_iters=cfg.max_iters,
        policy=StepPolicy(cfg.initial_step),
        D=D,
        weight_exponent=cfg.weight_exponent,
        adapt_D=cfg.adapt_D,
        adapt_rho=cfg.rho_policy == "adaptive",
        rho=None if cfg.rho_policy == "adaptive" else np.array([cfg.rho]),
        rho_initial=cfg.rho_initial,
        rho_growth=cfg.rho_growth,
        kappa=cfg.kappa,
        lower_every=cfg.lower_every or 10 ** 12,
    )


def _protocol_dump(report, cfg, extra):
    s = report.run.state.protocol.summary()
    return dict(inner=np.array(s.inner), field_u=s.field_u, field_v=s.field_v, point_u=s.point.u,
                point_v=s.point.v, rho=report.rho, D=np.array(report.D),
                weight_exponent=np.array(cfg.weight_exponent), upper=np.array(report.upper),
                steps=np.array(len(report.run.state.protocol)), **extra)


def solve_mc(inst, cfg):
    prob = matrix_completion_problem(inst.mask, inst.b, inst.lam, inst.mu)
    init = None
    if cfg.start == "observed":
        B = np.zeros(inst.mask.shape)
        B[inst.mask] = inst.b
        init = {"y0": B, "y1": B}
    D = cfg.D or inst.D
    rep = solve_multiterm(prob, _multiterm_config(cfg, D), init, mc_lower_bound_fn(inst.lam, inst.mu, inst.b))
    y = rep.assembled.view(rep.best_point.u, "y0").copy()
    summary = {"objective": rep.upper, "lower_bound": rep.lower, "rho": float(rep.rho[0]), "D": rep.D}
    if inst.opt is not None:
        summary["opt"] = inst.opt
        summary["rel_error"] = (rep.upper - inst.opt) / inst.opt
    prot = _protocol_dump(rep, cfg, {"lam": np.array(inst.lam), "mu": np.array(inst.mu)})
    return SolveOutcome(cfg.family, rep.upper, rep.lower, rep.iterations, rep.restarts, rep.rows,
                        {"y": y}, summary, prot, inst)


def solve_image(inst, cfg):
    prob = build_image_problem(inst)
    D = cfg.D or float(np.linalg.norm(inst.b))
    lower = None
    if cfg.image_lower_bound:
        def lower(protocol, assembled, upper):
            z = assembled.view(protocol.averaged_point().u, "z")
            return image_dual_bound(inst, z)
    rep = solve_multiterm(prob, _multiterm_config(cfg, D), None, lower)
    blocks = {k: rep.assembled.view(rep.best_point.u, k).copy() for k in ("y1", "y2", "y3")}
    summary = {"objective": rep.upper, "lower_bound": rep.lower, "rho": float(rep.rho[0]), "D": rep.D}
    return SolveOutcome(cfg.family, rep.upper, rep.lower, rep.iterations, rep.restarts, rep.rows,
                        {"low_rank": blocks["y1"], "sparse": blocks["y2"], "smooth": blocks["y3"]},
                        summary, None, inst)


def solve_l1(inst, cfg):
    prob = l1_constrained_problem(inst.A, inst.b)

    def rule(ys):
        return inst.accuracy(ys["x"]) <= cfg.eps

    policy = StepPolicy(cfg.initial_step)
    if cfg.mode == "sequential":
        marks = [2 ** k for k in range(int(np.log2(cfg.max_iters)) + 1)]
        rep = run_sequential(prob, cfg.eps, max_steps=cfg.max_iters, policy=policy, stop_rule=rule,
                             record_checks=False, checkpoints=marks)
        x = prob.ys(rep.point, _layout_of(prob)).get("x")
        rows, upper, lower = rep.rows, float(np.abs(x).sum()), rep.opt_lb
        steps, restarts, reached = rep.steps, rep.stages - 1, rep.stopped_by_rule
        summary = {"stages": rep.stages, "stage_bound": stage_bound(prob.L_bound, cfg.eps)}
    else:
        rep = run_simple(prob, inst.R_star, max_steps=cfg.max_iters, policy=policy,
                         stop_rule=rule)
        x = _layout_of(prob).block(rep.point, 0).copy()
        rows, upper, lower = [], float(np.abs(x).sum()), -np.inf
        steps, restarts, reached = rep.steps, 0, rep.stopped_by_rule
        summary = {}
    summary.update({"eps_x": inst.accuracy(x), "reached": reached, "opt": inst.opt,
                    "constraint_residual": float(np.linalg.norm(inst.A @ x - inst.b))})
    return SolveOutcome(cfg.family, upper, lower, steps, restarts, rows, {"x": x.reshape(-1, 1)}, summary,
                        None, inst)


def _layout_of(prob):
    return StageProblem(prob, 0.5).layout


def solve(cfg, inst=None):
    cfg.validate()
    inst = make_instance(cfg) if inst is None else inst
    if isinstance(inst, MCInstance):
        return solve_mc(inst, cfg)
    if isinstance(inst, ImageInstance):
        return solve_image(inst, cfg)
    return solve_l1(inst, cfg)


# ---------------------------------------------------------------------------
# dumps and re-checks


def dump_instance(path, cfg, inst):
    meta = {"family": cfg.family, "seed": cfg.seed}
    if isinstance(inst, MCInstance):
        n1, n2 = inst.mask.shape
        B = np.zeros(inst.mask.shape)
        B[inst.mask] = inst.b
        meta.update(rows=n1, cols=n2, lam=repr(inst.lam), mu=repr(inst.mu), sigma=repr(inst.sigma),
                    D=repr(inst.D))
        mats = {"observed": B, "y_sharp": inst.y_sharp}
        if inst.opt is not None:
            meta["opt"] = repr(inst.opt)
            mats.update(g1=inst.g1, g2=inst.g2)
        io.write_instance_dir(path, meta, mats, inst.mask)
    elif isinstance(inst, L1Instance):
        meta.update(rows=inst.A.shape[0], cols=inst.A.shape[1], R_star=repr(inst.R_star))
        io.write_instance_dir(path, meta, {"A": inst.A, "b": inst.b.reshape(-1, 1),
                                           "x_star": inst.x_star.reshape(-1, 1),
                                           "lam_star": inst.lam_star.reshape(-1, 1)})
    else:
        n1, n2 = inst.shape
        meta.update(rows=n1, cols=n2, mu1=repr(inst.mu1), mu2=repr(inst.mu2), mu3=repr(inst.mu3))
        io.write_instance_dir(path, meta, {"b": inst.b})


def load_instance(path):
    meta, mats, mask = io.read_instance_dir(path)
    family = meta.get("family", "")
    if family in ("matrix_completion", "mc_known_opt"):
        if mask is None:
            raise InputError(f"{path}: matrix completion dump lacks omega.csv")
        inst = MCInstance(mask, mats["observed"][mask], float(meta["lam"]), float(meta["mu"]),
                          float(meta["sigma"]), float(meta["D"]), mats["y_sharp"])
        if "opt" in meta:
            inst.opt = float(meta["opt"])
            inst.g1, inst.g2 = mats["g1"], mats["g2"]
        return family, inst
    if family == "l1_planted":
        return family, L1Instance(mats["A"], mats["b"].ravel(), mats["x_star"].ravel(),
                                  mats["lam_star"].ravel(), float(meta["R_star"]))
    if family.startswith("image_decomp"):
        return family, ImageInstance(mats["b"], float(meta["mu1"]), float(meta["mu2"]), float(meta["mu3"]))
    raise InputError(f"{path}: unknown family {family!r}")


def verify_instance(path):
    """Re-check a dumped planted instance; returns a description of what was checked."""
    family, inst = load_instance(path)
    if family == "mc_known_opt":
        err = verify_mc_known_opt(inst, tol=1e-9)
        val = inst.objective(inst.y_sharp)
        if abs(val - inst.opt) > 1e-9 * max(1.0, abs(inst.opt)):
            raise InputError(f"stored Opt {inst.opt!r} differs from objective at y# {val!r}")
        return f"mc_known_opt: optimality residual {err:.3e}, Opt = {inst.opt:.10g}"
    if family == "l1_planted":
        verify_l1_planted(inst, tol=1e-9)
        return f"l1_planted: A^T lam* in d||x*||_1 and A x* = b hold, Opt = {inst.opt:.10g}"
    raise InputError(f"family {family!r} has no planted optimum to verify")


def recompute_bounds(protocol_path, instance_path):
    """Recompute the matrix-completion certificate lower bound from a dumped protocol."""
    family, inst = load_instance(instance_path)
    if not isinstance(inst, MCInstance):
        raise InputError("certificate bounds can be recomputed for matrix completion dumps only")
    data = io.load_protocol(protocol_path)
    prob = matrix_completion_problem(inst.mask, inst.b, inst.lam, inst.mu)
    weights = default_weights(prob, float(data["D"]), int(data["weight_exponent"]))
    assembled = assemble(prob, data["rho"], weights)
    summ = WeightedSummary(float(data["inner"]), data["field_u"], data["field_v"],
                           CompositePoint(data["point_u"], data["point_v"]))
    stored = StoredSummary(summ, int(data["steps"]))
    upper = float(data["upper"])
    ell, R = mc_lower_bound(stored, None, upper, inst.lam, inst.mu, inst.b, assembled)
    return {"upper": upper, "lower": ell, "radius": R, "gap": upper - ell, "family": family}


def write_solution(dirpath, outcome):
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for name, M in outcome.solution.items():
        io.write_matrix_csv(d / f"{name}.csv", M)
