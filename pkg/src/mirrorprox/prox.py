"""Proximal setups, Bregman distances and the composite prox-mapping.

A composite point ``x = [u; v]`` stores every smooth-handled block of ``u`` in
one flat vector and one epigraph scalar per lifted block in ``v``.  The
:class:`Layout` knows how to cut the flat vector into blocks.  All shipped
distance-generating functions are Euclidean (``0.5*||u||^2``), so the
prox-mapping splits block by block into closed-form shrink-then-scale steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, InputError, NumericalError, UnboundedProxError

BASE_ALIASES = {
    "whole_space": "whole_space",
    "ball": "ball",
    "euclidean_ball": "ball",
    "frobenius_ball": "ball",
}
NONSMOOTH_KINDS = ("none", "l1", "nuclear", "linear_zero")


# ---------------------------------------------------------------------------
# closed-form solvers


def soft_threshold(a, beta):
    """Componentwise shrinkage ``sign(a) * max(|a| - beta, 0)``.

    Parameters
    ----------
    a : array_like
        Input array of any shape.
    beta : float
        Nonnegative threshold.

    Returns
    -------
    numpy.ndarray
        Minimizer of ``0.5*||x - a||^2 + beta*||x||_1``.
    """
    if beta < 0:
        raise InputError(f"threshold must be nonnegative, got {beta}")
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.maximum(np.abs(a) - beta, 0.0)


def _svd(A):
    try:
        return np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"SVD failed on a {A.shape} matrix (finite={np.isfinite(A).all()}, "
            f"fro={np.linalg.norm(A):.3e})"
        ) from exc


def _singular_values(A):
    try:
        return np.linalg.svd(A, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed on a {A.shape} matrix") from exc


def svt_with_values(A, beta):
    """Singular value thresholding that also returns the shrunk singular values."""
    if beta < 0:
        raise InputError(f"threshold must be nonnegative, got {beta}")
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise InputError(f"singular value thresholding needs a matrix, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise NumericalError("singular value thresholding received non-finite entries")
    U, s, Vt = _svd(A)
    s = np.maximum(s - beta, 0.0)
    keep = s > 0
    X = (U[:, keep] * s[keep]) @ Vt[keep]
    return X, s


def singular_value_threshold(A, beta):
    """Minimizer of ``0.5*||X - A||_F^2 + beta*||X||_nuc``.

    Parameters
    ----------
    A : array_like
        Finite 2-D array.
    beta : float
        Nonnegative threshold applied to the singular values.

    Returns
    -------
    numpy.ndarray
        ``U diag(max(s - beta, 0)) V^T``.
    """
    return svt_with_values(A, beta)[0]


def ball_l2_l1_prox(a, beta, radius):
    """Minimizer of ``0.5*||x - a||^2 + beta*||x||_1`` over ``||x||_2 <= radius``.

    Soft-thresholding followed by radial scaling is exact here because the
    shrunk vector keeps the sign pattern and only its length needs fixing.
    """
    if radius <= 0:
        raise InputError(f"radius must be positive, got {radius}")
    s = soft_threshold(a, beta)
    nrm = np.linalg.norm(s)
    if nrm > radius:
        s = s * (radius / nrm)
    return s


def capped_simplex_project(b, r):
    """Project ``|b|`` onto ``{v >= 0, sum(v) <= r}``.

    Parameters
    ----------
    b : array_like
        Input vector; only magnitudes matter.
    r : float
        Nonnegative budget.

    Returns
    -------
    numpy.ndarray
        ``max(|b| - theta, 0)`` with the smallest ``theta >= 0`` meeting the budget.
    """
    if r < 0:
        raise InputError(f"budget must be nonnegative, got {r}")
    a = np.abs(np.asarray(b, dtype=float)).ravel()
    if a.sum() <= r:
        return a
    if r == 0:
        return np.zeros_like(a)
    mu = np.sort(a)[::-1]
    cssv = np.cumsum(mu) - r
    ind = np.arange(1, a.size + 1)
    active = np.nonzero(mu * ind > cssv)[0]
    # an empty set only happens when r underflows against the largest entry
    rho = active[-1] if active.size else 0
    theta = cssv[rho] / (rho + 1.0)
    return np.maximum(a - theta, 0.0)


def capped_simplex_value(b, r):
    """``min {0.5*||v - |b|||^2 : v >= 0, sum(v) <= r}``."""
    a = np.abs(np.asarray(b, dtype=float)).ravel()
    v = capped_simplex_project(a, r)
    return 0.5 * float(np.dot(v - a, v - a))


def l1_norm(a):
    return float(np.abs(a).sum())


def nuclear_norm(A):
    return float(_singular_values(A).sum())


def spectral_norm(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        return float(np.linalg.norm(A))
    if A.size == 0:
        return 0.0
    return float(_singular_values(A)[0])


# ---------------------------------------------------------------------------
# setups


class ProximalSetup:
    """A norm with a compatible distance-generating function on one block.

    Subclasses provide ``norm``, ``dual_norm``, ``dgf`` and ``dgf_gradient``.
    The modulus of strong convexity is 1 with respect to ``norm``.
    """

    strong_convexity_modulus = 1.0

    def norm(self, u):
        raise NotImplementedError

    def dual_norm(self, xi):
        raise NotImplementedError

    def dgf(self, u):
        raise NotImplementedError

    def dgf_gradient(self, u):
        raise NotImplementedError

    def check_domain(self, u):
        u = np.asarray(u, dtype=float)
        if not np.isfinite(u).all():
            raise InputError("point has non-finite entries")
        return u


class EuclideanSetup(ProximalSetup):
    """``omega(u) = 0.5*||u||_2^2`` on a ball of the given radius (or the whole space)."""

    def __init__(self, radius=None):
        if radius is not None and radius <= 0:
            raise InputError(f"radius must be positive, got {radius}")
        self.radius = radius

    def norm(self, u):
        return float(np.linalg.norm(np.ravel(u)))

    dual_norm = norm

    def dgf(self, u):
        u = np.ravel(u)
        return 0.5 * float(np.dot(u, u))

    def dgf_gradient(self, u):
        return np.array(u, dtype=float)

    def check_domain(self, u):
        u = super().check_domain(u)
        if self.radius is not None and self.norm(u) > self.radius * (1 + 1e-9) + 1e-12:
            raise InputError(f"point of norm {self.norm(u):.6g} outside ball of radius {self.radius}")
        return u


def bregman_distance(setup, u, w):
    """``V_u(w) = omega(w) - omega(u) - <omega'(u), w - u>``.

    Parameters
    ----------
    setup : ProximalSetup or AggregatedSetup
    u, w : array_like
        Points in the setup's domain.

    Returns
    -------
    float
    """
    if isinstance(setup, AggregatedSetup):
        return setup.bregman(u, w)
    u = setup.check_domain(u)
    w = setup.check_domain(w)
    if u.shape != w.shape:
        raise InputError(f"shape mismatch {u.shape} vs {w.shape}")
    if isinstance(setup, EuclideanSetup):
        d = (w - u).ravel()
        return 0.5 * float(np.dot(d, d))
    val = setup.dgf(w) - setup.dgf(u) - float(np.vdot(setup.dgf_gradient(u), w - u))
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# composite structure


@dataclass(frozen=True)
class EpigraphBlock:
    """One block of ``u``: its base set, the nonsmooth term lifted into ``v``, and a cap.

    ``nonsmooth="none"`` means the block carries no epigraph scalar.
    ``linear_zero`` lifts the zero function, so its scalar sits at 0.
    """

    shape: tuple
    nonsmooth: str = "none"
    weight: float = 0.0
    base: str = "whole_space"
    radius: float | None = None
    cap: float | None = None
    name: str = ""

    def __post_init__(self):
        shape = (self.shape,) if np.isscalar(self.shape) else tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if self.base not in BASE_ALIASES:
            raise InputError(f"unknown base set {self.base!r}")
        object.__setattr__(self, "base", BASE_ALIASES[self.base])
        if self.nonsmooth not in NONSMOOTH_KINDS:
            raise InputError(f"unknown nonsmooth kind {self.nonsmooth!r}")
        if self.weight < 0:
            raise InputError(f"weight must be nonnegative, got {self.weight}")
        if self.base == "ball" and (self.radius is None or self.radius <= 0):
            raise InputError("ball blocks need a positive radius")
        if self.nonsmooth == "nuclear" and len(shape) != 2:
            raise InputError("nuclear-norm blocks must be matrices")

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def lifted(self):
        return self.nonsmooth != "none"

    def psi(self, s):
        """Value of the lifted nonsmooth term at the block value ``s``."""
        if self.nonsmooth == "l1":
            return self.weight * l1_norm(s)
        if self.nonsmooth == "nuclear":
            return self.weight * nuclear_norm(np.reshape(s, self.shape))
        return 0.0


class Layout:
    """Offsets of each block inside the flat ``u`` vector and of each epigraph scalar in ``v``."""

    def __init__(self, blocks):
        self.blocks = list(blocks)
        if not self.blocks:
            raise InputError("layout needs at least one block")
        names = [b.name for b in self.blocks if b.name]
        if len(names) != len(set(names)):
            raise InputError("block names must be unique")
        self.slices = []
        self.scalar_index = []
        off = 0
        nv = 0
        for b in self.blocks:
            self.slices.append(slice(off, off + b.size))
            off += b.size
            if b.lifted:
                self.scalar_index.append(nv)
                nv += 1
            else:
                self.scalar_index.append(None)
        self.dim_u = off
        self.dim_v = nv

    def __len__(self):
        return len(self.blocks)

    def index(self, name):
        for i, b in enumerate(self.blocks):
            if b.name == name:
                return i
        raise KeyError(name)

    def block(self, u, i):
        """View of block ``i`` of the flat vector ``u`` reshaped to its shape."""
        if isinstance(i, str):
            i = self.index(i)
        return u[self.slices[i]].reshape(self.blocks[i].shape)

    def split(self, u):
        return [self.block(u, i) for i in range(len(self.blocks))]

    def join(self, parts):
        if len(parts) != len(self.blocks):
            raise InputError(f"expected {len(self.blocks)} blocks, got {len(parts)}")
        out = np.empty(self.dim_u)
        for sl, b, p in zip(self.slices, self.blocks, parts):
            p = np.asarray(p, dtype=float)
            if p.size != b.size:
                raise InputError(f"block {b.name or '?'} has size {p.size}, expected {b.size}")
            out[sl] = p.ravel()
        return out

    def psi_values(self, u):
        """Epigraph-scalar values ``Psi_i(u_i)`` for every lifted block."""
        v = np.zeros(self.dim_v)
        for i, b in enumerate(self.blocks):
            j = self.scalar_index[i]
            if j is not None:
                v[j] = b.psi(u[self.slices[i]])
        return v

    def point(self, parts):
        """Composite point from block values with epigraph scalars set to ``Psi``."""
        u = self.join(parts)
        return CompositePoint(u, self.psi_values(u))


@dataclass
class CompositePoint:
    """``x = [u; v]`` with ``u`` flat and ``v`` holding one scalar per lifted block."""

    u: np.ndarray
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))

    def copy(self):
        return CompositePoint(self.u.copy(), self.v.copy())

    def u_blocks(self, layout):
        return layout.split(self.u)

    @property
    def v_scalars(self):
        return list(self.v)

    def is_feasible(self, layout, tol=1e-9):
        """True when every epigraph scalar dominates its nonsmooth term and balls hold."""
        psi = layout.psi_values(self.u)
        if np.any(self.v < psi - tol * np.maximum(1.0, np.abs(psi))):
            return False
        for sl, b in zip(layout.slices, layout.blocks):
            if b.base == "ball" and np.linalg.norm(self.u[sl]) > b.radius * (1 + tol) + tol:
                return False
        return True


class AggregatedSetup:
    """Weighted sum of Euclidean block setups over a :class:`Layout`.

    ``omega(u) = sum_k a_k * 0.5*||u_k||^2`` and ``||u||^2 = sum_k a_k ||u_k||^2``.
    """

    def __init__(self, layout, weights, block_setups=None):
        self.layout = layout
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.size != len(layout):
            raise InputError(f"need {len(layout)} aggregation weights, got {weights.size}")
        if np.any(weights <= 0) or not np.isfinite(weights).all():
            raise InputError("aggregation weights must be positive and finite")
        self.weights = weights
        if block_setups is None:
            block_setups = [
                EuclideanSetup(b.radius if b.base == "ball" else None) for b in layout.blocks
            ]
        if len(block_setups) != len(layout):
            raise InputError("one block setup per layout block is required")
        self.block_setups = list(block_setups)
        self.coord_weights = np.concatenate(
            [np.full(b.size, w) for b, w in zip(layout.blocks, weights)]
        )

    def with_weights(self, weights):
        return AggregatedSetup(self.layout, weights, self.block_setups)

    def norm(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.sqrt(np.dot(self.coord_weights, u * u)))

    def dual_norm(self, xi):
        xi = np.asarray(xi, dtype=float)
        return float(np.sqrt(np.dot(xi * xi, 1.0 / self.coord_weights)))

    def dgf(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * float(np.dot(self.coord_weights, u * u))

    def dgf_gradient(self, u):
        return self.coord_weights * np.asarray(u, dtype=float)

    def bregman(self, u, w):
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        if u.shape != w.shape or u.size != self.layout.dim_u:
            raise InputError(f"points must have {self.layout.dim_u} entries")
        if not (np.isfinite(u).all() and np.isfinite(w).all()):
            raise InputError("point has non-finite entries")
        d = w - u
        return 0.5 * float(np.dot(self.coord_weights, d * d))


def composite_prox(x, xi_u, zeta_v, setup):
    """Prox-mapping ``argmin <xi_u, s> + <zeta_v, w> + V_u(s)`` over the composite domain.

    Parameters
    ----------
    x : CompositePoint
        Prox center; only ``x.u`` enters the Bregman term.
    xi_u : numpy.ndarray
        Linear cost on the ``u`` part (flat).
    zeta_v : array_like
        Linear cost on the epigraph scalars, one per lifted block.
    setup : AggregatedSetup
        Carries the layout (blocks) and the aggregation weights.

    Returns
    -------
    CompositePoint
        New point whose epigraph scalars equal the nonsmooth terms exactly.
    """
    layout = setup.layout
    xi_u = np.asarray(xi_u, dtype=float)
    zeta_v = np.atleast_1d(np.asarray(zeta_v, dtype=float))
    if xi_u.shape != (layout.dim_u,) or x.u.shape != (layout.dim_u,):
        raise InputError(f"u-part must be a flat vector of length {layout.dim_u}")
    if zeta_v.size != layout.dim_v:
        raise InputError(f"expected {layout.dim_v} epigraph costs, got {zeta_v.size}")
    for bs in setup.block_setups:
        if not isinstance(bs, EuclideanSetup):
            raise CapabilityError("closed-form prox is only available for Euclidean setups")
    u_new = np.empty(layout.dim_u)
    v_new = np.zeros(layout.dim_v)
    for i, b in enumerate(layout.blocks):
        sl = layout.slices[i]
        a = setup.weights[i]
        c = x.u[sl] - xi_u[sl] / a
        j = layout.scalar_index[i]
        tau = 0.0
        if j is None or b.nonsmooth == "linear_zero":
            s = c
            if j is not None and zeta_v[j] <= 0:
                if b.cap is None:
                    raise UnboundedProxError(
                        f"nonpositive cost {zeta_v[j]} on uncapped block {b.name or i}"
                    )
                raise CapabilityError("capped epigraph prox with nonpositive cost is not supported")
        else:
            z = zeta_v[j]
            if z <= 0:
                if b.cap is None:
                    raise UnboundedProxError(
                        f"nonpositive cost {z} on uncapped epigraph block {b.name or i}"
                    )
                raise CapabilityError("capped epigraph prox with nonpositive cost is not supported")
            beta = z * b.weight / a
            if b.nonsmooth == "l1":
                s = soft_threshold(c, beta)
                tau = b.weight * float(np.abs(s).sum())
            else:
                S, sv = svt_with_values(c.reshape(b.shape), beta)
                s = S.ravel()
                tau = b.weight * float(sv.sum())
        if b.base == "ball":
            nrm = np.linalg.norm(s)
            if nrm > b.radius:
                scale = b.radius / nrm
                s = s * scale
                tau *= scale
        u_new[sl] = s
        if j is not None:
            v_new[j] = tau
    return CompositePoint(u_new, v_new)
