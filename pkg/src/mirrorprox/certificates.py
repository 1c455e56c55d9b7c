"""Execution protocols, accuracy certificates, resolution and certificate bounds.

A protocol records the search points ``y_tau`` with the field values
``F(y_tau)``.  Together with nonnegative weights summing to one it certifies
accuracy through the resolution

    Res(X') = sup_{x in X'} sum_tau lambda_tau <F(y_tau), y_tau - x>,

which bounds the variational-inequality and saddle-point gaps of the averaged
point.  Resolution is computed exactly over products of simple blocks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, InputError
from .prox import CompositePoint, soft_threshold, spectral_norm, svt_with_values


@dataclass
class AccuracyCertificate:
    """Nonnegative weights summing to one, one per protocol entry."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0:
            raise InputError("certificate needs at least one weight")
        if np.any(w < 0) or not np.isfinite(w).all():
            raise InputError("certificate weights must be nonnegative and finite")
        if abs(w.sum() - 1.0) > 1e-12 * max(1, w.size):
            raise InputError(f"certificate weights sum to {w.sum()!r}, not 1")
        self.weights = w

    @classmethod
    def proportional(cls, gammas):
        """Stepsize-proportional weights ``gamma_tau / sum(gamma)``."""
        g = np.asarray(gammas, dtype=float)
        if np.any(g <= 0):
            raise InputError("stepsizes must be positive")
        return cls(g / g.sum())

    def __len__(self):
        return self.weights.size


@dataclass
class WeightedSummary:
    """Certificate-weighted aggregates of a protocol.

    ``inner`` is ``sum lambda <F(y), y>``, ``field_u``/``field_v`` the weighted
    field and ``point`` the averaged point.
    """

    inner: float
    field_u: np.ndarray
    field_v: np.ndarray
    point: CompositePoint


class ExecutionProtocol:
    """Full history ``{y_tau, F(y_tau)}``; use for small problems or custom weights."""

    def __init__(self):
        self.points = []
        self.fields_u = []
        self.fields_v = []

    def __len__(self):
        return len(self.points)

    def append(self, y, Fu, Fv):
        self.points.append(y.copy())
        self.fields_u.append(np.array(Fu, dtype=float))
        self.fields_v.append(np.atleast_1d(np.array(Fv, dtype=float)))

    @property
    def field_values(self):
        return list(zip(self.fields_u, self.fields_v))

    def summary(self, cert):
        if cert is None:
            raise InputError("a full protocol needs an explicit certificate")
        if len(cert) != len(self.points) or not self.points:
            raise InputError(f"certificate length {len(cert)} does not match protocol length {len(self.points)}")
        lam = cert.weights
        U = np.array([p.u for p in self.points])
        V = np.array([p.v for p in self.points]).reshape(len(self.points), -1)
        FU = np.array(self.fields_u)
        FV = np.array(self.fields_v).reshape(len(self.points), -1)
        inner = float(lam @ (np.einsum("ij,ij->i", FU, U) + np.einsum("ij,ij->i", FV, V)))
        return WeightedSummary(inner, lam @ FU, lam @ FV, CompositePoint(lam @ U, lam @ V))


class ProtocolAccumulator:
    """Running sums of a protocol under stepsize-proportional weights.

    Stores ``O(dim)`` data instead of the full history, which is what long
    runs on large matrices need.  Its implicit certificate is
    ``lambda_tau = gamma_tau / sum(gamma)``.
    """

    def __init__(self, dim_u, dim_v):
        self.count = 0
        self.gamma_sum = 0.0
        self.gamma_sq_sum = 0.0
        self._inner = 0.0
        self._fu = np.zeros(dim_u)
        self._fv = np.zeros(dim_v)
        self._yu = np.zeros(dim_u)
        self._yv = np.zeros(dim_v)
        self._gammas = []

    def __len__(self):
        return self.count

    def append(self, y, Fu, Fv, gamma):
        if gamma <= 0:
            raise InputError("stepsize must be positive")
        Fv = np.atleast_1d(Fv)
        self.count += 1
        self.gamma_sum += gamma
        self.gamma_sq_sum += gamma * gamma
        self._gammas.append(float(gamma))
        self._inner += gamma * (float(np.dot(Fu, y.u)) + float(np.dot(Fv, y.v)))
        self._fu += gamma * Fu
        self._fv += gamma * Fv
        self._yu += gamma * y.u
        self._yv += gamma * y.v

    def averaged_point(self):
        if self.count == 0:
            raise InputError("empty protocol")
        return CompositePoint(self._yu / self.gamma_sum, self._yv / self.gamma_sum)

    def summary(self, cert=None):
        """Aggregates under the implicit certificate; an explicit ``cert`` must equal it."""
        if self.count == 0:
            raise InputError("empty protocol")
        if cert is not None:
            implicit = np.asarray(self._gammas) / self.gamma_sum
            if len(cert) != self.count or not np.allclose(cert.weights, implicit, rtol=1e-12, atol=1e-15):
                raise InputError("an accumulated protocol only supports its stepsize-proportional certificate")
        g = self.gamma_sum
        return WeightedSummary(self._inner / g, self._fu / g, self._fv / g, self.averaged_point())


class StoredSummary:
    """A protocol reduced to its certificate-weighted aggregates, e.g. reloaded from disk."""

    def __init__(self, summary, count=1):
        self._summary = summary
        self.count = count

    def __len__(self):
        return self.count

    def averaged_point(self):
        return self._summary.point

    def summary(self, cert=None):
        if cert is not None:
            raise InputError("a stored summary already fixes its certificate")
        return self._summary


# ---------------------------------------------------------------------------
# resolution domains


class BlockDomain:
    """A block of ``X'`` that supports exact maximization of affine functions."""

    lifted = False

    def sup(self, c, d=None):
        raise NotImplementedError


def _no_scalar(d, name):
    if d is not None and d != 0:
        raise CapabilityError(f"{name} descriptor cannot bound an epigraph scalar")


@dataclass
class Ball(BlockDomain):
    """Euclidean (or Frobenius) ball ``||y - center|| <= radius``."""

    radius: float
    center: np.ndarray | None = None

    def sup(self, c, d=None):
        _no_scalar(d, "ball")
        c = np.ravel(c)
        base = 0.0 if self.center is None else float(np.dot(c, np.ravel(self.center)))
        return base + self.radius * float(np.linalg.norm(c))


@dataclass
class Box(BlockDomain):
    lo: np.ndarray
    hi: np.ndarray

    def sup(self, c, d=None):
        _no_scalar(d, "box")
        c = np.ravel(c)
        return float(np.sum(np.where(c >= 0, c * np.ravel(self.hi), c * np.ravel(self.lo))))


@dataclass
class Singleton(BlockDomain):
    """The single block value ``u`` (with epigraph scalar ``v`` for lifted blocks)."""

    u: np.ndarray
    v: float | None = None

    @property
    def lifted(self):
        return self.v is not None

    def sup(self, c, d=None):
        val = float(np.dot(np.ravel(c), np.ravel(self.u)))
        if d is not None:
            if self.v is None:
                if d != 0:
                    raise CapabilityError("singleton without an epigraph scalar")
            else:
                val += d * self.v
        return val


def _dual_norm(kind, c, shape):
    if kind == "l1":
        return float(np.abs(c).max()) if np.size(c) else 0.0
    if kind == "nuclear":
        return spectral_norm(np.reshape(c, shape))
    raise CapabilityError(f"no dual norm for nonsmooth kind {kind!r}")


@dataclass
class EpigraphCapped(BlockDomain):
    """``{[y; tau] : weight*||y|| <= tau <= weight*norm_cap}`` for the l1 or nuclear norm.

    The maximum of ``<c, y> + d*tau`` is ``norm_cap * max(0, ||c||_* + d*weight)``.
    """

    kind: str
    weight: float
    norm_cap: float
    shape: tuple | None = None
    lifted = True

    def __post_init__(self):
        if self.weight <= 0 or self.norm_cap < 0:
            raise InputError("capped epigraph needs weight > 0 and norm_cap >= 0")

    def sup(self, c, d=None):
        d = 0.0 if d is None else d
        cn = _dual_norm(self.kind, c, self.shape or np.shape(c))
        if d >= 0:
            return self.norm_cap * cn + d * self.weight * self.norm_cap
        return self.norm_cap * max(0.0, cn + d * self.weight)


@dataclass
class EpigraphBall(BlockDomain):
    """``{[y; tau] : ||y||_2 <= radius, weight*||y|| <= tau <= cap}``.

    With the default cap ``weight * radius * sqrt(k)`` (k the block size for l1,
    the smaller matrix side for nuclear) the cap never cuts into the ball and
    the closed forms below are exact; a smaller cap makes the value an upper
    bound, which keeps every derived lower bound valid.
    """

    kind: str
    weight: float
    radius: float
    shape: tuple
    cap: float | None = None
    lifted = True

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.cap is None:
            k = int(np.prod(self.shape)) if self.kind == "l1" else min(self.shape)
            self.cap = self.weight * self.radius * np.sqrt(k)

    def sup(self, c, d=None):
        d = 0.0 if d is None else d
        c = np.asarray(c, dtype=float)
        if d >= 0:
            return self.radius * float(np.linalg.norm(c)) + d * self.cap
        beta = -d * self.weight
        if self.kind == "l1":
            return self.radius * float(np.linalg.norm(soft_threshold(c, beta)))
        if self.kind == "nuclear":
            _, s = svt_with_values(c.reshape(self.shape), beta)
            return self.radius * float(np.linalg.norm(s))
        raise CapabilityError(f"unsupported nonsmooth kind {self.kind!r}")


class ResolutionDomain:
    """Product of per-block descriptors aligned with a :class:`~mirrorprox.prox.Layout`."""

    def __init__(self, layout, descriptors):
        if len(descriptors) != len(layout):
            raise InputError(f"need {len(layout)} descriptors, got {len(descriptors)}")
        for d in descriptors:
            if not isinstance(d, BlockDomain):
                raise CapabilityError(f"unsupported block descriptor {type(d).__name__}")
        self.layout = layout
        self.descriptors = list(descriptors)


def affine_max(c_u, d_v, block):
    """Exact ``sup <c_u, y> + d_v*tau`` over one block descriptor."""
    if not isinstance(block, BlockDomain):
        raise CapabilityError(f"unsupported block descriptor {type(block).__name__}")
    return block.sup(np.asarray(c_u, dtype=float), d_v)


def _sup_over_domain(field_u, field_v, domain):
    layout = domain.layout
    total = 0.0
    for i, desc in enumerate(domain.descriptors):
        c = -field_u[layout.slices[i]]
        j = layout.scalar_index[i]
        d = None if j is None else -float(field_v[j])
        total += affine_max(c, d, desc)
    return total


def averaged_point(protocol, cert=None):
    """Convex combination ``sum lambda_tau y_tau`` of the protocol's search points."""
    if isinstance(protocol, ProtocolAccumulator):
        if cert is not None:
            raise InputError("an accumulated protocol carries its own certificate")
        return protocol.averaged_point()
    if cert is None or len(cert) != len(protocol):
        raise InputError("certificate length does not match protocol")
    return protocol.summary(cert).point


def resolution(protocol, cert, domain):
    """``sup_{x in X'} sum lambda_tau <F(y_tau), y_tau - x>`` computed block by block."""
    s = protocol.summary(cert)
    return s.inner + _sup_over_domain(s.field_u, s.field_v, domain)


def certificate_lower_bound(protocol, cert, domain, phi_bar_at_avg):
    """Lower bound ``Phi_bar(x^t) - Res(X')`` on the saddle value.

    Valid whenever ``X'`` contains a minimizer of the primal problem.
    """
    return float(phi_bar_at_avg) - resolution(protocol, cert, domain)


def eps_sad_exact(x, problem):
    """Saddle-point gap ``Phi_bar(x1) - Phi_under(x2)`` via exact inner oracles.

    Parameters
    ----------
    x : CompositePoint
    problem : object
        Must provide ``primal_value(x)`` (max over the second player) and
        ``dual_value(x)`` (min over the first player).
    """
    pv = getattr(problem, "primal_value", None)
    dv = getattr(problem, "dual_value", None)
    if pv is None or dv is None:
        raise CapabilityError("problem does not expose exact primal/dual value oracles")
    return float(pv(x)) - float(dv(x))


class BoundTracker:
    """Best upper bound (nonincreasing) and best lower bound (nondecreasing)."""

    def __init__(self):
        self.upper = np.inf
        self.lower = -np.inf
        self.best_point = None

    def offer_upper(self, value, point=None):
        if value < self.upper:
            self.upper = float(value)
            if point is not None:
                self.best_point = point
            return True
        return False

    def offer_lower(self, value):
        if value > self.lower:
            self.lower = float(value)
            return True
        return False

    @property
    def gap(self):
        return self.upper - self.lower

    def reset_lower(self):
        self.lower = -np.inf
