"""Independent reference solvers with dual lower bounds.

These are used to put a number on the optimal value of instances whose
optimum is not planted.  They share no code path with CoMP beyond the
closed-form shrinkage operators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, eye, hstack, vstack

from ..prox import singular_value_threshold, soft_threshold, spectral_norm
from .generators import tv_adjoint, tv_forward, tv_size


@dataclass
class Reference:
    """Best primal value found, a certified lower bound and the primal point."""

    upper: float
    lower: float
    point: object
    iterations: int

    @property
    def gap(self):
        return self.upper - self.lower


# ---------------------------------------------------------------------------
# matrix completion: ADMM on y = x = w


def mc_dual_bound(inst, y, u1):
    """Weak-duality bound from the residual ``r = P y - b`` with ``-P^T r`` split as ``A1 + A2``.

    ``A1`` is ``u1`` clipped to ``|.| <= lam`` and ``A2`` the remainder; ``r``
    is scaled down until ``||A2||_sp <= mu``, then the concave dual
    ``-<z, b> - ||z||^2/2`` is maximized along the ray ``z = theta*r``.
    """
    mask, b = inst.mask, inst.b
    z = y[mask] - b
    G = np.zeros(mask.shape)
    G[mask] = -z
    A1 = np.clip(u1, -inst.lam, inst.lam)
    s = max(spectral_norm(G - A1) / inst.mu, 1.0)
    zz = float(z @ z)
    zb = float(z @ b)
    if zz == 0.0:
        return 0.0
    theta = min(max(-zb / zz, 0.0), 1.0 / s)
    return -theta * zb - 0.5 * theta ** 2 * zz


def mc_reference(inst, iters=3000, beta=1.0, tol=1e-10):
    """ADMM for ``0.5||P y - b||^2 + lam||x||_1 + mu||w||_nuc`` with ``y = x = w``."""
    mask, lam, mu = inst.mask, inst.lam, inst.mu
    B = np.zeros(mask.shape)
    B[mask] = inst.b
    x = np.zeros(mask.shape)
    w = np.zeros(mask.shape)
    u1 = np.zeros(mask.shape)
    u2 = np.zeros(mask.shape)
    diag = mask.astype(float) + 2.0 * beta
    best, best_y, lower = np.inf, x, -np.inf
    it = 0
    for it in range(1, iters + 1):
        y = (B + beta * (x - u1 / beta) + beta * (w - u2 / beta)) / diag
        x = soft_threshold(y + u1 / beta, lam / beta)
        w = singular_value_threshold(y + u2 / beta, mu / beta)
        u1 += beta * (y - x)
        u2 += beta * (y - w)
        if it % 50 == 0 or it == iters:
            for cand in (x, w):
                val = inst.objective(cand)
                if val < best:
                    best, best_y = val, cand.copy()
            # At a fixed point u1 + u2 = -P^T(P y - b), |u1| <= lam and ||u2||_sp <= mu.
            lower = max(lower, mc_dual_bound(inst, y, u1))
            if best - lower <= tol * max(1.0, abs(best)):
                break
    return Reference(best, lower, best_y, it)


# ---------------------------------------------------------------------------
# image decomposition: Chambolle-Pock


def _tv_matrix(shape):
    """Sparse ``T`` with the same ordering as :func:`tv_forward`."""
    n1, n2 = shape
    idx = np.arange(n1 * n2).reshape(shape)
    rows, cols, vals = [], [], []
    r = 0
    for j in range(n2):
        for i in range(n1 - 1):
            rows += [r, r]
            cols += [idx[i + 1, j], idx[i, j]]
            vals += [1.0, -1.0]
            r += 1
    for i in range(n1):
        for j in range(n2 - 1):
            rows += [r, r]
            cols += [idx[i, j + 1], idx[i, j]]
            vals += [1.0, -1.0]
            r += 1
    return coo_matrix((vals, (rows, cols)), shape=(r, n1 * n2)).tocsr()


def image_dual_bound(inst, z):
    """Weak-duality lower bound from a dual candidate ``z`` (an ``n1 x n2`` matrix).

    A dual-feasible point is ``theta*z`` with ``sum(z) = 0``, ``z = -T^T p``,
    ``||z||_F <= 1``, ``||z||_sp <= mu1``, ``|z| <= mu2`` and ``|p| <= mu3``.
    The smallest ``||p||_inf`` is found by linear programming; its value is
    ``-theta*<z, b>``.  Both signs of ``z`` are tried.
    """
    z = np.asarray(z, dtype=float)
    z = z - z.mean()
    if not np.any(z):
        return 0.0
    Tm = _tv_matrix(inst.shape)
    k = Tm.shape[0]
    # min s  s.t.  T^T p = -z,  -s <= p <= s
    c = np.zeros(k + 1)
    c[-1] = 1.0
    Aeq = hstack([Tm.T, coo_matrix((Tm.shape[1], 1))]).tocsr()
    I = eye(k, format="csr")
    ones = coo_matrix(np.ones((k, 1)))
    Aub = vstack([hstack([I, -ones]), hstack([-I, -ones])]).tocsr()
    res = linprog(c, A_ub=Aub, b_ub=np.zeros(2 * k), A_eq=Aeq, b_eq=-z.ravel(order="C"),
                  bounds=[(None, None)] * k + [(0, None)], method="highs")
    if res.status != 0:
        return -np.inf
    p = res.x[:k]
    # Guard against LP tolerance: use the exact residual of T^T p against -z.
    z_exact = -(Tm.T @ p).reshape(inst.shape)
    s = max(float(np.linalg.norm(z_exact)), spectral_norm(z_exact) / inst.mu1,
            float(np.abs(z_exact).max()) / inst.mu2, float(np.abs(p).max()) / inst.mu3)
    if s == 0:
        return 0.0
    val = float(np.vdot(z_exact, inst.b)) / s
    return abs(val)


def image_reference(inst, iters=5000, tol=1e-6, check_every=500):
    """Chambolle-Pock on ``min G(y) + F(K y)`` with ``K y = (y1 + y2 + y3, T y3)``."""
    shape = inst.shape
    b = inst.b
    y1 = np.zeros(shape)
    y2 = np.zeros(shape)
    y3 = np.zeros(shape)
    yb1, yb2, yb3 = y1.copy(), y2.copy(), y3.copy()
    p1 = np.zeros(shape)
    p2 = np.zeros(tv_size(shape))
    L = np.sqrt(11.0)
    tau = sigma = 0.99 / L
    best, best_pt, lower = np.inf, None, -np.inf
    it = 0
    for it in range(1, iters + 1):
        q1 = p1 + sigma * (yb1 + yb2 + yb3)
        q1 = q1 - sigma * b
        nq = np.linalg.norm(q1)
        p1 = q1 / nq if nq > 1 else q1
        p2 = np.clip(p2 + sigma * tv_forward(yb3), -inst.mu3, inst.mu3)
        n1 = singular_value_threshold(y1 - tau * p1, tau * inst.mu1)
        n2 = soft_threshold(y2 - tau * p1, tau * inst.mu2)
        n3 = y3 - tau * (p1 + tv_adjoint(p2, shape))
        yb1, yb2, yb3 = 2 * n1 - y1, 2 * n2 - y2, 2 * n3 - y3
        y1, y2, y3 = n1, n2, n3
        if it % check_every == 0 or it == iters:
            val = inst.objective(y1, y2, y3)
            if val < best:
                best, best_pt = val, (y1.copy(), y2.copy(), y3.copy())
            lower = max(lower, image_dual_bound(inst, p1))
            if best - lower <= tol * max(1.0, best):
                break
    return Reference(best, lower, best_pt, it)
