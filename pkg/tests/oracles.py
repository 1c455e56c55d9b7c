"""Independent reference computations shared by several test modules.

None of these call into the solver's closed forms: they are generic
first-order or grid searches with their own tolerances.
"""
import numpy as np


def subgradient_minimize(obj_grad, x0, strong=1.0, iters=100_000, project=None):
    """Projected subgradient method for a ``strong``-strongly convex objective.

    Steps ``1/(strong*(k+1))`` with suffix averaging; the averaged iterate
    converges at rate ``O(log k / k)`` in squared distance.
    """
    x = np.array(x0, dtype=float)
    avg = np.zeros_like(x)
    wsum = 0.0
    for k in range(iters):
        g = obj_grad(x)
        x = x - g / (strong * (k + 1))
        if project is not None:
            x = project(x)
        if k >= iters // 2:
            avg += x
            wsum += 1.0
    return avg / wsum


def polish_prox_l1(a, beta, radius=None, iters=2000):
    """Minimize ``0.5||x - a||^2 + beta*||x||_1`` (optionally over a ball) by
    bisection on the ball multiplier and a coordinatewise exact minimization.

    For a ball constraint the KKT system reads ``x = argmin 0.5(1+nu)||x||^2
    - <a, x> + beta||x||_1`` with ``nu >= 0``; each coordinate solves a scalar
    piecewise-quadratic problem, found here by enumerating its three pieces.
    """
    a = np.asarray(a, dtype=float)

    def coord(nu):
        x = np.zeros_like(a)
        for i, ai in enumerate(a):
            best, bx = 0.0, 0.0
            for s in (1.0, -1.0):
                xi = (ai - s * beta) / (1.0 + nu)
                if xi * s > 0:
                    val = 0.5 * (1 + nu) * xi * xi - ai * xi + beta * abs(xi)
                    if val < best:
                        best, bx = val, xi
            x[i] = bx
        return x

    x = coord(0.0)
    if radius is None or np.linalg.norm(x) <= radius:
        return x
    lo, hi = 0.0, 1.0
    while np.linalg.norm(coord(hi)) > radius:
        hi *= 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(coord(mid)) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return coord(hi)


def capped_simplex_bisect(b, r, iters=200):
    """Water-filling threshold found by bisection rather than sorting."""
    a = np.abs(np.asarray(b, dtype=float))
    if a.sum() <= r:
        return a
    lo, hi = 0.0, float(a.max())
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(a - mid, 0).sum() > r:
            lo = mid
        else:
            hi = mid
    return np.maximum(a - hi, 0.0)


def svt_conic(A, beta):
    """Nuclear-norm prox by an interior-point conic solve."""
    import cvxpy as cp

    X = cp.Variable(A.shape)
    cp.Problem(cp.Minimize(0.5 * cp.sum_squares(X - A) + beta * cp.normNuc(X))).solve(
        solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, max_iter=500)
    return X.value
