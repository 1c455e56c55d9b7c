"""Seeded instance generators for the shipped experiment families.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from ..errors import InputError, MirrorProxError
from ..prox import AggregatedSetup, EpigraphBlock, Layout, nuclear_norm


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# bilinear toy


@dataclass
class BilinearInstance:
    """``min_{||x|| <= rx} max_{||y|| <= ry} <y, A x - b>`` with exact value oracles."""

    A: np.ndarray
    b: np.ndarray
    rx: float = 1.0
    ry: float = 1.0

    def __post_init__(self):
        m, n = self.A.shape
        self.n, self.m = n, m
        self.layout = Layout([
            EpigraphBlock((n,), base="ball", radius=self.rx, name="x"),
            EpigraphBlock((m,), base="ball", radius=self.ry, name="y"),
        ])
        self.setup = AggregatedSetup(self.layout, [1.0, 1.0])
        self.lipschitz = float(np.linalg.norm(self.A, 2))

    def field(self, u):
        x, y = u[: self.n], u[self.n:]
        return np.concatenate([self.A.T @ y, self.b - self.A @ x])

    def primal_value(self, p):
        return self.ry * float(np.linalg.norm(self.A @ p.u[: self.n] - self.b))

    def dual_value(self, p):
        y = p.u[self.n:]
        return -self.rx * float(np.linalg.norm(self.A.T @ y)) - float(y @ self.b)


def gen_bilinear(n=20, seed=0, m=None):
    rng = make_rng(seed)
    m = n if m is None else m
    return BilinearInstance(rng.standard_normal((m, n)), rng.standard_normal(m))


# ---------------------------------------------------------------------------
# matrix completion


@dataclass
class MCInstance:
    """Matrix completion data: mask of observed cells, observations and penalties."""

    mask: np.ndarray
    b: np.ndarray
    lam: float
    mu: float
    sigma: float
    D: float
    y_sharp: np.ndarray
    opt: float | None = None

    @property
    def n(self):
        return self.mask.shape[0]

    def objective(self, y):
        r = y[self.mask] - self.b
        return 0.5 * float(r @ r) + self.lam * float(np.abs(y).sum()) + self.mu * nuclear_norm(y)


def sparse_low_rank(n, rng, density=0.1):
    """``sum_{i<=n//4} e_i f_i^T`` with Gaussian factors thinned so about ``density`` of entries are nonzero."""
    k = max(n // 4, 1)
    keep = min(1.0, np.sqrt(-np.log(1.0 - density) / k))
    E = rng.standard_normal((n, k)) * (rng.random((n, k)) < keep)
    F = rng.standard_normal((n, k)) * (rng.random((n, k)) < keep)
    return E @ F.T


def mc_scale_guess(b, M, n, sigma):
    return float(np.sqrt(n * n / M * max(float(b @ b) - M * sigma ** 2, 1.0)))


def gen_matrix_completion(n, seed, obs_prob=0.25, noise_factor=0.1, density=0.1, y_sharp=None):
    """Random sparse low-rank matrix observed on a random cell subset with Gaussian noise."""
    if n < 2:
        raise InputError("n must be at least 2")
    if not 0 < obs_prob <= 1:
        raise InputError("obs_prob must lie in (0, 1]")
    rng = make_rng(seed)
    y = sparse_low_rank(n, rng, density) if y_sharp is None else np.asarray(y_sharp, dtype=float)
    mask = rng.random((n, n)) < obs_prob
    if not mask.any():
        mask[0, 0] = True
    sigma = noise_factor * float(np.abs(y).sum()) / (n * n)
    noise = rng.standard_normal((n, n))
    b = (y + sigma * noise)[mask]
    lam = mu = 10 * sigma
    D = mc_scale_guess(b, int(mask.sum()), n, sigma)
    return MCInstance(mask, b, lam, mu, sigma, D, y)


def nuclear_subgradient(y, rng, tol=1e-9, spread=0.9):
    """``U V^T + W`` with ``W`` orthogonal to the row and column spaces of ``y`` and ``||W|| <= spread``."""
    n1, n2 = y.shape
    U, s, Vt = np.linalg.svd(y)
    r = int(np.sum(s > tol * max(s[0] if s.size else 0.0, 1e-300))) if s.size and s[0] > 0 else 0
    Ur, Vr = U[:, :r], Vt[:r].T
    G = rng.standard_normal((n1, n2))
    W = G - Ur @ (Ur.T @ G)
    W = W - (W @ Vr) @ Vr.T
    nw = np.linalg.norm(W, 2) if W.size else 0.0
    if nw > 0:
        W *= spread * rng.random() / nw
    return Ur @ Vr.T + W, r


def gen_mc_known_opt(n, seed, density=0.1, noise_factor=0.1, y_sharp=None):
    """Fully observed instance whose optimum is ``y_sharp`` by construction.

    ``b = y# + lam*g1 + mu*g2`` with ``g1`` a subgradient of the l1 norm and
    ``g2`` one of the nuclear norm at ``y#``, so the first-order optimality
    condition holds exactly at ``y#``.
    """
    rng = make_rng(seed)
    y = sparse_low_rank(n, rng, density) if y_sharp is None else np.asarray(y_sharp, dtype=float)
    mask = np.ones((n, n), dtype=bool)
    total = float(np.abs(y).sum())
    sigma = noise_factor * (total if total > 0 else 1.0) / (n * n)
    lam = mu = 10 * sigma
    g1 = np.where(y > 0, 1.0, np.where(y < 0, -1.0, rng.uniform(-1, 1, y.shape)))
    g2, rank = nuclear_subgradient(y, rng)
    B = y + lam * g1 + mu * g2
    b = B[mask]
    inst = MCInstance(mask, b, lam, mu, sigma, mc_scale_guess(b, b.size, n, sigma), y)
    inst.opt = inst.objective(y)
    inst.g1, inst.g2, inst.rank = g1, g2, rank
    return inst


def verify_mc_known_opt(inst, tol=1e-10):
    """Residual of the planted optimality condition; raises if it is not met."""
    y = inst.y_sharp
    B = np.zeros(inst.mask.shape)
    B[inst.mask] = inst.b
    grad = y - B
    res = grad + inst.lam * inst.g1 + inst.mu * inst.g2
    err = float(np.abs(res).max())
    if err > tol * max(1.0, float(np.abs(B).max())):
        raise MirrorProxError(f"planted optimality residual {err:.3e}")
    if np.abs(inst.g1).max() > 1 + 1e-12:
        raise MirrorProxError("l1 subgradient out of range")
    if np.linalg.norm(inst.g2, 2) > 1 + 1e-9:
        raise MirrorProxError("nuclear subgradient has spectral norm above 1")
    return err


# ---------------------------------------------------------------------------
# l1 minimization with a planted optimum


@dataclass
class L1Instance:
    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray
    lam_star: np.ndarray
    R_star: float

    @property
    def opt(self):
        return float(np.abs(self.x_star).sum())

    def accuracy(self, x):
        """``max((||x||_1 - ||x*||_1)/||x*||_1, ||A x - b||_2)``."""
        return max((float(np.abs(x).sum()) - self.opt) / self.opt,
                   float(np.linalg.norm(self.A @ x - self.b)))


def dct_rows(n, rows):
    """Rows of the orthonormal DCT-II matrix."""
    C = dct(np.eye(n), norm="ortho", axis=0)
    return C[rows]


def gen_l1_planted(n, m, c=1.0, seed=0, density=0.1, x_norm=0.5):
    """``A = C_rows + p q^T`` with ``A^T lam* in d||x*||_1`` and ``b = A x*``.

    ``C_rows`` are ``m`` random rows of the orthonormal DCT matrix, ``x*`` is a
    sparse Gaussian vector scaled to Euclidean norm ``x_norm`` and ``lam*``
    a Gaussian vector scaled to norm ``c*n``.
    """
    if not 0 < m < n:
        raise InputError("need 0 < m < n")
    if not 0 < x_norm <= 1:
        raise InputError("x_norm must lie in (0, 1]")
    rng = make_rng(seed)
    k = max(1, int(round(density * n)))
    x = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    x[support] = rng.standard_normal(k)
    x *= x_norm / np.linalg.norm(x)
    R = c * n
    lam = rng.standard_normal(m)
    lam *= R / np.linalg.norm(lam)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    Fh = dct_rows(n, rows)
    s = np.where(x > 0, 1.0, np.where(x < 0, -1.0, rng.uniform(-1, 1, n)))
    p = lam / (lam @ lam)
    q = s - Fh.T @ lam
    A = Fh + np.outer(p, q)
    b = A @ x
    inst = L1Instance(A, b, x, lam, R)
    verify_l1_planted(inst)
    return inst


def verify_l1_planted(inst, tol=1e-10):
    g = inst.A.T @ inst.lam_star
    x = inst.x_star
    on = x != 0
    scale = max(1.0, float(np.abs(g).max()))
    if np.abs(g[on] - np.sign(x[on])).max(initial=0.0) > tol * scale:
        raise MirrorProxError("A^T lam* does not match sign(x*) on the support")
    if np.abs(g[~on]).max(initial=0.0) > 1 + tol * scale:
        raise MirrorProxError("A^T lam* leaves [-1, 1] off the support")
    if np.linalg.norm(inst.A @ x - inst.b) > tol * max(1.0, np.linalg.norm(inst.b)):
        raise MirrorProxError("b != A x*")
    return True


# ---------------------------------------------------------------------------
# image decomposition


def tv_forward(y):
    """Forward differences ``[vertical; horizontal]`` flattened to length ``2n(n-1)``."""
    y = np.asarray(y, dtype=float)
    di = y[1:, :] - y[:-1, :]
    dj = y[:, 1:] - y[:, :-1]
    return np.concatenate([di.ravel(order="F"), dj.ravel(order="C")])


def tv_adjoint(w, shape):
    n1, n2 = shape
    k = (n1 - 1) * n2
    di = np.reshape(w[:k], (n1 - 1, n2), order="F")
    dj = np.reshape(w[k:], (n1, n2 - 1), order="C")
    out = np.zeros(shape)
    out[1:, :] += di
    out[:-1, :] -= di
    out[:, 1:] += dj
    out[:, :-1] -= dj
    return out


@dataclass
class ImageInstance:
    b: np.ndarray
    mu1: float
    mu2: float
    mu3: float
    sigma: float = 0.0
    low_rank: np.ndarray | None = None
    sparse: np.ndarray | None = None

    @property
    def shape(self):
        return self.b.shape

    def objective(self, y1, y2, y3):
        return (float(np.linalg.norm(y1 + y2 + y3 - self.b)) + self.mu1 * nuclear_norm(y1)
                + self.mu2 * float(np.abs(y2).sum()) + self.mu3 * float(np.abs(tv_forward(y3)).sum()))


def gen_image_synthetic(n, seed, sparsity=0.01, sigma=0.01):
    """Rank ``floor(sqrt(n))`` plus ``sparsity``-dense sparse plus Gaussian noise of level ``sigma``."""
    if n < 2:
        raise InputError("n must be at least 2")
    rng = make_rng(seed)
    r = int(np.floor(np.sqrt(n)))
    L = rng.standard_normal((n, r)) @ rng.standard_normal((r, n)) / np.sqrt(n)
    S = rng.standard_normal((n, n)) * (rng.random((n, n)) < sparsity)
    b = L + S + sigma * rng.standard_normal((n, n))
    return ImageInstance(b, 10 * sigma, sigma, sigma, sigma, L, S)


def image_from_matrix(b, mu1, mu2, mu3):
    b = np.asarray(b, dtype=float)
    if b.ndim != 2 or min(b.shape) < 2:
        raise InputError("image must be a matrix with both sides >= 2")
    return ImageInstance(b, mu1, mu2, mu3)


def tv_size(shape):
    n1, n2 = shape
    return (n1 - 1) * n2 + n1 * (n2 - 1)


def build_image_problem(inst):
    """Penalized splitting of ``||y1+y2+y3-b|| + mu1||y1||_nuc + mu2||y2||_1 + mu3||T y3||_1``.

    ``y0 = T y3`` carries the total-variation term; the data fit is a max over
    the unit ball ``z``.  The coupling's exact-penalty threshold is
    ``1 + mu3*sqrt(dim y0)``.
    """
    from ..multiterm import Coupling, DualBlock, MultiTermProblem, NormResidual, PrimalBlock

    shape = inst.shape
    if min(shape) < 2:
        raise InputError("image must have both sides >= 2")
    k = tv_size(shape)
    return MultiTermProblem(
        primal=[
            PrimalBlock("y0", (k,), "l1", inst.mu3),
            PrimalBlock("y1", shape, "nuclear", inst.mu1),
            PrimalBlock("y2", shape, "l1", inst.mu2),
            PrimalBlock("y3", shape),
        ],
        dual=[DualBlock("z", shape, 1.0)],
        terms=[NormResidual(["y1", "y2", "y3"], "z", inst.b)],
        couplings=[Coupling("y0", "y3", forward=tv_forward,
                            adjoint=lambda w: tv_adjoint(w, shape),
                            G=1.0, H=inst.mu3 * np.sqrt(k))],
    )
