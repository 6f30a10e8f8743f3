"""Symmetric tridiagonal matrices and the kernels that act on them.

The routines here are written against plain numpy expressions so the same code
runs on float64 arrays and on object arrays of mpfr values (inside an active
:class:`~cgfp.hiprec.context.PrecisionContext`).
"""

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import _arith


@dataclass
class Tridiagonal:
    """Symmetric tridiagonal ``T_J`` with diagonal ``alpha``, off-diagonal ``beta``.

    ``beta_last`` is the coupling coefficient to the next (not included) basis
    vector, i.e. the trailing coefficient of the Lanczos relation.
    """

    alpha: np.ndarray
    beta: np.ndarray
    beta_last: Any = 0.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha)
        self.beta = np.asarray(self.beta)
        if len(self.beta) != max(len(self.alpha) - 1, 0):
            raise ValueError("beta must have exactly J-1 entries")

    @property
    def J(self):
        return len(self.alpha)

    @property
    def is_hp(self):
        return _arith.is_hp(self.alpha)

    def leading(self, j):
        """The leading j x j block, with ``beta_last`` set to the coupling into row j+1."""
        if not 1 <= j <= self.J:
            raise ValueError(f"j={j} out of range 1..{self.J}")
        last = self.beta[j - 1] if j < self.J else self.beta_last
        return Tridiagonal(self.alpha[:j].copy(), self.beta[: j - 1].copy(), last)

    def to_dense(self):
        dtype = object if self.is_hp else float
        J = self.J
        out = np.zeros((J, J), dtype=dtype)
        if dtype is object:
            out[:] = self.alpha[0] * 0
        for i in range(J):
            out[i, i] = self.alpha[i]
        for i in range(J - 1):
            out[i, i + 1] = self.beta[i]
            out[i + 1, i] = self.beta[i]
        return out

    def to_float(self):
        return Tridiagonal(_arith.to_float(self.alpha), _arith.to_float(self.beta),
                           float(self.beta_last))

    def matvec(self, v):
        out = self.alpha * v
        if self.J > 1:
            out[:-1] = out[:-1] + self.beta * v[1:]
            out[1:] = out[1:] + self.beta * v[:-1]
        return out

    def gershgorin(self):
        """Interval ``(lo, hi)`` containing every eigenvalue."""
        b = np.abs(self.beta)
        rad = np.zeros(self.J, dtype=object if self.is_hp else float)
        if self.is_hp:
            rad[:] = self.alpha[0] * 0
        if self.J > 1:
            rad[:-1] = rad[:-1] + b
            rad[1:] = rad[1:] + b
        return min(self.alpha - rad), max(self.alpha + rad)

    def norm_bound(self):
        lo, hi = self.gershgorin()
        return max(abs(lo), abs(hi))


def sturm_count(T, x, pivmin):
    """Number of eigenvalues of ``T`` strictly below each shift in ``x`` (vectorized)."""
    alpha, beta2 = T.alpha, T.beta * T.beta
    d = alpha[0] - x
    d = np.where(d == 0, -pivmin, d)
    count = (d < 0).astype(int)
    for i in range(1, T.J):
        d = (alpha[i] - x) - beta2[i - 1] / d
        d = np.where(d == 0, -pivmin, d)
        count += (d < 0).astype(int)
    return count


def _roundoff(T, ctx):
    return ctx.unit_roundoff if ctx is not None else np.finfo(float).eps / 2


def bisect_eigenvalues(T, ctx=None, tol=None, indices=None):
    """Eigenvalues of ``T`` in ascending order by Sturm-sequence bisection.

    With ``ctx`` the computation runs in that precision (``T`` entries are
    promoted); otherwise in float64.  ``tol`` is the absolute bracket width at
    which bisection stops, by default ``4 u ||T||``.  ``indices`` selects
    eigenvalues by ascending 0-based position (all by default).
    """
    if ctx is not None:
        with ctx.local():
            Th = Tridiagonal(ctx.array(T.alpha), ctx.array(T.beta), ctx.scalar(T.beta_last))
            return _bisect(Th, ctx, tol, indices)
    Tf = T.to_float() if T.is_hp else T
    return _bisect(Tf, None, tol, indices)


def _bisect(T, ctx, tol, indices=None):
    target = np.arange(T.J) if indices is None else np.asarray(indices, dtype=int)
    J = len(target)
    u = _roundoff(T, ctx)
    gl, gu = T.gershgorin()
    tnorm = max(abs(gl), abs(gu))
    if tnorm == 0:
        return np.zeros(J, dtype=object if ctx else float) + (T.alpha[0] * 0)
    if tol is None:
        tol = 4 * u * tnorm
    pivmin = tnorm * u * u
    span = gu - gl
    gl = gl - 2 * u * tnorm - pivmin
    gu = gu + 2 * u * tnorm + pivmin
    if ctx is None:
        lo = np.full(J, float(gl))
        hi = np.full(J, float(gu))
    else:
        lo = np.empty(J, dtype=object)
        hi = np.empty(J, dtype=object)
        lo.fill(gl)
        hi.fill(gu)
    steps = int(np.ceil(np.log2(float(span + 4 * u * tnorm) / float(tol)))) + 2
    for _ in range(max(steps, 1)):
        mid = (lo + hi) / 2
        c = sturm_count(T, mid, pivmin)
        up = c >= target + 1
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return (lo + hi) / 2


def ldl_factor(T):
    """Root-free LDL^T of a tridiagonal without pivoting: returns (d, l)."""
    J = T.J
    d = [None] * J
    l = [None] * max(J - 1, 0)
    d[0] = T.alpha[0]
    for i in range(J - 1):
        l[i] = T.beta[i] / d[i]
        d[i + 1] = T.alpha[i + 1] - l[i] * T.beta[i]
    return d, l


def ldl_solve(T, rhs):
    """Solve ``T x = rhs`` via symmetric LDL^T factorization."""
    d, l = ldl_factor(T)
    return _ldl_apply(d, l, list(rhs), T.J)


def _ldl_apply(d, l, y, J):
    for i in range(1, J):
        y[i] = y[i] - l[i - 1] * y[i - 1]
    x = [y[i] / d[i] for i in range(J)]
    for i in range(J - 2, -1, -1):
        x[i] = x[i] - l[i] * x[i + 1]
    return np.array(x, dtype=object if _arith.is_hp(x[0]) else float)


def leading_solves(T, scale):
    """Yield ``T_k^{-1} (scale e_1)`` for k = 1..J, sharing one factorization."""
    d, l = ldl_factor(T)
    J = T.J
    y = [scale] + [scale * 0] * (J - 1)
    for i in range(1, J):
        y[i] = -l[i - 1] * y[i - 1]
    z = [y[i] / d[i] for i in range(J)]
    for k in range(1, J + 1):
        x = z[:k]
        for i in range(k - 2, -1, -1):
            x[i] = x[i] - l[i] * x[i + 1]
        yield x


def _tri_lu_solve(dl, d, du, b, tiny):
    """Tridiagonal solve by Gaussian elimination with partial pivoting (as in LAPACK gttrf)."""
    n = len(d)
    dl, d, b = list(dl), list(d), list(b)
    du = list(du) + [d[0] * 0]
    du2 = [d[0] * 0] * n
    for i in range(n - 1):
        if abs(d[i]) >= abs(dl[i]):
            if d[i] == 0:
                d[i] = tiny
            fact = dl[i] / d[i]
            d[i + 1] = d[i + 1] - fact * du[i]
            b[i + 1] = b[i + 1] - fact * b[i]
        else:
            fact = d[i] / dl[i]
            d[i] = dl[i]
            temp = du[i]
            du[i] = d[i + 1]
            d[i + 1] = temp - fact * d[i + 1]
            if i < n - 2:
                du2[i] = du[i + 1]
                du[i + 1] = -fact * du[i + 1]
            b[i], b[i + 1] = b[i + 1], b[i] - fact * b[i + 1]
    if d[n - 1] == 0:
        d[n - 1] = tiny
    x = [None] * n
    x[n - 1] = b[n - 1] / d[n - 1]
    if n > 1:
        x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2]
    for i in range(n - 3, -1, -1):
        x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i]
    return x


def eigh(T, ctx=None, seed=0, iterations=3):
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of ``T``.

    Values come from Sturm bisection, vectors from inverse iteration; vectors of
    eigenvalues closer than ``1e-3 ||T||`` are Gram-Schmidt orthogonalized
    against each other, so clusters of nearly equal Ritz values get an
    orthonormal basis of their invariant subspace.
    """
    theta = bisect_eigenvalues(T, ctx)
    if ctx is None:
        return theta, _inverse_iteration(T.to_float() if T.is_hp else T, theta, None, seed, iterations)
    with ctx.local():
        Th = Tridiagonal(ctx.array(T.alpha), ctx.array(T.beta), ctx.scalar(T.beta_last))
        return theta, _inverse_iteration(Th, theta, ctx, seed, iterations)


def _inverse_iteration(T, theta, ctx, seed, iterations):
    J = T.J
    rng = np.random.Generator(np.random.Philox(seed))
    tnorm = T.norm_bound()
    u = _roundoff(T, ctx)
    ortol = 1e-3 * tnorm
    tiny = tnorm * u * u if tnorm != 0 else u * u
    dtype = object if ctx is not None else float
    S = np.empty((J, J), dtype=dtype)
    group_start = 0
    for j in range(J):
        if j > 0 and theta[j] - theta[j - 1] > ortol:
            group_start = j
        start = rng.uniform(-1, 1, J)
        v = ctx.array(start) if ctx is not None else start
        diag = T.alpha - theta[j]
        for _ in range(iterations):
            v = v / _arith.norm(v)
            y = np.array(_tri_lu_solve(T.beta, diag, T.beta, v, tiny), dtype=dtype)
            for _pass in range(2):
                for i in range(group_start, j):
                    y = y - _arith.dot(S[:, i], y) * S[:, i]
            v = y
        S[:, j] = v / _arith.norm(v)
    return S
