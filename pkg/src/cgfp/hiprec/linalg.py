"""Dense and structured linear algebra on mpfr object arrays.

Every function here expects to run inside an active precision context.
"""

import numpy as np

from .. import _arith
from ..errors import NotPositiveDefinite
from ..tridiagonal import Tridiagonal, ldl_solve


class DenseOp:
    def __init__(self, M):
        self.M = M
        self.n = M.shape[0]
        self._L = None

    def matvec(self, v):
        return self.M.dot(v)

    def solve(self, b):
        if self._L is None:
            self._L = cholesky(self.M)
        return cholesky_solve(self._L, b)


class DiagonalOp:
    def __init__(self, d):
        self.d = d
        self.n = len(d)

    def matvec(self, v):
        return self.d * v

    def solve(self, b):
        return b / self.d


class TridiagonalOp:
    def __init__(self, T):
        self.T = T
        self.n = T.J

    def matvec(self, v):
        return self.T.matvec(v)

    def solve(self, b):
        return ldl_solve(self.T, list(b))


def as_operator(A, ctx):
    """Promote ``A`` (SpdMatrix, Tridiagonal, ndarray or operator) into ``ctx``."""
    from ..matio import SpdMatrix

    if isinstance(A, (DenseOp, DiagonalOp, TridiagonalOp)):
        return A
    if isinstance(A, Tridiagonal):
        return TridiagonalOp(Tridiagonal(ctx.array(A.alpha), ctx.array(A.beta),
                                         ctx.scalar(A.beta_last)))
    if isinstance(A, SpdMatrix):
        if A.is_diagonal:
            return DiagonalOp(ctx.array(np.diag(A.entries)))
        return DenseOp(ctx.array(A.entries))
    M = np.asarray(A)
    if M.ndim == 1:
        return DiagonalOp(ctx.array(M))
    return DenseOp(ctx.array(M))


def cholesky(M):
    n = M.shape[0]
    L = np.empty((n, n), dtype=object)
    L.fill(M[0, 0] * 0)
    for j in range(n):
        s = M[j, j] - np.dot(L[j, :j], L[j, :j]) if j else M[j, j]
        if not s > 0:
            raise NotPositiveDefinite(f"matrix not positive definite at column {j}")
        L[j, j] = _arith.sqrt(s)
        if j + 1 < n:
            col = M[j + 1:, j]
            if j:
                col = col - L[j + 1:, :j].dot(L[j, :j])
            L[j + 1:, j] = col / L[j, j]
    return L


def cholesky_solve(L, b):
    n = L.shape[0]
    y = np.empty(n, dtype=object)
    for i in range(n):
        s = b[i] - np.dot(L[i, :i], y[:i]) if i else b[i]
        y[i] = s / L[i, i]
    x = np.empty(n, dtype=object)
    for i in range(n - 1, -1, -1):
        s = y[i] - np.dot(L[i + 1:, i], x[i + 1:]) if i < n - 1 else y[i]
        x[i] = s / L[i, i]
    return x


def mgs(v, basis, passes=2):
    """Remove from ``v`` its components along the orthonormal vectors in ``basis`` (modified Gram-Schmidt)."""
    for _ in range(passes):
        for q in basis:
            v = v - np.dot(q, v) * q
    return v


def orthonormalize(columns, drop_tol):
    """Orthonormal basis (list of vectors) for the span of ``columns``.

    Two-pass MGS; a column whose remaining norm falls below ``drop_tol`` times
    its original norm is treated as dependent and dropped.
    """
    basis = []
    for c in columns:
        nrm0 = _arith.norm(c)
        if nrm0 == 0:
            continue
        v = mgs(c, basis)
        nrm = _arith.norm(v)
        if nrm <= drop_tol * nrm0:
            continue
        basis.append(v / nrm)
    return basis
