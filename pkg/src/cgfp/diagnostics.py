"""From a CG trace to the Lanczos picture.

Builds the tridiagonal T_J from the CG coefficients, measures how closely the
recorded vectors satisfy the perturbed Lanczos relation, and summarizes where
the Ritz values of T_J sit relative to the spectrum of A.  Residual-type
measurements are made in doubled precision from the stored vectors.
"""

from dataclasses import dataclass, field, asdict
import contextlib
import csv
import json
import math

import gmpy2
import numpy as np

from . import _arith
from .errors import (BinsOverlap, DimensionMismatch, MissingVectors, VariantMismatch,
                     ZeroCoefficient)
from .cg import AUX_VECTORS, Variant
from .tridiagonal import Tridiagonal, bisect_eigenvalues, leading_solves

UNIT_ROUNDOFF = np.finfo(float).eps / 2
BISECT_FACTOR = 1e3


def _doubled():
    from .hiprec.context import doubled

    return doubled()


def tridiagonal_from_coefficients(a, b, rnorm):
    """Lanczos tridiagonal from CG coefficients.

    ``a`` holds a_0..a_{J-1}, ``b`` holds b_1..b_{J-1} (extra entries are
    ignored) and ``rnorm`` holds ||r_0||..||r_J||.
    """
    J = len(a)
    if J < 1:
        raise ZeroCoefficient("need at least one completed iteration")
    if len(b) < J - 1 or len(rnorm) < J + 1:
        raise DimensionMismatch(f"J={J} needs {J - 1} b's and {J + 1} residual norms")
    for k in range(J):
        if a[k] == 0:
            raise ZeroCoefficient(f"a_{k} is zero")
    for k in range(J + 1):
        if rnorm[k] == 0:
            raise ZeroCoefficient(f"||r_{k}|| is zero")
    hp = _arith.is_hp(a[0])
    with (gmpy2.context(precision=a[0].precision) if hp else contextlib.nullcontext()):
        alpha = [1 / a[0]]
        for j in range(1, J):
            alpha.append(1 / a[j] + b[j - 1] / a[j - 1])
        beta = [rnorm[j] / (a[j - 1] * rnorm[j - 1]) for j in range(1, J + 1)]
    dtype = object if hp else float
    return Tridiagonal(np.array(alpha, dtype=dtype), np.array(beta[:-1], dtype=dtype), beta[-1])


def build_tridiagonal(trace, J=None):
    """T_J from a trace (J defaults to the number of completed iterations)."""
    J = trace.K if J is None else J
    if J < 1 or J > trace.K:
        raise ZeroCoefficient(f"J={J} outside the completed range 1..{trace.K}")
    return tridiagonal_from_coefficients(trace.coeff_a[:J], trace.coeff_b[:J], trace.rnorm[:J + 1])


@dataclass
class LanczosDiagnostics:
    f_norms: np.ndarray
    eps1: float
    eps2: float
    eps3: float
    qnorm_range: tuple

    def to_dict(self):
        d = asdict(self)
        d["f_norms"] = [float(v) for v in self.f_norms]
        d["qnorm_range"] = [float(v) for v in self.qnorm_range]
        return d


def _lanczos_columns(A, trace, T, ctx):
    """Promoted operator, Q (n x (J+1) object array) and T entries in ``ctx``."""
    from .hiprec.linalg import as_operator

    J = T.J
    if not trace.has_vectors:
        raise MissingVectors("trace was recorded without vectors")
    if trace.updated_residuals.shape[1] != A.n:
        raise DimensionMismatch(f"vectors have length {trace.updated_residuals.shape[1]}, A is {A.n}")
    if len(trace.updated_residuals) < J + 1:
        raise DimensionMismatch(f"T has J={J} but the trace holds {len(trace.updated_residuals)} residuals")
    op = as_operator(A, ctx)
    R = ctx.array(trace.updated_residuals[:J + 1])
    rn = ctx.array(trace.rnorm[:J + 1])
    Q = np.empty((A.n, J + 1), dtype=object)
    for k in range(J + 1):
        Q[:, k] = R[k] / rn[k] if k % 2 == 0 else -R[k] / rn[k]
    alpha = ctx.array(T.alpha)
    beta = np.concatenate([ctx.array(T.beta), [ctx.scalar(T.beta_last)]])
    return op, Q, alpha, beta, rn


def lanczos_residual(A, trace, T, ctx=None, b=None):
    """Column-wise residual of the perturbed Lanczos relation and the eps1/eps2/eps3 measures.

    ``b`` is only used to normalize eps3; by default it is recovered as
    ``r_0 + A x_0``.
    """
    ctx = ctx or _doubled()
    J = T.J
    anorm = A.norm2
    with ctx.local():
        op, Q, alpha, beta, rn = _lanczos_columns(A, trace, T, ctx)
        f_norms = []
        eps2 = 0
        for k in range(J):
            f = op.matvec(Q[:, k]) - beta[k] * Q[:, k + 1] - alpha[k] * Q[:, k]
            if k:
                f = f - beta[k - 1] * Q[:, k - 1]
            f_norms.append(_arith.norm(f) / anorm)
            eps2 = max(eps2, abs(beta[k] * np.dot(Q[:, k + 1], Q[:, k])) / anorm)
        qn = [_arith.norm(Q[:, k]) for k in range(J + 1)]

        # eps3: distance of the iterates from the Galerkin solutions built on Q_k
        X = ctx.array(trace.iterates[:J + 1])
        x0 = ctx.array(trace.x0 if trace.x0 is not None else trace.iterates[0])
        if b is None:
            b = np.asarray(_arith.to_float(trace.updated_residuals[0])) + A.entries @ _arith.to_float(trace.x0)
        xnorm = float(np.linalg.norm(A.solve(np.asarray(b, dtype=float))))
        eps3 = 0
        for k, y in enumerate(leading_solves(Tridiagonal(alpha, beta[:-1], beta[-1]), rn[0]), start=1):
            g = Q[:, :k].dot(np.array(y, dtype=object))
            eps3 = max(eps3, _arith.norm(X[k] - x0 - g) / xnorm)
    f_norms = np.array([float(v) for v in f_norms])
    return LanczosDiagnostics(f_norms, float(np.max(f_norms)), float(eps2), float(eps3),
                              (float(min(qn)), float(max(qn))))


def relation_residual_fro(A, trace, T, ctx=None):
    """Matrix-level ``||A Q_J - Q_J T_J - beta_J q_{J+1} xi_J^T||_F / ||A||``."""
    ctx = ctx or _doubled()
    J = T.J
    with ctx.local():
        op, Q, alpha, beta, _ = _lanczos_columns(A, trace, T, ctx)
        QJ = Q[:, :J]
        if hasattr(op, "M"):
            AQ = op.M.dot(QJ)
        else:
            AQ = np.column_stack([op.matvec(QJ[:, k]) for k in range(J)])
        Th = Tridiagonal(alpha, beta[:-1], beta[-1]).to_dense()
        F = AQ - QJ.dot(Th)
        F[:, J - 1] = F[:, J - 1] - beta[-1] * Q[:, J]
        total = np.sum(F * F)
        return float(_arith.sqrt(total)) / A.norm2


def auxiliary_deviation(A, trace, ctx=None):
    """Relative gaps between the recursively updated auxiliary vectors and their definitions.

    Returns a dict with keys ``s`` (||s_k - A p_k|| / (||A|| ||p_k||)), ``w``
    (against A r_k) and ``u`` (against A s_k); keys that do not apply to the
    variant hold empty arrays.
    """
    from .hiprec.linalg import as_operator

    ctx = ctx or _doubled()
    out = {"s": np.array([]), "w": np.array([]), "u": np.array([])}
    if trace.variant is Variant.HSCG:
        return out
    needed = AUX_VECTORS[trace.variant]
    if not trace.has_vectors or any(k not in trace.aux for k in needed):
        raise VariantMismatch(f"{trace.variant.value} trace lacks auxiliary vectors {needed}")
    anorm = A.norm2
    pairs = [("s", "p")]
    if trace.variant is Variant.GVCG:
        pairs += [("w", "r"), ("u", "s")]
    vecs = dict(trace.aux)
    vecs["r"] = trace.updated_residuals
    with ctx.local():
        op = as_operator(A, ctx)
        for name, base in pairs:
            steps = min(len(vecs[name]), len(vecs[base]))
            dev = []
            for k in range(steps):
                v = ctx.array(vecs[base][k])
                d = ctx.array(vecs[name][k]) - op.matvec(v)
                denom = anorm * _arith.norm(v)
                dev.append(float(_arith.norm(d) / denom) if denom else 0.0)
            out[name] = np.array(dev)
    return out


@dataclass
class HistogramReport:
    """Ritz values binned against the spectrum.

    Bins are numbered 1..2n+1: bin 2j covers ``[lambda_j - w, lambda_j + w]``,
    odd bins hold whatever falls between (or outside) those windows.
    ``counts[i]`` is the count of bin i+1.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    half_width: float
    offenders: list = field(default_factory=list)

    def rows(self):
        return [(i + 1, int(c)) for i, c in enumerate(self.counts)]

    def to_dict(self):
        return {"half_width": self.half_width,
                "bin_edges": [float(e) for e in self.bin_edges],
                "counts": [int(c) for c in self.counts],
                "offenders": [[float(t), float(d)] for t, d in self.offenders]}


def _ritz_values(T, ctx=None):
    Tf = T.to_float() if T.is_hp else T
    tol = BISECT_FACTOR * UNIT_ROUNDOFF * Tf.norm_bound() if ctx is None else None
    theta = bisect_eigenvalues(T, ctx=ctx, tol=tol)
    return np.array(_arith.to_float(theta), dtype=float)


def ritz_histogram(T, spectrum, half_width, theta=None):
    lam = np.asarray(spectrum, dtype=float)
    if np.any(np.diff(lam) < 0):
        raise ValueError("spectrum must be ascending")
    if half_width < 0:
        raise ValueError("half_width must be >= 0")
    if len(lam) > 1 and 2 * half_width >= np.min(np.diff(lam)):
        raise BinsOverlap(f"half width {half_width} is not below half the minimum gap")
    theta = _ritz_values(T) if theta is None else np.asarray(theta, dtype=float)
    n = len(lam)
    edges = np.column_stack([lam - half_width, lam + half_width]).ravel()
    counts = np.zeros(2 * n + 1, dtype=int)
    offenders = []
    for t in theta:
        j = int(np.searchsorted(lam, t))
        near = [i for i in (j - 1, j) if 0 <= i < n]
        i = min(near, key=lambda i: abs(t - lam[i]))
        dist = abs(t - lam[i])
        if dist <= half_width:
            counts[2 * i + 1] += 1
        else:
            below = int(np.searchsorted(lam, t, side="left"))
            counts[2 * below] += 1
            offenders.append((float(t), float(dist)))
    return HistogramReport(edges, counts, float(half_width), offenders)


def _bracket_distance(lo, hi, lam):
    j = int(np.searchsorted(lam, lo, side="left"))
    if j < len(lam) and lam[j] <= hi:
        return 0.0
    d = math.inf
    if j < len(lam):
        d = min(d, lam[j] - hi)
    if j > 0:
        d = min(d, lo - lam[j - 1])
    return float(d)


def extension_floor(T, spectrum, ctx=None, theta=None):
    """Lower bound on the worst eigenvalue-to-spectrum distance of any extension of ``T``.

    By interlacing every symmetric extension has an eigenvalue in each bracket
    ``[theta_i, theta_{i+1}]`` of consecutive Ritz values; the bound is the
    largest closed-interval distance from such a bracket to the spectrum.
    """
    theta = _ritz_values(T, ctx) if theta is None else np.asarray(theta, dtype=float)
    if len(theta) < 2:
        raise ValueError("need at least two Ritz values")
    lam = np.sort(np.asarray(spectrum, dtype=float))
    return max(_bracket_distance(theta[i], theta[i + 1], lam) for i in range(len(theta) - 1))


def definiteness(T):
    """(smallest eigenvalue, positive-definite flag) by Sturm bisection."""
    Tf = T.to_float() if T.is_hp else T
    tol = BISECT_FACTOR * UNIT_ROUNDOFF * max(Tf.norm_bound(), np.finfo(float).tiny)
    lmin = float(bisect_eigenvalues(Tf, tol=tol, indices=[0])[0])
    return lmin, lmin > 0


# -- serialization -----------------------------------------------------------

def write_histogram_csv(report, stream, comment=None):
    if comment:
        stream.write(f"# {comment}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["bin", "count"])
    w.writerows(report.rows())


def write_diagnostics_json(diag, stream, extra=None):
    d = diag.to_dict()
    if extra:
        d.update(extra)
    json.dump(d, stream, indent=2)
