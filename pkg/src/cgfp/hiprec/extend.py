"""Extension of a finite-precision T_J to a larger tridiagonal T.

Exact CG applied to T (with right-hand side ||r_0|| e_1) should reproduce the
error curve of the finite-precision run, while every eigenvalue of T lies
close to an eigenvalue of A.  The extension orthogonalizes a continued Lanczos
recurrence against the unconverged Ritz vectors of T_J and against itself,
all in context precision.
"""

from dataclasses import dataclass, field
import csv
import math
import warnings

import numpy as np

from .. import _arith
from ..cg import UNIT_ROUNDOFF
from ..diagnostics import definiteness, extension_floor
from ..errors import DimensionMismatch, IndefiniteTridiagonal, IntervalAssignmentAmbiguous
from ..tridiagonal import Tridiagonal, bisect_eigenvalues, eigh
from .context import PrecisionContext
from .exact import exact_cg
from .linalg import as_operator, mgs, orthonormalize

DEFAULT_TOL = math.sqrt(2 * UNIT_ROUNDOFF)


@dataclass
class RitzClassification:
    """Ritz values of T_J grouped into well-separated values and clusters.

    ``clusters`` holds index lists into ``ritz_values`` (ascending); a
    singleton list is a well-separated value.  ``cluster_values`` and
    ``cluster_weights`` are theta_C and beta_J * w_C per group (for a
    singleton, theta_i and beta_J |S_{J,i}|).  ``unconverged_basis`` is the
    (n, m) object array of unit columns.
    """

    ritz_values: np.ndarray
    weights: np.ndarray
    clusters: list
    cluster_values: np.ndarray
    cluster_weights: np.ndarray
    converged: np.ndarray
    unconverged_basis: np.ndarray
    cluster_width: float
    conv_tol: float
    basis_defect: float = 0.0
    next_overlap: float = 0.0
    last_residual: float = 0.0

    @property
    def m(self):
        return self.unconverged_basis.shape[1]

    def health(self):
        return {"basis_defect": self.basis_defect, "next_overlap": self.next_overlap,
                "last_residual": self.last_residual, "m": self.m}


def _promote_basis(Q, ctx, J):
    Q = np.asarray(Q)
    if Q.shape[1] < J + 1:
        raise DimensionMismatch(f"basis has {Q.shape[1]} columns, need J+1 = {J + 1}")
    return ctx.array(Q[:, :J + 1])


def classify_ritz(A, T, Q, cluster_width=DEFAULT_TOL, conv_tol=DEFAULT_TOL, ctx=None):
    """Eigendecompose T_J and collect the unconverged Ritz and cluster vectors.

    ``Q`` is the (n, J+1) matrix of Lanczos vectors q_1..q_{J+1} of the run.
    """
    ctx = ctx or PrecisionContext()
    J = T.J
    anorm = A.norm2
    theta, S = eigh(T, ctx)
    with ctx.local():
        Qh = _promote_basis(Q, ctx, J)
        beta_J = abs(ctx.scalar(T.beta_last))
        last = S[J - 1, :]
        weights = np.array([beta_J * abs(v) for v in last], dtype=object)
        tf = _arith.to_float(theta)

        groups, cur = [], [0]
        for i in range(1, J):
            if theta[i] - theta[i - 1] > cluster_width * anorm:
                groups.append(cur)
                cur = [i]
            else:
                cur.append(i)
        groups.append(cur)

        QJ = Qh[:, :J]
        columns, values, gweights, conv = [], [], [], []
        for g in groups:
            if len(g) == 1:
                i = g[0]
                w = abs(last[i])
                coeff = S[:, i]
                values.append(theta[i])
            else:
                w = _arith.sqrt(sum(last[i] * last[i] for i in g))
                coeff = sum(S[:, i] * (last[i] / w) for i in g) if w > 0 else S[:, g[0]]
                values.append((theta[g[0]] + theta[g[-1]]) / 2)
            gweights.append(beta_J * w)
            c = beta_J * w <= conv_tol * anorm
            conv.append(c)
            if not c:
                y = QJ.dot(coeff)
                columns.append(y / _arith.norm(y))

        n = Qh.shape[0]
        Y = np.column_stack(columns) if columns else np.empty((n, 0), dtype=object)
        m = Y.shape[1]
        if m:
            G = Y.T.dot(Y)
            defect = max(abs(G[i, j] - (1 if i == j else 0)) for i in range(m) for j in range(m))
            next_overlap = max(abs(np.dot(Qh[:, J], Y[:, i])) for i in range(m))
            Z = orthonormalize(columns, ctx.scalar(10) ** (-(ctx.digits // 2)))
            qJ = Qh[:, J - 1]
            last_res = _arith.norm(mgs(qJ, Z)) / _arith.norm(qJ)
        else:
            defect, next_overlap, last_res = 0, 0, 1
    return RitzClassification(
        ritz_values=tf,
        weights=_arith.to_float(weights),
        clusters=groups,
        cluster_values=np.array([float(v) for v in values]),
        cluster_weights=np.array([float(v) for v in gweights]),
        converged=np.array(conv, dtype=bool),
        unconverged_basis=Y,
        cluster_width=cluster_width,
        conv_tol=conv_tol,
        basis_defect=float(defect),
        next_overlap=float(next_overlap),
        last_residual=float(last_res),
    )


@dataclass
class ExtendResult:
    T_ext: Tridiagonal
    Q_ext: np.ndarray
    J: int
    m: int
    eigenvalues: np.ndarray
    max_eig_distance: float
    kappa_T: float
    relation_residual: float
    orthogonality_defect: float
    floor: float
    interlaces: bool
    early_stop: int = None
    ctx: PrecisionContext = field(default=None, repr=False)

    @property
    def size(self):
        return self.T_ext.J

    def distance_rows(self, spectrum):
        lam = np.asarray(spectrum, dtype=float)
        for mu in self.eigenvalues:
            i = int(np.argmin(np.abs(lam - mu)))
            yield float(mu), float(lam[i]), float(abs(mu - lam[i]))


def _interlaces(theta, mu):
    """Every closed bracket [theta_i, theta_{i+1}] holds an eigenvalue of the extension."""
    for i in range(len(theta) - 1):
        j = np.searchsorted(mu, theta[i], side="left")
        if j >= len(mu) or mu[j] > theta[i + 1]:
            return False
    return True


def extend_T(A, T, Q, classification, ctx=None):
    """Extend T_J by a Lanczos recurrence kept orthogonal to the unconverged Ritz vectors.

    ``Q`` is the (n, J+1) matrix of Lanczos vectors of the run.  The result
    has J + n - m' rows, where m' is the rank of the unconverged basis, unless
    a new coupling coefficient drops below ``10^-(digits-10) ||A||`` first
    (recorded in ``early_stop``).
    """
    ctx = ctx or PrecisionContext()
    J = T.J
    n = A.n
    lmin, pd = definiteness(T)
    if not pd:
        raise IndefiniteTridiagonal(f"T_J has eigenvalue {lmin:.3e}; the extension is undefined")
    anorm = A.norm2
    with ctx.local():
        op = as_operator(A, ctx)
        Qh = _promote_basis(Q, ctx, J)
        Y = classification.unconverged_basis
        Z = orthonormalize([Y[:, i] for i in range(Y.shape[1])],
                           ctx.scalar(10) ** (-(ctx.digits // 2)))
        m = len(Z)
        thresh = ctx.scalar(10) ** (-(ctx.digits - 10)) * anorm

        q = mgs(Qh[:, J], Z)
        q = q / _arith.norm(q)
        ext = [q]
        alphas, betas = [], []
        prev, beta_prev = Qh[:, J - 1], ctx.scalar(T.beta_last)
        early = None
        count = n - m
        while True:
            cur = ext[-1]
            v = op.matvec(cur) - beta_prev * prev
            a = np.dot(cur, v)
            v = v - a * cur
            alphas.append(a)
            if len(ext) == count:
                break
            v = mgs(v, Z + ext)
            b = _arith.norm(v)
            if b <= thresh:
                early = J + len(ext)
                break
            betas.append(b)
            prev, beta_prev = cur, b
            ext.append(v / b)

        alpha = np.concatenate([ctx.array(T.alpha), np.array(alphas, dtype=object)])
        beta = np.concatenate([ctx.array(T.beta), [ctx.scalar(T.beta_last)],
                               np.array(betas, dtype=object)])
        T_ext = Tridiagonal(alpha, beta, ctx.scalar(0))
        E = np.column_stack(ext)
        Q_ext = np.column_stack([Qh[:, :J], E])

        # relation residual, column by column
        K = T_ext.J
        worst = 0
        for k in range(K):
            f = op.matvec(Q_ext[:, k]) - alpha[k] * Q_ext[:, k]
            if k:
                f = f - beta[k - 1] * Q_ext[:, k - 1]
            if k + 1 < K:
                f = f - beta[k] * Q_ext[:, k + 1]
            worst = max(worst, _arith.norm(f))
        relation = float(worst) / anorm

        G = E.T.dot(E)
        defect = max((abs(G[i, j]) for i in range(len(ext)) for j in range(len(ext)) if i != j),
                     default=0)
        if Z:
            defect = max(defect, max(abs(np.dot(z, e)) for z in Z for e in ext))
        mu = bisect_eigenvalues(T_ext, ctx)
        theta = bisect_eigenvalues(T, ctx)
        # distances in context precision (exact spectrum for diagonal A)
        lam_h = ctx.array(A.eigenvalues)
        dist = np.array([float(min(abs(lam_h - x))) for x in mu])
    mu_f = _arith.to_float(mu)
    theta_f = _arith.to_float(theta)
    lam = A.eigenvalues
    return ExtendResult(
        T_ext=T_ext,
        Q_ext=Q_ext,
        J=J,
        m=m,
        eigenvalues=mu_f,
        max_eig_distance=float(np.max(dist)),
        kappa_T=float(mu_f[-1] / mu_f[0]) if mu_f[0] > 0 else math.inf,
        relation_residual=relation,
        orthogonality_defect=float(defect),
        floor=extension_floor(T, lam, theta=theta_f) if J > 1 else 0.0,
        interlaces=_interlaces(theta_f, mu_f),
        early_stop=early,
        ctx=ctx,
    )


@dataclass
class MatchReport:
    """Per-step comparison of a finite-precision run with exact CG on T_ext.

    ``finite`` and ``exact`` are the relative errors (each divided by its
    step-0 value) for steps 1..K, ``ratio`` = exact / finite.  ``r0hat_rel``
    holds, per spectrum point with non-negligible weight, the relative gap
    between the summed weights of the assigned T_ext eigenvectors and the
    weight of r_0 on the eigenvector of A.
    """

    steps: np.ndarray
    finite: np.ndarray
    exact: np.ndarray
    ratio: np.ndarray
    r0hat_index: np.ndarray
    r0hat_rel: np.ndarray
    ambiguous: list = field(default_factory=list)

    @property
    def ratio_range(self):
        return float(np.min(self.ratio)), float(np.max(self.ratio))

    @property
    def r0hat_max(self):
        return float(np.max(self.r0hat_rel)) if len(self.r0hat_rel) else 0.0


def assign_to_spectrum(mu, lam):
    """Index of the nearest spectrum point for each value; ties go to the lower point.

    Returns (indices, list of tied positions).
    """
    lam = np.asarray(lam, dtype=float)
    idx, ties = [], []
    for pos, x in enumerate(mu):
        j = int(np.searchsorted(lam, x))
        if j == 0:
            idx.append(0)
            continue
        if j == len(lam):
            idx.append(len(lam) - 1)
            continue
        dl, du = x - lam[j - 1], lam[j] - x
        if dl == du:
            ties.append(pos)
        idx.append(j - 1 if dl <= du else j)
    return np.array(idx, dtype=int), ties


def verify_extension(A, result, trace, ctx=None, steps=None):
    """Run exact CG on (T_ext, ||r_0|| e_1) and compare it with the finite-precision run."""
    ctx = ctx or result.ctx or PrecisionContext()
    K = min(result.J, trace.K) if steps is None else steps
    T = result.T_ext
    with ctx.local():
        beta0 = ctx.scalar(trace.rnorm[0])
        rhs = ctx.zeros(T.J)
        rhs[0] = beta0
    run = exact_cg(T, rhs, max_iter=K, ctx=ctx, record_vectors=False)
    exact = run.relative[1:K + 1]
    fp = _arith.to_float(trace.updated_anorm_err)
    finite = (fp / fp[0])[1:len(exact) + 1]
    exact = exact[:len(finite)]
    ratio = exact / finite

    # weights of the initial residual on eigenvectors of T_ext versus those of A
    mu, V = eigh(T, ctx)
    mu_f = _arith.to_float(mu)
    lam = A.eigenvalues
    idx, ties = assign_to_spectrum(mu_f, lam)
    if ties:
        warnings.warn(IntervalAssignmentAmbiguous(f"{len(ties)} eigenvalue(s) equidistant from two spectrum points"))
    r0 = _arith.to_float(trace.updated_residuals[0]) if trace.has_vectors else None
    with ctx.local():
        w_hat = [beta0 * beta0 * V[0, j] * V[0, j] for j in range(T.J)]
    w_hat = np.array([float(v) for v in w_hat])
    sums = np.bincount(idx, weights=w_hat, minlength=len(lam))
    keep, rel = [], []
    if r0 is not None:
        c = (A.eigenvectors.T @ r0) ** 2
        floor = UNIT_ROUNDOFF * float(r0 @ r0)
        for i in range(len(lam)):
            if c[i] > floor:
                keep.append(i)
                rel.append(abs(sums[i] - c[i]) / c[i])
    return MatchReport(np.arange(1, len(ratio) + 1), finite, exact, ratio,
                       np.array(keep, dtype=int), np.array(rel), ties)


# -- serialization -----------------------------------------------------------

def _digits_text(v, digits):
    if _arith.is_hp(v):
        return format(v, f".{digits}g")
    return repr(float(v))


def _comment(stream, comment):
    if comment:
        stream.write(f"# {comment}\n")


def write_tridiagonal_text(T, stream, digits=64, comment=None):
    """``alpha`` / ``beta`` entries as decimal text at full precision, one per line."""
    _comment(stream, comment)
    stream.write(f"# J={T.J}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["j", "alpha", "beta"])
    for j in range(T.J):
        b = T.beta[j] if j < T.J - 1 else T.beta_last
        w.writerow([j + 1, _digits_text(T.alpha[j], digits), _digits_text(b, digits)])


def write_distance_csv(result, spectrum, stream, comment=None):
    _comment(stream, comment)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["eig", "nearest_lambda", "distance"])
    for row in result.distance_rows(spectrum):
        w.writerow([repr(v) for v in row])


def write_match_csv(report, stream, comment=None):
    _comment(stream, comment)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["k", "finite_precision_error", "exact_on_T_error", "ratio"])
    for k, f, e, r in zip(report.steps, report.finite, report.exact, report.ratio):
        w.writerow([int(k), repr(float(f)), repr(float(e)), repr(float(r))])
