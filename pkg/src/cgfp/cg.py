"""Instrumented Hestenes-Stiefel, Chronopoulos-Gear and pipelined (Ghysels-Vanroose) CG.

Each variant executes its recurrences in exactly the order of its algorithm
box.  In working precision the vectors are float64; passing a
:class:`~cgfp.hiprec.context.PrecisionContext` runs the very same recurrences
on mpfr object arrays instead.
"""

from dataclasses import dataclass, field
from enum import Enum
import csv
import json
import math

import numpy as np

from . import _arith
from .errors import Breakdown, MissingVectors, NotPositiveDefinite

UNIT_ROUNDOFF = np.finfo(float).eps / 2


class Variant(str, Enum):
    HSCG = "hscg"
    CGCG = "cgcg"
    GVCG = "gvcg"

    @classmethod
    def parse(cls, name):
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown variant {name!r}; expected one of hscg, cgcg, gvcg") from None


AUX_VECTORS = {
    Variant.HSCG: ("p",),
    Variant.CGCG: ("p", "s"),
    Variant.GVCG: ("p", "s", "w", "u", "t"),
}


@dataclass
class SolveOptions:
    max_iter: int = 200
    residual_replacement: bool = False
    replacement_threshold: float = math.sqrt(UNIT_ROUNDOFF)
    record_vectors: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.replacement_threshold > 0:
            raise ValueError("replacement_threshold must be > 0")


@dataclass
class CGTrace:
    """Per-iteration record of one solve.

    Index conventions: ``coeff_a[k]`` is a_k (k = 0..K-1), ``coeff_b[k-1]`` is
    b_k (k = 1..K); ``nu``, ``rnorm``, ``true_rnorm``, ``anorm_err`` and
    ``updated_anorm_err`` have K+1 entries (steps 0..K).  ``aux`` maps vector
    names to arrays of per-step snapshots.
    """

    variant: Variant
    coeff_a: np.ndarray
    coeff_b: np.ndarray
    nu: np.ndarray
    rnorm: np.ndarray
    true_rnorm: np.ndarray
    anorm_err: np.ndarray
    updated_anorm_err: np.ndarray
    iterates: np.ndarray = None
    updated_residuals: np.ndarray = None
    aux: dict = field(default_factory=dict)
    replacement_steps: list = field(default_factory=list)
    breakdown: Breakdown = None
    x0: np.ndarray = None

    @property
    def K(self):
        return len(self.rnorm) - 1

    @property
    def has_vectors(self):
        return self.updated_residuals is not None

    @property
    def is_hp(self):
        return _arith.is_hp(self.coeff_a)

    def lanczos_vectors(self, count=None):
        """Columns q_{k+1} = (-1)^k r_k / ||r_k|| for k = 0..count-1, as an (n, count) array."""
        if not self.has_vectors:
            raise MissingVectors("trace was recorded without vectors")
        count = self.K + 1 if count is None else count
        R = self.updated_residuals[:count]
        signs = np.array([(-1) ** k for k in range(count)])
        if not self.is_hp:
            return (R / self.rnorm[:count, None] * signs[:, None]).T
        import gmpy2

        with gmpy2.context(precision=self.rnorm[0].precision):
            return (R / self.rnorm[:count, None] * signs[:, None]).T


@dataclass
class ErrorHistory:
    anorm_err_rel: np.ndarray
    true_rnorm_rel: np.ndarray
    updated_anorm_err_rel: np.ndarray
    plateau_index: int = None

    def iterations_to(self, level, series="anorm_err_rel"):
        """First step at which the chosen series drops to ``level`` or below (None if never)."""
        s = getattr(self, series)
        hits = np.nonzero(s <= level)[0]
        return int(hits[0]) if len(hits) else None


class _Recorder:
    def __init__(self, names, keep):
        self.keep = keep
        self.x, self.r = [], []
        self.aux = {k: [] for k in names}

    def vectors(self, x=None, r=None, **aux):
        if not self.keep:
            return
        if x is not None:
            self.x.append(x.copy())
        if r is not None:
            self.r.append(r.copy())
        for k, v in aux.items():
            self.aux[k].append(v.copy())


class _Measures:
    """Error norms per step: float64 via eigendecomposition, or in context precision."""

    def __init__(self, problem, op, ctx):
        self.problem = problem
        self.op = op
        self.ctx = ctx
        if ctx is None:
            self.b = problem.b
            self.x_ref = problem.x_true
        else:
            self.b = ctx.array(problem.b)
            self.x_ref = op.solve(self.b)
        self.true_rnorm, self.anorm_err, self.updated = [], [], []

    def record(self, x, r):
        A = self.problem.A
        if self.ctx is None:
            self.true_rnorm.append(float(np.linalg.norm(self.b - A.entries @ x)))
            e = self.x_ref - x
            self.anorm_err.append(math.sqrt(max(float(e @ (A.entries @ e)), 0.0)))
            self.updated.append(math.sqrt(max(A.inverse_quadratic(r), 0.0)))
        else:
            self.true_rnorm.append(_arith.norm(self.b - self.op.matvec(x)))
            e = self.x_ref - x
            self.anorm_err.append(_arith.sqrt(abs(np.dot(e, self.op.matvec(e)))))
            self.updated.append(_arith.sqrt(abs(np.dot(r, self.op.solve(r)))))


def _check(value, k, what):
    if value == 0 or not _arith.isfinite(value):
        raise Breakdown(k, f"{what} is {value}")
    return value


def run_cg(problem, variant, opts=None, ctx=None):
    """Run one CG variant on ``problem`` and return its :class:`CGTrace`.

    A breakdown (vanishing or non-finite denominator) terminates the run; the
    trace up to that point is returned with ``trace.breakdown`` set.
    """
    variant = Variant.parse(variant) if not isinstance(variant, Variant) else variant
    opts = opts or SolveOptions()
    if not problem.A.positive_definite:
        raise NotPositiveDefinite(f"smallest eigenvalue {problem.A.eigenvalues[0]:.3e} <= 0")
    if ctx is None:
        return _run(problem, variant, opts, None, None)
    from .hiprec.linalg import as_operator

    with ctx.local():
        return _run(problem, variant, opts, ctx, as_operator(problem.A, ctx))


def _run(problem, variant, opts, ctx, op):
    if ctx is None:
        Amv = problem.A.entries.dot
        b, x = problem.b.astype(float), problem.x0.astype(float).copy()
    else:
        Amv = op.matvec
        b, x = ctx.array(problem.b), ctx.array(problem.x0)
    meas = _Measures(problem, op, ctx)
    rec = _Recorder(AUX_VECTORS[variant], opts.record_vectors)
    bnorm = _arith.norm(b)

    a_list, b_list, nu_list, rn_list = [], [], [], []
    replaced = []
    breakdown = None

    r = b - Amv(x)
    nu = np.dot(r, r)
    if nu == 0:
        raise Breakdown(0, "initial residual is zero")
    p = r.copy()
    s = Amv(p)
    w = u = t = None
    if variant is Variant.GVCG:
        w = s.copy()
        u = Amv(w)
    ps = np.dot(p, s)
    if not ps > 0:
        raise NotPositiveDefinite(f"<p_0, A p_0> = {ps} <= 0")
    a = nu / ps

    nu_list.append(nu)
    rn_list.append(_arith.sqrt(nu))
    meas.record(x, r)
    rec.vectors(x=x, r=r, **_aux(variant, p, s, w, u, None))

    try:
        for k in range(1, opts.max_iter + 1):
            a_list.append(a)
            a_prev, nu_prev = a, nu
            x = x + a_prev * p
            r = r - a_prev * s
            if variant is Variant.GVCG:
                w = w - a_prev * u
            swap = False
            if opts.residual_replacement:
                true_r = b - Amv(x)
                if _arith.norm(true_r - r) > opts.replacement_threshold * bnorm:
                    r = true_r
                    swap = True
                    replaced.append(k)

            if variant is Variant.HSCG:
                nu = np.dot(r, r)
                bk = nu / _check(nu_prev, k, "nu_{k-1}")
                nu_list.append(nu)
                b_list.append(bk)
                if nu == 0:
                    break
                p = r + bk * p
                s = Amv(p)
                mu = np.dot(p, s)
                if mu < 0:
                    raise NotPositiveDefinite(f"<p_k, A p_k> = {float(mu):.3e} < 0 at step {k}")
                a = nu / _check(mu, k, "mu_k")
            elif variant is Variant.CGCG:
                w = Amv(r)
                nu = np.dot(r, r)
                bk = nu / _check(nu_prev, k, "nu_{k-1}")
                nu_list.append(nu)
                b_list.append(bk)
                if nu == 0:
                    break
                eta = np.dot(r, w)
                if not swap:
                    a = nu / _check(eta - (bk / a_prev) * nu, k, "eta_k - (b_k/a_{k-1}) nu_k")
                p = r + bk * p
                if swap:
                    s = Amv(p)
                    a = nu / _check(np.dot(p, s), k, "<p_k, s_k>")
                else:
                    s = w + bk * s
            else:
                if swap:
                    w = Amv(r)
                nu = np.dot(r, r)
                bk = nu / _check(nu_prev, k, "nu_{k-1}")
                nu_list.append(nu)
                b_list.append(bk)
                if nu == 0:
                    break
                eta = np.dot(r, w)
                if not swap:
                    a = nu / _check(eta - (bk / a_prev) * nu, k, "eta_k - (b_k/a_{k-1}) nu_k")
                t = Amv(w)
                p = r + bk * p
                if swap:
                    s = Amv(p)
                    u = Amv(s)
                    a = nu / _check(np.dot(p, s), k, "<p_k, s_k>")
                else:
                    s = w + bk * s
                    u = t + bk * u
            rn_list.append(_arith.sqrt(nu))
            meas.record(x, r)
            rec.vectors(x=x, r=r, **_aux(variant, p, s, w, u, t))
    except Breakdown as exc:
        breakdown = exc
        # the step that broke down produced x_k, r_k before the failing division
        rn_list.append(_arith.sqrt(nu_list[-1]) if len(nu_list) > len(rn_list) else rn_list[-1])
        if len(rn_list) > len(meas.anorm_err):
            meas.record(x, r)
            rec.vectors(x=x, r=r)
    else:
        if len(nu_list) > len(rn_list):  # stopped on an exactly zero residual
            rn_list.append(_arith.sqrt(nu_list[-1]))
            meas.record(x, r)
            rec.vectors(x=x, r=r)

    K = len(rn_list) - 1
    dtype = object if ctx is not None else float
    arr = lambda v: np.array(v, dtype=dtype)
    return CGTrace(
        variant=variant,
        coeff_a=arr(a_list[:K]),
        coeff_b=arr(b_list[:K]),
        nu=arr(nu_list[:K + 1]),
        rnorm=arr(rn_list),
        true_rnorm=arr(meas.true_rnorm),
        anorm_err=arr(meas.anorm_err),
        updated_anorm_err=arr(meas.updated),
        iterates=np.array(rec.x, dtype=dtype) if opts.record_vectors else None,
        updated_residuals=np.array(rec.r, dtype=dtype) if opts.record_vectors else None,
        aux={k: np.array(v, dtype=dtype) for k, v in rec.aux.items()} if opts.record_vectors else {},
        replacement_steps=replaced,
        breakdown=breakdown,
        x0=np.array(problem.x0, dtype=float),
    )


def _aux(variant, p, s, w, u, t):
    out = {"p": p}
    if variant is not Variant.HSCG:
        out["s"] = s
    if variant is Variant.GVCG:
        out["w"] = w
        out["u"] = u
        if t is not None:
            out["t"] = t
    return out


def error_history(trace, problem=None, window=20, drop=0.01):
    """Normalize the recorded error series by their step-0 values and locate the plateau.

    The plateau index is the first k at which the relative true residual fails
    to decrease by at least ``drop`` (1%) over the following ``window`` steps.
    """
    if trace.anorm_err is None or len(trace.anorm_err) == 0:
        raise MissingVectors("trace carries no error series")
    an = _arith.to_float(trace.anorm_err) if trace.is_hp else trace.anorm_err
    tr = _arith.to_float(trace.true_rnorm) if trace.is_hp else trace.true_rnorm
    up = _arith.to_float(trace.updated_anorm_err) if trace.is_hp else trace.updated_anorm_err
    if an[0] <= 0:
        raise ValueError("initial A-norm error must be positive")
    an_rel, tr_rel, up_rel = an / an[0], tr / tr[0], up / up[0]
    plateau = None
    for k in range(len(tr_rel) - window):
        if np.min(tr_rel[k + 1:k + window + 1]) > (1 - drop) * tr_rel[k]:
            plateau = k
            break
    return ErrorHistory(an_rel, tr_rel, up_rel, plateau)


# -- serialization -----------------------------------------------------------

CSV_COLUMNS = ["k", "a", "b", "rnorm", "true_rnorm", "anorm_err_rel",
               "updated_anorm_err_rel", "replaced"]


def trace_rows(trace):
    hist = error_history(trace)
    f = _arith.to_float
    a = f(trace.coeff_a)
    bb = f(trace.coeff_b)
    rn = f(trace.rnorm)
    tr = f(trace.true_rnorm)
    for k in range(trace.K + 1):
        yield [k,
               a[k] if k < len(a) else "",
               bb[k - 1] if 1 <= k <= len(bb) else "",
               rn[k], tr[k], hist.anorm_err_rel[k], hist.updated_anorm_err_rel[k],
               int(k in trace.replacement_steps)]


def write_trace_csv(trace, stream, comment=None):
    if comment:
        stream.write(f"# {comment}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in trace_rows(trace):
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def trace_to_dict(trace, include_vectors=True):
    f = lambda v: _arith.to_float(v).tolist() if v is not None else None
    out = {
        "variant": trace.variant.value,
        "coeff_a": f(trace.coeff_a),
        "coeff_b": f(trace.coeff_b),
        "nu": f(trace.nu),
        "rnorm": f(trace.rnorm),
        "true_rnorm": f(trace.true_rnorm),
        "anorm_err": f(trace.anorm_err),
        "updated_anorm_err": f(trace.updated_anorm_err),
        "replacement_steps": list(trace.replacement_steps),
        "breakdown": None if trace.breakdown is None else
        {"k": trace.breakdown.k, "reason": trace.breakdown.reason},
        "x0": f(trace.x0),
    }
    if include_vectors and trace.has_vectors:
        out["iterates"] = f(trace.iterates)
        out["updated_residuals"] = f(trace.updated_residuals)
        out["aux"] = {k: f(v) for k, v in trace.aux.items()}
    return out


def trace_from_dict(d):
    arr = lambda v: None if v is None else np.array(v, dtype=float)
    bd = d.get("breakdown")
    return CGTrace(
        variant=Variant.parse(d["variant"]),
        coeff_a=arr(d["coeff_a"]),
        coeff_b=arr(d["coeff_b"]),
        nu=arr(d["nu"]),
        rnorm=arr(d["rnorm"]),
        true_rnorm=arr(d["true_rnorm"]),
        anorm_err=arr(d["anorm_err"]),
        updated_anorm_err=arr(d["updated_anorm_err"]),
        iterates=arr(d.get("iterates")),
        updated_residuals=arr(d.get("updated_residuals")),
        aux={k: arr(v) for k, v in d.get("aux", {}).items()},
        replacement_steps=list(d.get("replacement_steps", [])),
        breakdown=None if bd is None else Breakdown(bd["k"], bd["reason"]),
        x0=arr(d.get("x0")),
    )


def save_trace(trace, path, include_vectors=True):
    with open(path, "w") as fh:
        json.dump(trace_to_dict(trace, include_vectors), fh)


def load_trace(path):
    with open(path) as fh:
        return trace_from_dict(json.load(fh))
