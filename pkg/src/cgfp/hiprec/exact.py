"""Exact-arithmetic emulation of CG: high precision plus full reorthogonalization."""

from dataclasses import dataclass

import numpy as np

from .. import _arith
from ..cg import CGTrace, Variant
from ..errors import Breakdown, NotPositiveDefinite
from .context import PrecisionContext
from .linalg import as_operator, mgs


@dataclass
class ExactRun:
    """Result of :func:`exact_cg`.

    ``errors`` holds the absolute energy-norm errors (mpfr) of steps 0..K and
    ``relative`` the same divided by the step-0 value, as float64.
    ``stop_reason`` is one of ``"max_iter"``, ``"tol"`` or ``"residual"``.
    """

    errors: np.ndarray
    relative: np.ndarray
    trace: CGTrace
    ctx: PrecisionContext
    stop_reason: str = "max_iter"

    def iterations_to(self, level):
        hits = np.nonzero(self.relative <= level)[0]
        return int(hits[0]) if len(hits) else None


def exact_cg(A, b, x0=None, max_iter=None, ctx=None, tol=None, record_vectors=True):
    """HSCG in context precision, each new residual reorthogonalized against all previous ones.

    ``A`` may be an :class:`~cgfp.matio.SpdMatrix`, a dense array, a 1-d array
    of diagonal entries or a :class:`~cgfp.tridiagonal.Tridiagonal`.  The
    error is the energy norm of ``A^{-1} b - x_k`` with the solve done in the
    same precision.  The run stops after ``max_iter`` steps (default n), when
    the relative error reaches ``tol``, or when the residual vanishes to the
    working digits (reported as ``stop_reason="residual"``).
    """
    ctx = ctx or PrecisionContext()
    with ctx.local():
        op = as_operator(A, ctx)
        n = op.n
        max_iter = n if max_iter is None else max_iter
        bh = ctx.array(b)
        x = ctx.zeros(n) if x0 is None else ctx.array(x0)
        x_ref = op.solve(bh)
        vanish = ctx.scalar(10) ** (-(ctx.digits - 2))

        def energy(e):
            val = np.dot(e, op.matvec(e))
            if val < 0:
                raise NotPositiveDefinite("negative energy norm; operator is not positive definite")
            return _arith.sqrt(val)

        r = bh - op.matvec(x)
        nu = np.dot(r, r)
        if nu == 0:
            raise Breakdown(0, "initial residual is zero")
        r0norm = _arith.sqrt(nu)
        basis = [r / r0norm]
        p = r.copy()
        a_list, b_list, nu_list, rn_list = [], [], [nu], [r0norm]
        errs = [energy(x_ref - x)]
        upd = [_arith.sqrt(abs(np.dot(r, op.solve(r))))]
        xs, rs, ps = [x.copy()], [r.copy()], [p.copy()]
        reason = "max_iter"
        for k in range(1, max_iter + 1):
            s = op.matvec(p)
            mu = np.dot(p, s)
            if not mu > 0:
                raise NotPositiveDefinite(f"<p, A p> = {float(mu):.3e} at step {k}")
            a = nu / mu
            a_list.append(a)
            x = x + a * p
            r = r - a * s
            r = mgs(r, basis)
            nu_new = np.dot(r, r)
            rnorm = _arith.sqrt(nu_new)
            errs.append(energy(x_ref - x))
            upd.append(_arith.sqrt(abs(np.dot(r, op.solve(r)))))
            bk = nu_new / nu
            b_list.append(bk)
            nu_list.append(nu_new)
            rn_list.append(rnorm)
            p = r + bk * p
            nu = nu_new
            if record_vectors:
                xs.append(x.copy())
                rs.append(r.copy())
                ps.append(p.copy())
            if tol is not None and errs[-1] <= tol * errs[0]:
                reason = "tol"
                break
            if rnorm <= vanish * r0norm:
                reason = "residual"
                break
            basis.append(r / rnorm)

        obj = lambda v: np.array(v, dtype=object)
        trace = CGTrace(
            variant=Variant.HSCG,
            coeff_a=obj(a_list),
            coeff_b=obj(b_list),
            nu=obj(nu_list),
            rnorm=obj(rn_list),
            true_rnorm=obj([_arith.norm(bh - op.matvec(v)) for v in xs]) if record_vectors else obj([]),
            anorm_err=obj(errs),
            updated_anorm_err=obj(upd),
            iterates=obj(xs) if record_vectors else None,
            updated_residuals=obj(rs) if record_vectors else None,
            aux={"p": obj(ps)} if record_vectors else {},
            x0=np.zeros(n) if x0 is None else np.asarray(_arith.to_float(np.asarray(x0)), dtype=float),
        )
        errors = obj(errs)
        relative = np.array([float(e / errs[0]) for e in errs])
    return ExactRun(errors, relative, trace, ctx, reason)
