import io
import math
import warnings

import gmpy2
import numpy as np
import pytest

from cgfp.cg import SolveOptions, run_cg
from cgfp.diagnostics import build_tridiagonal, extension_floor, lanczos_residual
from cgfp.errors import (IndefiniteTridiagonal, IntervalAssignmentAmbiguous, NotPositiveDefinite,
                         PrecisionTooLow)
from cgfp.hiprec.context import PrecisionContext, doubled
from cgfp.hiprec.exact import exact_cg
from cgfp.hiprec.extend import (DEFAULT_TOL, assign_to_spectrum, classify_ritz, extend_T,
                                verify_extension, write_distance_csv, write_match_csv,
                                write_tridiagonal_text)
from cgfp.hiprec.linalg import cholesky, cholesky_solve, mgs, orthonormalize
from cgfp.matio import SpdMatrix, make_problem, model_problem
from cgfp.tridiagonal import Tridiagonal


def test_context_precision():
    with pytest.raises(PrecisionTooLow):
        PrecisionContext(31)
    ctx = PrecisionContext(64)
    assert ctx.bits >= 64 * math.log2(10)
    assert ctx.unit_roundoff < 1e-64
    with ctx.local():
        third = ctx.scalar(1) / 3
    assert abs(third * 3 - 1) <= 4 * ctx.unit_roundoff
    assert doubled().digits == 32
    # promotion of doubles is exact
    assert ctx.array([0.1])[0] == gmpy2.mpfr(0.1)


def test_dense_kernels():
    ctx = PrecisionContext(40)
    rng = np.random.default_rng(1)
    M = rng.standard_normal((6, 6))
    M = M @ M.T + 6 * np.eye(6)
    b = rng.standard_normal(6)
    with ctx.local():
        L = cholesky(ctx.array(M))
        x = cholesky_solve(L, ctx.array(b))
        res = ctx.array(M).dot(x) - ctx.array(b)
        assert max(abs(v) for v in res) < 1e-36
        cols = [ctx.array(c) for c in rng.standard_normal((3, 6))]
        Z = orthonormalize(cols + [cols[0] + cols[1]], ctx.scalar(1e-20))
        assert len(Z) == 3
        G = np.array([[np.dot(a, c) for c in Z] for a in Z])
        assert max(abs(G[i, j] - (i == j)) for i in range(3) for j in range(3)) < 1e-38
        v = mgs(ctx.array(rng.standard_normal(6)), Z)
        assert max(abs(np.dot(v, z)) for z in Z) < 1e-38


def test_exact_cg_identity():
    b = np.array([1.0, 2.0, 3.0])
    run = exact_cg(np.eye(3), b, ctx=PrecisionContext(32))
    assert len(run.errors) == 2 and run.errors[1] == 0
    assert run.stop_reason == "residual"
    assert run.relative[0] == 1.0


def test_exact_cg_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        exact_cg(np.diag([1.0, -1.0, 2.0]), np.ones(3), ctx=PrecisionContext(32))


def test_exact_cg_tol_and_max_iter(model):
    run = exact_cg(model.A, model.b, ctx=PrecisionContext(32), tol=1e-3)
    assert run.stop_reason == "tol" and run.relative[-1] <= 1e-3 < run.relative[-2]
    run = exact_cg(model.A, model.b, ctx=PrecisionContext(32), max_iter=5)
    assert run.stop_reason == "max_iter" and len(run.relative) == 6


def test_exact_cg_monotone_and_ladder(model):
    lo = exact_cg(model.A, model.b, ctx=PrecisionContext(32))
    hi = exact_cg(model.A, model.b, ctx=PrecisionContext(42))
    for run in (lo, hi):
        assert all(run.errors[k + 1] <= run.errors[k] for k in range(len(run.errors) - 1))
    steps = min(len(lo.errors), len(hi.errors))
    gap = max(float(abs(lo.errors[k] - hi.errors[k]) / hi.errors[0]) for k in range(steps))
    assert gap <= 10.0 ** -(32 - 12)


def test_exact_cg_distinct_eigenvalues_terminate():
    lam = np.linspace(0.01, 1, 30)
    p = make_problem(SpdMatrix(np.diag(lam)), seed=4)
    run = exact_cg(p.A, p.b, ctx=PrecisionContext(40))
    assert len(run.relative) - 1 <= 30
    assert run.relative[-1] <= 10.0 ** -(40 - 15)


def test_exact_trace_is_a_lanczos_run(model):
    ctx = PrecisionContext(40)
    run = exact_cg(model.A, model.b, ctx=ctx, max_iter=30)
    T = build_tridiagonal(run.trace, 29)
    d = lanczos_residual(model.A, run.trace, T, ctx=ctx)
    assert d.eps1 <= 10.0 ** -(40 - 24) and d.eps2 <= 10.0 ** -(40 - 24)


def _small_extension(variant="hscg", digits=32, n=24, J=30):
    problem = model_problem(n, 0.8, 1e-2, 1.0, seed=5)
    tr = run_cg(problem, variant, SolveOptions(max_iter=J + 1))
    T = build_tridiagonal(tr, J)
    Q = tr.lanczos_vectors(J + 1)
    ctx = PrecisionContext(digits)
    cls = classify_ritz(problem.A, T, Q, ctx=ctx)
    return problem, tr, T, Q, cls, extend_T(problem.A, T, Q, cls, ctx)


def test_classify_single_pair():
    A = SpdMatrix(np.diag([1.0, 2.0]))
    T = Tridiagonal([1.5], [], 0.5)
    Q = np.array([[1.0, 0.0], [0.0, 1.0]]) / 1.0
    Q[:, 0] = [np.sqrt(0.5), np.sqrt(0.5)]
    Q[:, 1] = [np.sqrt(0.5), -np.sqrt(0.5)]
    cls = classify_ritz(A, T, Q, ctx=PrecisionContext(32))
    assert cls.m == 1 and list(cls.converged) == [False]
    y = np.array([float(v) for v in cls.unconverged_basis[:, 0]])
    assert np.allclose(np.abs(y), Q[:, 0])


def test_classify_clusters_by_transitive_closure():
    A = SpdMatrix(np.diag([1.0, 2.0, 3.0]))
    # Ritz values 1, 1+0.6e-4, 1+1.2e-4 chain together at width 1e-4; 2 is separate
    T = Tridiagonal([1.0, 1.00006, 1.00012, 2.0], [0.0, 0.0, 0.0], 0.1)
    Q = np.zeros((3, 5))
    Q[0, 0] = Q[1, 1] = Q[2, 2] = 1.0
    Q[:, 3] = [0.0, 0.6, 0.8]
    Q[:, 4] = [0.8, 0.6, 0.0]
    cls = classify_ritz(A, T, Q, cluster_width=1e-4, conv_tol=1e-12, ctx=PrecisionContext(32))
    assert [len(c) for c in cls.clusters] == [3, 1]
    assert cls.cluster_values[0] == pytest.approx(1.00006)


def test_classify_health_hscg(model, model_traces):
    tr = model_traces["hscg"]
    T = build_tridiagonal(tr, 100)
    cls = classify_ritz(model.A, T, tr.lanczos_vectors(101), DEFAULT_TOL, DEFAULT_TOL,
                        PrecisionContext(64))
    assert cls.basis_defect <= 1e-8 and cls.next_overlap <= 1e-8
    tr = model_traces["gvcg"]
    T = build_tridiagonal(tr, 100)
    Q = tr.lanczos_vectors(101)
    poor = classify_ritz(model.A, T, Q, ctx=PrecisionContext(64))
    good = classify_ritz(model.A, T, Q, 1e-4, 1e-4, PrecisionContext(64))
    assert poor.basis_defect > 0.5
    assert good.basis_defect < 0.1 * poor.basis_defect
    assert good.next_overlap < 0.1 * poor.next_overlap


def test_extension_invariants():
    problem, tr, T, Q, cls, res = _small_extension()
    d = 32
    n = problem.n
    assert res.size == T.J + n - res.m or res.early_stop is not None
    assert res.interlaces
    assert res.max_eig_distance >= res.floor
    assert res.floor == pytest.approx(extension_floor(T, problem.A.eigenvalues), abs=1e-13)
    assert res.orthogonality_defect <= 10.0 ** -(d - 12)
    # With finite-precision input the relation carries, besides the run's own defect,
    # beta_J times the change made to q_{J+1} and the overlap of q_J with the
    # extension vectors (q_J is not orthogonal to the new directions once the
    # run has lost orthogonality).  Exact input drops both terms; see below.
    eps1 = lanczos_residual(problem.A, tr, T).eps1
    E = np.array([[float(v) for v in row] for row in res.Q_ext[:, T.J:]])
    dq = np.linalg.norm(Q[:, T.J] - E[:, 0])
    overlap = np.linalg.norm(Q[:, T.J - 1] @ E)
    bound = eps1 + float(T.beta_last) * (dq + overlap) / problem.A.norm2 + 10.0 ** -(d - 12)
    assert res.relation_residual <= 1.01 * bound
    alpha = [float(v) for v in res.T_ext.alpha[:T.J]]
    assert np.array_equal(alpha, T.alpha)


def test_exact_input_extension():
    ctx = PrecisionContext(32)
    lam = np.linspace(0.1, 1, 10)
    p = make_problem(SpdMatrix(np.diag(lam)), seed=1)
    run = exact_cg(p.A, p.b, ctx=ctx)
    J = 5
    T = build_tridiagonal(run.trace, J)
    Q = run.trace.lanczos_vectors(J + 1)
    cls = classify_ritz(p.A, T, Q, ctx=ctx)
    res = extend_T(p.A, T, Q, cls, ctx)
    assert res.size == 10
    assert res.max_eig_distance <= 10.0 ** -(32 - 12) * p.A.norm2
    eps1 = lanczos_residual(p.A, run.trace, T, ctx=ctx).eps1
    assert res.relation_residual <= eps1 + 10.0 ** -(32 - 12)
    rep = verify_extension(p.A, res, run.trace, ctx)
    assert np.all(np.abs(rep.ratio - 1) < 1e-14)
    assert rep.r0hat_max < 1e-14


def test_extension_of_tridiagonal_reproduces_it():
    ctx = PrecisionContext(32)
    rng = np.random.default_rng(0)
    n = 8
    Tm = Tridiagonal(rng.uniform(1, 2, n), rng.uniform(0.1, 0.5, n - 1))
    A = SpdMatrix(Tm.to_dense())
    b = np.zeros(n)
    b[0] = 1.5
    run = exact_cg(A, b, ctx=ctx)
    J = n - 2
    T = build_tridiagonal(run.trace, J)
    Q = run.trace.lanczos_vectors(J + 1)
    res = extend_T(A, T, Q, classify_ritz(A, T, Q, ctx=ctx), ctx)
    assert np.allclose([float(v) for v in res.T_ext.alpha], Tm.alpha, rtol=0, atol=1e-14)
    assert np.allclose([float(v) for v in res.T_ext.beta], Tm.beta, rtol=0, atol=1e-14)
    rep = verify_extension(A, res, run.trace, ctx)
    assert np.all(np.abs(rep.ratio - 1) < 1e-14)


def test_extend_refuses_indefinite():
    A = SpdMatrix(np.eye(2))
    T = Tridiagonal([0.0, 0.0], [1.0], 0.1)
    Q = np.eye(2)[:, [0, 1, 1]]
    cls = classify_ritz(A, Tridiagonal([1.0, 1.0], [0.1], 0.1), Q, ctx=PrecisionContext(32))
    with pytest.raises(IndefiniteTridiagonal):
        extend_T(A, T, Q, cls, PrecisionContext(32))


def test_assign_to_spectrum_ties():
    idx, ties = assign_to_spectrum([1.5, 0.2, 2.5, 1.9], [1.0, 2.0])
    assert list(idx) == [0, 0, 1, 1] and ties == [0]


def test_verify_warns_on_ties():
    ctx = PrecisionContext(32)
    A = SpdMatrix(np.diag([1.0, 3.0]))
    b = np.array([1.0, 1.0])
    run = exact_cg(A, b, ctx=ctx)
    T = build_tridiagonal(run.trace, 1)
    Q = run.trace.lanczos_vectors(2)
    res = extend_T(A, T, Q, classify_ritz(A, T, Q, ctx=ctx), ctx)
    res.T_ext = Tridiagonal(ctx.array([2.0, 2.0]), ctx.array([0.5]), 0)  # eigenvalues 1.5, 2.5
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = verify_extension(A, res, run.trace, ctx)
    assert any(issubclass(w.category, IntervalAssignmentAmbiguous) for w in caught) is False
    res.T_ext = Tridiagonal(ctx.array([2.0, 2.0]), ctx.array([0.0]), 0)  # both exactly at 2
    with pytest.warns(IntervalAssignmentAmbiguous):
        rep = verify_extension(A, res, run.trace, ctx)
    assert len(rep.ambiguous) == 2


def test_writers():
    problem, tr, T, Q, cls, res = _small_extension()
    buf = io.StringIO()
    write_tridiagonal_text(res.T_ext, buf, digits=32)
    lines = buf.getvalue().splitlines()
    assert lines[0] == f"# J={res.size}" and lines[1] == "j,alpha,beta"
    assert len(lines[2].split(",")[1]) > 30
    buf = io.StringIO()
    write_distance_csv(res, problem.A.eigenvalues, buf)
    assert len(buf.getvalue().splitlines()) == res.size + 1
    rep = verify_extension(problem.A, res, tr)
    buf = io.StringIO()
    write_match_csv(rep, buf)
    assert buf.getvalue().startswith("k,finite_precision_error,exact_on_T_error,ratio")
