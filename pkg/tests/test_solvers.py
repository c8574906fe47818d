import math

import numpy as np
import pytest

from colt_ot import _kernels
from colt_ot.block import block_to_dense
from colt_ot.colt import ColtRepr, FlopCounter, is_cross_compatible, kernel_1d, random_colt, to_dense
from colt_ot.data import MIXTURE_A, MIXTURE_B, GridSpec1D, gaussian_mixture, rescale
from colt_ot.oracles import dense_cost_matrix, w1_1d_exact
from colt_ot.solvers import (
    ConvergenceTrace,
    NumericalFailure,
    Problem1D,
    Problem2D,
    constant_schedule,
    densify,
    fs1,
    fs2,
    fs2_1d,
    fs2_1d_reference,
    fs2_2d,
    ipot_dense,
    proximal_schedule,
    sinkhorn_dense,
    w1_colt,
    w1_dense,
)

from conftest import dense_in_block_colt, dense_in_colt


def mixture_problem(n, **kw):
    grid = GridSpec1D(0, 100, n)
    u = rescale(gaussian_mixture(*MIXTURE_A, grid))
    v = rescale(gaussian_mixture(*MIXTURE_B, grid))
    return Problem1D(u, v, grid.h, **kw)


def random_marginals(rng, size):
    return rescale(rng.random(size)), rescale(rng.random(size))


# --- problem types ---------------------------------------------------------


def test_problem_validation():
    with pytest.raises(ValueError):
        Problem1D([1.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        Problem1D([0.5, 0.6], [0.5, 0.5], 1.0)
    with pytest.raises(ValueError):
        Problem1D([0.5, 0.5], [0.5, 0.5], 0.0)
    with pytest.raises(ValueError):
        Problem1D([0.5, 0.5], [0.5, 0.5], 1.0, L=0)
    with pytest.raises(ValueError):
        Problem1D([1.5, -0.5], [0.5, 0.5], 1.0)
    with pytest.raises(ValueError):
        Problem2D(np.full(6, 1 / 6), np.full(6, 1 / 6), 2, 2, 1.0, 1.0)


# --- kernel ----------------------------------------------------------------


def test_kernel_1d_dense():
    np.testing.assert_allclose(to_dense(kernel_1d(3, 0.5)),
                               [[1, .5, .25], [.5, 1, .5], [.25, .5, 1]], rtol=1e-15)


def test_kernel_symmetric_compatible():
    d = to_dense(kernel_1d(7, 0.3))
    np.testing.assert_array_equal(d, d.T)
    assert is_cross_compatible(kernel_1d(7, 0.3))


def test_kernel_lambda_value():
    assert math.exp(-0.1 / 1.0) == pytest.approx(0.904837418, abs=1e-9)


# --- schedules -------------------------------------------------------------


def test_schedule_constant():
    assert proximal_schedule(1) == 1.0
    assert proximal_schedule(100) == 1.0
    assert constant_schedule(2.5)(7) == 2.5


def test_schedule_hook():
    sched = lambda t: 1.0 / t
    values = [proximal_schedule(t, sched) for t in range(1, 6)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_callable_delta_reaches_solver(rng):
    u, v = random_marginals(rng, 6)
    seen = []
    p = Problem1D(u, v, 1.0, delta=lambda t: seen.append(t) or 1.0, L=2, itr_max=3)
    a = fs2(p)[0]
    b = fs2(Problem1D(u, v, 1.0, L=2, itr_max=3))[0]
    assert a == b and seen


# --- costs -----------------------------------------------------------------


def test_w1_dense_examples():
    assert w1_dense(dense_cost_matrix(2), np.full((2, 2), 0.25)) == 0.5
    assert w1_dense(dense_cost_matrix(3), np.full((3, 3), 1 / 9)) == pytest.approx(8 / 9)
    assert w1_dense(dense_cost_matrix(4), np.diag([.1, .2, .3, .4])) == 0
    with pytest.raises(ValueError):
        w1_dense(np.zeros((2, 2)), np.zeros((3, 3)))


def test_w1_colt_lower_ones():
    plan = ColtRepr.from_vectors([1, 1, 1], [1, 1], [0, 0], [1])
    assert w1_colt(plan, 1.0) == 4.0


def test_w1_colt_diagonal_plan():
    # ratios must be nonzero, so a diagonal plan is approached with tiny ratios
    n = 5
    plan = ColtRepr.from_vectors(np.full(n, 0.2), np.full(n - 1, 1e-300), np.zeros(n - 1), np.ones(n - 2))
    assert w1_colt(plan, 1.0) < 1e-299


def test_w1_colt_small_matches_dense():
    plan = ColtRepr.from_vectors([.2, .3, .5], [1e-3, 7.0], [.1, .4], [2.0])
    assert w1_colt(plan, 0.5) == pytest.approx(w1_dense(dense_cost_matrix(3, 0.5), to_dense(plan)),
                                              rel=1e-14)


def test_w1_colt_random(rng):
    for _ in range(100):
        n = int(rng.integers(2, 257))
        plan = random_colt(n, rng)
        h = rng.uniform(0.1, 3)
        dense = w1_dense(dense_cost_matrix(n, h), to_dense(plan))
        assert abs(w1_colt(plan, h) - dense) <= 1e-12 * dense


def test_w1_colt_type():
    with pytest.raises(TypeError):
        w1_colt(np.eye(3), 1.0)


# --- dense Sinkhorn and FS-1 -----------------------------------------------


def test_sinkhorn_equal_marginals(rng):
    u, _ = random_marginals(rng, 16)
    w1, _, _ = sinkhorn_dense(Problem1D(u, u, 1.0), iters=200, epsilon=0.01)
    assert w1 <= 1e-3


def test_sinkhorn_two_points():
    p = Problem1D([1, 0], [0, 1], 1.0)
    for eps in (1.0, 0.3, 0.1):
        w1, plan, _ = sinkhorn_dense(p, iters=50, epsilon=eps)
        np.testing.assert_allclose(plan, [[0, 1], [0, 0]], atol=1e-12)
        assert w1 == pytest.approx(1, abs=1e-12)


def test_sinkhorn_detects_unreachable_mass():
    with pytest.raises(NumericalFailure):
        sinkhorn_dense(Problem1D([1, 0], [0, 1], 1.0), iters=5, epsilon=1e-3)


@pytest.mark.parametrize("n", [2, 9, 64])
def test_fs1_equals_dense_sinkhorn_1d(rng, n):
    u, v = random_marginals(rng, n)
    p = Problem1D(u, v, rng.uniform(0.2, 2))
    a = sinkhorn_dense(p, iters=120, epsilon=0.8)
    b = fs1(p, 0.8, 120)
    np.testing.assert_allclose(b[2].w1, a[2].w1, rtol=1e-12)
    np.testing.assert_allclose(densify(b[1]), a[1], rtol=1e-11, atol=1e-300)


def test_fs1_equals_dense_sinkhorn_2d(rng):
    u, v = random_marginals(rng, 20)
    p = Problem2D(u, v, 5, 4, 0.4, 0.7)
    a = sinkhorn_dense(p, iters=100, epsilon=0.5, record_every=10)
    b = fs1(p, 0.5, 100, record_every=10)
    np.testing.assert_allclose(b[2].w1, a[2].w1, rtol=1e-12)
    assert b[2].iterations == a[2].iterations


def test_fs1_epsilon_ordering():
    p = mixture_problem(100)
    exact = w1_1d_exact(p.u, p.v, p.h)
    errors = [abs(fs1(p, eps * 100, 10000, record_every=1000)[0] - exact) / exact
              for eps in (1 / 20, 1 / 80, 1 / 320)]
    assert errors[0] > errors[1] > errors[2]


def test_fs1_equal_marginals(rng):
    n = 64
    u, _ = random_marginals(rng, n)
    for eps in (0.5, 0.1):
        w1 = fs1(Problem1D(u, u, 1.0 / n), eps, 2000)[0]
        assert w1 <= 2 * eps * math.log(n)


def test_fs1_rejects_bad_epsilon(rng):
    u, v = random_marginals(rng, 4)
    with pytest.raises(ValueError):
        fs1(Problem1D(u, v, 1.0), 0.0)


# --- dense IPOT ------------------------------------------------------------


def test_ipot_two_points():
    p = Problem1D([1, 0], [0, 1], 1.0, delta=1.0, L=20, itr_max=200)
    w1, plan, _ = ipot_dense(p)
    assert abs(w1 - 1) <= 1e-6


def test_ipot_equal_marginals(rng):
    u, _ = random_marginals(rng, 12)
    w1, plan, _ = ipot_dense(Problem1D(u, u, 1.0, itr_max=200))
    assert w1 <= 1e-10
    np.testing.assert_allclose(plan, np.diag(u), atol=1e-10)


def test_ipot_mixture_n100():
    p = mixture_problem(100)
    exact = w1_1d_exact(p.u, p.v, p.h)
    assert abs(ipot_dense(p)[0] - exact) / exact <= 1e-5


def test_ipot_callback_and_early_stop(rng):
    u, v = random_marginals(rng, 10)
    steps = []
    _, _, trace = ipot_dense(Problem1D(u, v, 1.0, itr_max=300), callback=lambda t, g: steps.append(t),
                             early_stop=True, tol=1e-9)
    assert steps == trace.outer
    assert len(trace) < 300
    assert trace.col_residual[-1] <= 1e-9


# --- FS-2 1D ---------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fs2_matches_ipot_every_step(seed):
    rng = np.random.default_rng(seed)
    u, v = random_marginals(rng, 8)
    p = Problem1D(u, v, rng.uniform(0.1, 2), itr_max=20)
    dense = []
    ipot_dense(p, callback=lambda t, g: dense.append(g.copy()))
    diffs = []
    fs2_1d(p, callback=lambda t, s: diffs.append(np.linalg.norm(densify(s) - dense[t - 1])))
    assert len(diffs) == 20
    assert max(diffs) <= 1e-12


def test_fs2_state_invariants(rng):
    u, v = random_marginals(rng, 12)
    p = Problem1D(u, v, 0.5, itr_max=15)

    def check(t, s):
        q = to_dense(s.q)
        assert (q > 0).all()
        assert dense_in_colt(q, rtol=1e-9)
        np.testing.assert_allclose(to_dense(s.qt), q.T, rtol=1e-12)
        assert dense_in_colt(to_dense(s.plan), rtol=1e-9)
        assert (s.phi > 0).all() and (s.psi > 0).all()
        assert (s.q.lower.gamma > 0).all() and (s.q.upper.gamma > 0).all()

    fs2_1d(p, callback=check)


def test_fs2_row_marginal_exact(rng):
    u, v = random_marginals(rng, 30)
    _, _, trace = fs2(Problem1D(u, v, 0.3, itr_max=30))
    assert max(trace.row_residual) <= 1e-12


def test_fs2_column_residual_monotone_in_sweeps(rng):
    # re-run the inner loop of each outer step one sweep at a time
    u, v = random_marginals(rng, 25)
    p = Problem1D(u, v, 0.4, itr_max=8)
    bad = []

    def check(t, s):
        phi, psi = s.phi.copy(), s.psi.copy()
        rs, cs = np.empty(25), np.empty(25)
        prev = np.inf
        for _ in range(20):
            assert _kernels.scaling_sweeps(u, v, phi, psi, s.q.vectors, s.qt.vectors, 1, rs, cs)
            res = np.abs(cs - v).sum()
            if res > prev * (1 + 1e-9) + 1e-16:
                bad.append((t, prev, res))
            prev = res

    fs2_1d(p, callback=check)
    assert not bad


def test_fs2_equal_marginals(rng):
    u, _ = random_marginals(rng, 20)
    assert fs2(Problem1D(u, u, 1.0, itr_max=200))[0] <= 1e-10


def test_fs2_mixture_n100():
    p = mixture_problem(100)
    exact = w1_1d_exact(p.u, p.v, p.h)
    assert abs(fs2(p)[0] - exact) / exact <= 1e-4


def test_fs2_needs_positive_marginals():
    with pytest.raises(ValueError, match="rescale"):
        fs2(Problem1D([1, 0], [0, 1], 1.0))


def test_fs2_type_checks(rng):
    u, v = random_marginals(rng, 4)
    with pytest.raises(TypeError):
        fs2_1d(Problem2D(u, v, 2, 2, 1, 1))
    with pytest.raises(TypeError):
        fs2_2d(Problem1D(u, v, 1))


def test_fs2_early_stop(rng):
    u, v = random_marginals(rng, 10)
    w1, state, trace = fs2(Problem1D(u, v, 1.0, itr_max=500), early_stop=True, tol=1e-10)
    assert len(trace) < 500
    assert state.outer == len(trace)
    assert trace.col_residual[-1] <= 1e-10


def test_fs2_long_run_stays_finite():
    # far off-support ratios underflow after a few hundred steps unless floored
    p = mixture_problem(100, itr_max=500)
    w1, state, trace = fs2(p)
    assert np.isfinite(trace.w1).all()
    assert (state.q.lower.ratios > 0).all()


def test_reference_matches_fast_path(rng):
    u, v = random_marginals(rng, 16)
    p = Problem1D(u, v, 0.7, itr_max=10)
    a = fs2_1d_reference(p)
    b = fs2_1d(p)
    np.testing.assert_allclose(a[2].w1, b[2].w1, rtol=1e-12)
    np.testing.assert_allclose(to_dense(a[1]), to_dense(b[1].plan), rtol=1e-12, atol=1e-300)


def test_fs2_flops_linear():
    counts = []
    for n in (64, 128, 256):
        c = FlopCounter()
        u = rescale(np.linspace(1, 2, n))
        fs2_1d_reference(Problem1D(u, u[::-1].copy(), 1.0, L=3, itr_max=2), counter=c)
        counts.append(c.total)
    for lo, hi in zip(counts, counts[1:]):
        assert hi / lo == pytest.approx(2, rel=0.1)


def test_trace_contract(rng):
    u, v = random_marginals(rng, 10)
    _, _, trace = fs2(Problem1D(u, v, 1.0, L=4, itr_max=12))
    assert isinstance(trace, ConvergenceTrace)
    assert trace.outer == list(range(1, 13))
    assert trace.iterations == [4 * t for t in range(1, 13)]
    assert all(a <= b for a, b in zip(trace.wall_time, trace.wall_time[1:]))
    assert len(list(trace.rows())) == 12


# --- FS-2 2D ---------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1])
def test_fs2_2d_matches_ipot(seed):
    rng = np.random.default_rng(seed)
    u, v = random_marginals(rng, 16)
    p = Problem2D(u, v, 4, 4, 0.3, 0.5, itr_max=20)
    dense = []
    ipot_dense(p, callback=lambda t, g: dense.append(g.copy()))
    diffs = []
    fs2_2d(p, callback=lambda t, s: diffs.append(np.linalg.norm(densify(s) - dense[t - 1])))
    assert max(diffs) <= 1e-12


def test_fs2_2d_state_invariants(rng):
    u, v = random_marginals(rng, 15)
    p = Problem2D(u, v, 5, 3, 0.4, 0.6, itr_max=10)

    def check(t, s):
        q = block_to_dense(s.q)
        assert (q > 0).all()
        np.testing.assert_allclose(block_to_dense(s.qt), q.T, rtol=1e-12)
        assert dense_in_block_colt(block_to_dense(s.plan), 5, 3, rtol=1e-9)

    fs2_2d(p, callback=check)


def test_fs2_2d_single_column_is_1d(rng):
    u, v = random_marginals(rng, 12)
    a = fs2(Problem2D(u, v, 12, 1, 0.5, 0.9, itr_max=25))
    b = fs2(Problem1D(u, v, 0.5, itr_max=25))
    assert a[2].w1 == b[2].w1
    assert a[2].col_residual == b[2].col_residual


def test_fs2_2d_equal_marginals(rng):
    u, _ = random_marginals(rng, 16)
    assert fs2(Problem2D(u, u, 4, 4, 1.0, 1.0, itr_max=200))[0] <= 1e-10
