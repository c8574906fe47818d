"""Wasserstein-1 solvers on uniform 1D and 2D grids.

Dense baselines (Sinkhorn, IPOT) work on explicit N x N matrices. FS-1 is
Sinkhorn with the kernel kept in CoLT form; FS-2 is the proximal point
iteration with every iterate kept in CoLT form, so each outer step costs
O(N) (O(NM) in 2D) time and memory.

FS-2 keeps explicit coefficient vectors for both Q and Q^T. For a
non-symmetric Q the superdiagonal of Q^T is the subdiagonal of Q, which is
tracked separately (``gamma_sub`` below) instead of reusing Q's
superdiagonal.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import _kernels
from .block import BlockColtRepr, block_to_dense, block_w1, kernel_2d
from .colt import (
    ColtRepr,
    FlopCounter,
    cmv,
    hadamard,
    kernel_1d,
    scale_cols,
    scale_rows,
)
from .oracles import dense_cost_matrix

__all__ = [
    "NumericalFailure",
    "Problem1D",
    "Problem2D",
    "ConvergenceTrace",
    "Fs2State",
    "Fs2State2D",
    "constant_schedule",
    "proximal_schedule",
    "kernel_1d",
    "sinkhorn_dense",
    "fs1",
    "ipot_dense",
    "fs2_1d",
    "fs2_1d_reference",
    "fs2_2d",
    "fs2",
    "w1_dense",
    "w1_colt",
    "densify",
]

Schedule = Union[float, Callable[[int], float]]


class NumericalFailure(FloatingPointError):
    """A scaling iteration hit a zero, overflow or NaN."""


def constant_schedule(delta=1.0):
    if delta <= 0:
        raise ValueError("delta must be positive")
    return lambda t: float(delta)


def proximal_schedule(t, delta=1.0):
    """Regularization for outer step ``t`` (1-based); constant by default."""
    if t < 1:
        raise ValueError("outer index starts at 1")
    return float(delta(t)) if callable(delta) else float(delta)


def _check_marginal(x, name, size):
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if x.size != size:
        raise ValueError(f"{name} must have length {size}, got {x.size}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite and nonnegative")
    if abs(x.sum() - 1.0) > 1e-12 * max(1, size) ** 0.5 + 1e-12:
        raise ValueError(f"{name} must sum to 1 (sum = {x.sum()!r})")
    return x


def _check_common(p):
    if not callable(p.delta) and not p.delta > 0:
        raise ValueError("delta must be positive")
    if p.L < 1 or p.itr_max < 1:
        raise ValueError("L and itr_max must be at least 1")


@dataclass
class Problem1D:
    u: np.ndarray
    v: np.ndarray
    h: float
    delta: Schedule = 1.0
    L: int = 20
    itr_max: int = 500

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64).reshape(-1)
        n = self.u.size
        if n < 2:
            raise ValueError("need at least two grid nodes")
        self.u = _check_marginal(self.u, "u", n)
        self.v = _check_marginal(self.v, "v", n)
        if not self.h > 0:
            raise ValueError("h must be positive")
        _check_common(self)

    @property
    def n(self):
        return self.u.size

    @property
    def shape(self):
        return self.n

    @property
    def spacing(self):
        return self.h

    def cost(self):
        return dense_cost_matrix(self.n, self.h)


@dataclass
class Problem2D:
    """Marginals on an n x m grid in column-major order (index i + j*n)."""

    u: np.ndarray
    v: np.ndarray
    n: int
    m: int
    h1: float
    h2: float
    delta: Schedule = 1.0
    L: int = 20
    itr_max: int = 500

    def __post_init__(self):
        if self.n < 2 or self.m < 1:
            raise ValueError("grid must be at least 2 x 1")
        self.u = _check_marginal(self.u, "u", self.n * self.m)
        self.v = _check_marginal(self.v, "v", self.n * self.m)
        if not (self.h1 > 0 and self.h2 > 0):
            raise ValueError("spacings must be positive")
        _check_common(self)

    @property
    def shape(self):
        return (self.n, self.m)

    @property
    def spacing(self):
        return (self.h1, self.h2)

    def cost(self):
        return dense_cost_matrix((self.n, self.m), (self.h1, self.h2))


@dataclass
class ConvergenceTrace:
    """One record per outer step (per iteration for plain Sinkhorn)."""

    outer: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    w1: list = field(default_factory=list)
    row_residual: list = field(default_factory=list)
    col_residual: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def record(self, outer, iterations, w1, row_res, col_res, wall):
        self.outer.append(int(outer))
        self.iterations.append(int(iterations))
        self.w1.append(float(w1))
        self.row_residual.append(float(row_res))
        self.col_residual.append(float(col_res))
        self.wall_time.append(float(wall))

    def __len__(self):
        return len(self.outer)

    @property
    def final_w1(self):
        return self.w1[-1]

    def rows(self):
        return zip(self.outer, self.iterations, self.w1, self.row_residual,
                   self.col_residual, self.wall_time)


@dataclass
class Fs2State:
    """Snapshot of FS-2 after an outer step.

    ``plan`` is the transport plan diag(phi) Q diag(psi) of the step just
    finished; ``q`` and ``qt`` already hold the next step's Q = K * plan
    and its transpose.
    """

    phi: np.ndarray
    psi: np.ndarray
    q: ColtRepr
    qt: ColtRepr
    plan: ColtRepr
    lam: float
    outer: int = 0


@dataclass
class Fs2State2D:
    phi: np.ndarray
    psi: np.ndarray
    q: BlockColtRepr
    qt: BlockColtRepr
    plan: BlockColtRepr
    lam1: float
    lam2: float
    outer: int = 0


def _scale_division(num, den):
    """``num / den`` with 0/0 -> 0 for zero-mass entries."""
    out = np.zeros_like(num)
    pos = num > 0
    d = den[pos]
    if np.any(~(d > 0)) or not np.all(np.isfinite(d)):
        raise NumericalFailure("zero or non-finite scaling denominator for a positive marginal")
    out[pos] = num[pos] / d
    return out


# ---------------------------------------------------------------------------
# cost evaluation


def w1_dense(cost, plan):
    """Frobenius product ``<C, plan>``."""
    cost = np.asarray(cost)
    plan = np.asarray(plan)
    if cost.shape != plan.shape:
        raise ValueError(f"shape mismatch: {cost.shape} vs {plan.shape}")
    return float((cost * plan).sum())


def w1_colt(plan, h):
    """``<C, plan>`` for a CoLT plan and cost ``h * |i - j|`` in O(N).

    ``plan`` may be a :class:`ColtRepr` or an :class:`Fs2State`.
    """
    if isinstance(plan, Fs2State):
        plan = plan.plan
    if not isinstance(plan, ColtRepr):
        raise TypeError("expected a ColtRepr or Fs2State")
    return float(_kernels.w1_colt(*plan.vectors, float(h)))


def densify(plan):
    """Dense matrix for any plan form (size-guarded for implicit ones)."""
    if isinstance(plan, (Fs2State, Fs2State2D)):
        plan = plan.plan
    if isinstance(plan, ColtRepr):
        from .colt import to_dense
        return to_dense(plan)
    if isinstance(plan, BlockColtRepr):
        return block_to_dense(plan)
    return np.asarray(plan, dtype=np.float64)


# ---------------------------------------------------------------------------
# dense baselines


def sinkhorn_dense(p, cost=None, iters=1000, epsilon=None, record_every=1):
    """Entropic Sinkhorn with the dense kernel ``exp(-C / epsilon)``.

    ``epsilon`` defaults to the problem's delta. Returns (W1 of the
    entropic plan, plan, trace).
    """
    cost = p.cost() if cost is None else np.asarray(cost, dtype=np.float64)
    eps = proximal_schedule(1, p.delta) if epsilon is None else float(epsilon)
    kernel = np.exp(-cost / eps)
    n = p.u.size
    phi = np.full(n, 1.0 / n)
    psi = np.full(n, 1.0 / n)
    trace = ConvergenceTrace()
    start = time.perf_counter()
    for it in range(1, iters + 1):
        psi = _scale_division(p.v, kernel.T @ phi)
        phi = _scale_division(p.u, kernel @ psi)
        if it % record_every == 0 or it == iters:
            plan = phi[:, None] * kernel * psi[None, :]
            trace.record(it, it, w1_dense(cost, plan), np.abs(plan.sum(1) - p.u).sum(),
                         np.abs(plan.sum(0) - p.v).sum(), time.perf_counter() - start)
    plan = phi[:, None] * kernel * psi[None, :]
    w1 = w1_dense(cost, plan)
    if not math.isfinite(w1):
        raise NumericalFailure("non-finite W1")
    return w1, plan, trace


def ipot_dense(p, cost=None, callback=None, early_stop=False, tol=1e-9):
    """Inexact proximal point iteration on dense matrices.

    Gamma starts as the all-ones matrix; every outer step forms
    Q = exp(-C / delta_t) * Gamma, runs L scaling sweeps and sets
    Gamma = diag(phi) Q diag(psi). ``callback(t, Gamma)`` sees every plan.
    """
    cost = p.cost() if cost is None else np.asarray(cost, dtype=np.float64)
    n = p.u.size
    phi = np.full(n, 1.0 / n)
    psi = np.full(n, 1.0 / n)
    plan = np.ones((n, n))
    trace = ConvergenceTrace()
    start = time.perf_counter()
    for t in range(1, p.itr_max + 1):
        q = np.exp(-cost / proximal_schedule(t, p.delta)) * plan
        for _ in range(p.L):
            psi = _scale_division(p.v, q.T @ phi)
            phi = _scale_division(p.u, q @ psi)
        plan = phi[:, None] * q * psi[None, :]
        col_res = np.abs(plan.sum(0) - p.v).sum()
        trace.record(t, t * p.L, w1_dense(cost, plan), np.abs(plan.sum(1) - p.u).sum(),
                     col_res, time.perf_counter() - start)
        if not math.isfinite(trace.w1[-1]):
            raise NumericalFailure(f"non-finite W1 at outer step {t}")
        if callback is not None:
            callback(t, plan)
        if early_stop and col_res <= tol:
            break
    return trace.final_w1, plan, trace


# ---------------------------------------------------------------------------
# FS-1


def fs1(p, epsilon=None, iters=1000, record_every=1):
    """Sinkhorn with the kernel held in CoLT (block CoLT in 2D) form.

    Returns (W1 of the entropic plan, implicit plan, trace).
    """
    eps = proximal_schedule(1, p.delta) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    two_d = isinstance(p, Problem2D)
    if two_d:
        k = kernel_2d(p.n, p.m, math.exp(-p.h1 / eps), math.exp(-p.h2 / eps))
        arrays = tuple(np.ascontiguousarray(a) for a in k.arrays)
        sweeps = _kernels.block_scaling_sweeps
    else:
        k = kernel_1d(p.n, math.exp(-p.h / eps))
        arrays = k.vectors
        sweeps = _kernels.scaling_sweeps
    size = p.u.size
    phi = np.full(size, 1.0 / size)
    psi = np.full(size, 1.0 / size)
    rowsum = np.empty(size)
    colsum = np.empty(size)
    trace = ConvergenceTrace()
    start = time.perf_counter()
    done = 0
    plan = None
    while done < iters:
        step = min(record_every, iters - done)
        if not sweeps(p.u, p.v, phi, psi, arrays, arrays, step, rowsum, colsum):
            raise NumericalFailure(f"zero or non-finite denominator after {done} iterations")
        done += step
        plan = _scaled_plan(k, phi, psi)
        w1 = _plan_w1(plan, p)
        if not math.isfinite(w1):
            raise NumericalFailure(f"non-finite W1 after {done} iterations")
        trace.record(done, done, w1, np.abs(rowsum - p.u).sum(), np.abs(colsum - p.v).sum(),
                     time.perf_counter() - start)
    return trace.final_w1, plan, trace


def _scaled_plan(k, phi, psi):
    if isinstance(k, BlockColtRepr):
        from .block import block_scale
        return block_scale(psi, block_scale(phi, k, "row"), "col")
    return scale_cols(scale_rows(phi, k), psi)


def _plan_w1(plan, p):
    if isinstance(plan, BlockColtRepr):
        return block_w1(plan, p.h1, p.h2)
    return w1_colt(plan, p.h)


# ---------------------------------------------------------------------------
# FS-2


def _lam(p, t, spacing):
    return math.exp(-spacing / proximal_schedule(t, p.delta))


def _strictly_positive(p):
    if np.any(p.u <= 0) or np.any(p.v <= 0):
        raise ValueError("FS-2 needs strictly positive marginals; apply rescale() first")


def fs2_1d(p, callback=None, early_stop=False, tol=1e-9):
    """1D FS-2: proximal point iteration entirely on CoLT vectors.

    Returns (W1, final :class:`Fs2State`, trace). ``callback(t, state)``
    receives a snapshot after every outer step (this copies O(N) data).
    """
    if not isinstance(p, Problem1D):
        raise TypeError("fs2_1d expects a Problem1D")
    _strictly_positive(p)
    n = p.n
    lam = _lam(p, 1, p.h)
    phi = np.full(n, 1.0 / n)
    psi = np.full(n, 1.0 / n)
    g = np.ones(n)
    # Q = K * (1 1^T) = K; lower/upper ratios of Q and of Q^T
    al, gp, au = np.full(n - 1, lam), np.full(n - 1, lam), np.full(n - 2, lam)
    bl, gamma_sub, bu = np.full(n - 1, lam), np.full(n - 1, lam), np.full(n - 2, lam)
    plan = (np.empty(n), np.empty(n - 1), np.empty(n - 1), np.empty(n - 2))
    rowsum = np.empty(n)
    colsum = np.empty(n)
    trace = ConvergenceTrace()
    state = None
    start = time.perf_counter()
    for t in range(1, p.itr_max + 1):
        ok = _kernels.scaling_sweeps(p.u, p.v, phi, psi, (g, al, gp, au),
                                     (g, bl, gamma_sub, bu), p.L, rowsum, colsum)
        if not ok:
            raise NumericalFailure(f"zero or non-finite denominator in outer step {t}")
        lam = _lam(p, t + 1, p.h)
        _kernels.proximal_update(phi, psi, lam, g, al, gp, au, bl, gamma_sub, bu, plan)
        w1 = _kernels.w1_colt(*plan, p.h)
        col_res = np.abs(colsum - p.v).sum()
        trace.record(t, t * p.L, w1, np.abs(rowsum - p.u).sum(), col_res,
                     time.perf_counter() - start)
        if not math.isfinite(w1):
            raise NumericalFailure(f"non-finite W1 at outer step {t}")
        last = t == p.itr_max or (early_stop and col_res <= tol)
        if callback is not None or last:
            state = Fs2State(
                phi=phi.copy(), psi=psi.copy(),
                q=ColtRepr.from_vectors(g, al, gp, au),
                qt=ColtRepr.from_vectors(g, bl, gamma_sub, bu),
                plan=ColtRepr.from_vectors(*plan),
                lam=lam, outer=t,
            )
            if callback is not None:
                callback(t, state)
        if last:
            break
    return trace.final_w1, state, trace


def fs2_1d_reference(p, counter=None):
    """FS-2 assembled from the generic CoLT operations.

    Slower than :func:`fs2_1d` but written directly in terms of Hadamard
    products and diagonal scalings, and able to count arithmetic through
    ``counter``. Returns (W1, plan, trace) with a one-row-per-step trace.
    """
    _strictly_positive(p)
    n = p.n
    cnt = counter if counter is not None else FlopCounter()
    q = kernel_1d(n, _lam(p, 1, p.h))
    qt = q
    phi = np.full(n, 1.0 / n)
    psi = np.full(n, 1.0 / n)
    trace = ConvergenceTrace()
    start = time.perf_counter()
    plan = None
    for t in range(1, p.itr_max + 1):
        for _ in range(p.L):
            psi = p.v / cmv(qt, phi, counter=counter)
            phi = p.u / cmv(q, psi, counter=counter)
            cnt.vector_ops += 2 * n
        plan = scale_cols(scale_rows(phi, q), psi)
        k = kernel_1d(n, _lam(p, t + 1, p.h))
        q = hadamard(k, plan)
        qt = hadamard(k, scale_cols(scale_rows(psi, qt), phi))
        # two scalings and one Hadamard product per matrix, ~4 vectors each
        cnt.vector_ops += 2 * 3 * 4 * n
        trace.record(t, t * p.L, w1_colt(plan, p.h), np.nan, np.nan, time.perf_counter() - start)
    return trace.final_w1, plan, trace


def fs2_2d(p, callback=None, early_stop=False, tol=1e-9):
    """2D FS-2 on block CoLT vectors; O(NM) per outer step.

    Returns (W1, final :class:`Fs2State2D`, trace).
    """
    if not isinstance(p, Problem2D):
        raise TypeError("fs2_2d expects a Problem2D")
    _strictly_positive(p)
    n, m = p.n, p.m
    lam1, lam2 = _lam(p, 1, p.h1), _lam(p, 1, p.h2)
    size = n * m
    phi = np.full(size, 1.0 / size)
    psi = np.full(size, 1.0 / size)
    g = np.ones((m, n))
    al, gp, au = np.full((m, n - 1), lam1), np.full((m, n - 1), lam1), np.full((m, n - 2), lam1)
    bl, gamma_sub, bu = np.full((m, n - 1), lam1), np.full((m, n - 1), lam1), np.full((m, n - 2), lam1)
    AL, AU = np.full((m - 1, n), lam2), np.full((m - 1, n), lam2)
    BL, BU = np.full((m - 1, n), lam2), np.full((m - 1, n), lam2)
    plan = (np.empty((m, n)), np.empty((m, n - 1)), np.empty((m, n - 1)),
            np.empty((m, n - 2)), np.empty((m - 1, n)), np.empty((m - 1, n)))
    rowsum = np.empty(size)
    colsum = np.empty(size)
    trace = ConvergenceTrace()
    state = None
    start = time.perf_counter()
    for t in range(1, p.itr_max + 1):
        ok = _kernels.block_scaling_sweeps(p.u, p.v, phi, psi, (g, al, gp, au, AL, AU),
                                           (g, bl, gamma_sub, bu, BL, BU), p.L, rowsum, colsum)
        if not ok:
            raise NumericalFailure(f"zero or non-finite denominator in outer step {t}")
        lam1, lam2 = _lam(p, t + 1, p.h1), _lam(p, t + 1, p.h2)
        _kernels.block_proximal_update(phi, psi, lam1, lam2, (g, al, gp, au, AL, AU),
                                       (gamma_sub, bl, bu, BL, BU), plan)
        w1 = _kernels.block_w1(*plan, p.h1, p.h2)
        col_res = np.abs(colsum - p.v).sum()
        trace.record(t, t * p.L, w1, np.abs(rowsum - p.u).sum(), col_res,
                     time.perf_counter() - start)
        if not math.isfinite(w1):
            raise NumericalFailure(f"non-finite W1 at outer step {t}")
        last = t == p.itr_max or (early_stop and col_res <= tol)
        if callback is not None or last:
            state = Fs2State2D(
                phi=phi.copy(), psi=psi.copy(),
                q=BlockColtRepr(g, al, gp, au, AL, AU),
                qt=BlockColtRepr(g, bl, gamma_sub, bu, BL, BU),
                plan=BlockColtRepr(*plan),
                lam1=lam1, lam2=lam2, outer=t,
            )
            if callback is not None:
                callback(t, state)
        if last:
            break
    return trace.final_w1, state, trace


def fs2(p, **kwargs):
    """Dispatch to :func:`fs2_1d` or :func:`fs2_2d` by problem type."""
    if isinstance(p, Problem2D):
        return fs2_2d(p, **kwargs)
    return fs2_1d(p, **kwargs)
