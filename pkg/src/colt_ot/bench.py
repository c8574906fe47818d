"""Experiment runner: traces, timing tables and complexity fits.

CSV layout (one header row, floats with 17 significant digits):

trace_<solver>_<n>x<m>.csv
    outer, iterations, w1, row_residual, col_residual, wall_time
summary.csv
    solver, kind, n, m, points, repetitions, status, w1, oracle_w1,
    oracle_error, plan_frobenius_vs_ipot, median_time, mean_time,
    speedup_vs_ipot

``wall_time``, ``median_time``, ``mean_time`` and ``speedup_vs_ipot`` are
the only columns that change between identical runs.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .colt import timed_region
from .data import (
    MIXTURE_A,
    MIXTURE_B,
    GridSpec1D,
    gaussian_mixture,
    image_marginal,
    load_pgm,
    rescale,
    uniform_random_2d,
)
from .oracles import MAX_LP_SIDE, lp_transport_exact, w1_1d_exact
from .solvers import (
    Problem1D,
    Problem2D,
    densify,
    fs1,
    fs2,
    ipot_dense,
    sinkhorn_dense,
)

log = logging.getLogger(__name__)

KINDS = ("gaussian1d", "random2d", "images")
SOLVERS = ("sinkhorn", "fs1", "ipot", "fs2")
TIME_COLUMNS = ("wall_time", "median_time", "mean_time", "speedup_vs_ipot")
WORKERS_ENV = "COLT_OT_WORKERS"

TRACE_FIELDS = ("outer", "iterations", "w1", "row_residual", "col_residual", "wall_time")
SUMMARY_FIELDS = ("solver", "kind", "n", "m", "points", "repetitions", "status", "w1",
                  "oracle_w1", "oracle_error", "plan_frobenius_vs_ipot", "median_time",
                  "mean_time", "speedup_vs_ipot")

# dense plans are only compared up to this many grid points
MAX_COMPARE_POINTS = 4096


def bundled_images():
    """Paths of the two small test images shipped with the package."""
    root = resources.files("colt_ot") / "images"
    return str(root / "blobs_a.pgm"), str(root / "blobs_b.pgm")


@dataclass
class ExperimentConfig:
    kind: str = "gaussian1d"
    sizes: list = field(default_factory=lambda: [100])
    solvers: list = field(default_factory=lambda: ["fs2", "ipot"])
    delta: float = 1.0
    epsilons: list = field(default_factory=lambda: [1 / 20, 1 / 80, 1 / 320])
    L: int = 20
    itr_max: int = 500
    seed: int = 0
    repetitions: int = 1
    out: str = "results"
    timing: bool = False
    eta: float = 1e-5
    spacing: float = 0.1
    images: tuple = None

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; choose from {KINDS}")
        if not self.sizes:
            raise ValueError("sizes must not be empty")
        if not self.solvers:
            raise ValueError("solvers must not be empty")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad:
            raise ValueError(f"unknown solvers {bad}; choose from {SOLVERS}")
        if any(int(s) < 2 for s in self.sizes):
            raise ValueError("sizes must be at least 2")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.L < 1 or self.itr_max < 1:
            raise ValueError("L and itr_max must be at least 1")
        if not self.delta > 0 or not self.eta > 0 or not self.spacing > 0:
            raise ValueError("delta, eta and spacing must be positive")
        if any(not e > 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        return self


def build_problem(cfg, size):
    """Problem for one size; 2D kinds use a size x size grid."""
    if cfg.kind == "gaussian1d":
        grid = GridSpec1D(0.0, 100.0, size)
        u = rescale(gaussian_mixture(*MIXTURE_A, grid), cfg.eta)
        v = rescale(gaussian_mixture(*MIXTURE_B, grid), cfg.eta)
        return Problem1D(u, v, grid.h, cfg.delta, cfg.L, cfg.itr_max)
    if cfg.kind == "random2d":
        u = rescale(uniform_random_2d(size, size, cfg.seed), cfg.eta)
        v = rescale(uniform_random_2d(size, size, cfg.seed + 1), cfg.eta)
    else:
        a, b = cfg.images or bundled_images()
        u = image_marginal(_fit_image(load_pgm(a), size), cfg.eta)
        v = image_marginal(_fit_image(load_pgm(b), size), cfg.eta)
    h = cfg.spacing
    return Problem2D(u, v, size, size, h, h, cfg.delta, cfg.L, cfg.itr_max)


def _fit_image(img, size):
    if img.height == size and img.width == size:
        return img
    return img.downsample(size, size)


def domain_length(p):
    if isinstance(p, Problem2D):
        return p.h1 * (p.n - 1)
    return p.h * (p.n - 1)


def oracle_w1(p):
    """Exact W1 when an oracle applies at this size, else None."""
    if isinstance(p, Problem1D):
        return w1_1d_exact(p.u, p.v, p.h)
    if p.u.size <= MAX_LP_SIDE:
        return lp_transport_exact(p.u, p.v, p.cost()).objective
    return None


def solver_runs(cfg):
    """(label, solver, epsilon) triples; entropic solvers expand over epsilons."""
    runs = []
    for s in cfg.solvers:
        if s in ("sinkhorn", "fs1"):
            runs.extend((f"{s}@{e:.6g}", s, e) for e in cfg.epsilons)
        else:
            runs.append((s, s, None))
    return runs


def run_solver(name, p, epsilon=None, iters=None, cost=None):
    """Run one solver; ``epsilon`` is relative to a unit-length domain.

    Dense baselines take a precomputed ``cost`` so that building it is not
    part of any timed region.
    """
    if name == "fs2":
        return fs2(p)
    if name == "ipot":
        return ipot_dense(p, cost)
    if epsilon is None:
        raise ValueError(f"{name} needs an epsilon")
    n_iter = iters if iters is not None else p.itr_max * p.L
    eps = epsilon * domain_length(p)
    if name == "fs1":
        return fs1(p, eps, n_iter, record_every=p.L)
    if name == "sinkhorn":
        return sinkhorn_dense(p, cost, n_iter, eps, record_every=p.L)
    raise ValueError(f"unknown solver {name!r}")


def compare_plans(a, b, max_points=MAX_COMPARE_POINTS):
    """Frobenius norm of the difference of two plans (dense or implicit)."""
    da = _dense_plan(a, max_points)
    db = _dense_plan(b, max_points)
    if da.shape != db.shape:
        raise ValueError(f"plan shapes differ: {da.shape} vs {db.shape}")
    return float(np.linalg.norm(da - db))


def _dense_plan(plan, max_points):
    d = densify(plan)
    if d.shape[0] > max_points:
        raise ValueError(f"plan of size {d.shape[0]} exceeds the comparison guard {max_points}")
    return d


def fit_complexity(sizes, times):
    """Least-squares fit of log(time) against log(size).

    Returns (slope, intercept, r_squared).
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if sizes.ndim != 1 or sizes.size < 3 or sizes.shape != times.shape:
        raise ValueError("need at least three (size, time) pairs")
    if not (np.all(sizes > 0) and np.all(times > 0)):
        raise ValueError("sizes and times must be positive")
    if np.unique(sizes).size < 2:
        raise ValueError("need at least two distinct sizes")
    x, y = np.log(sizes), np.log(times)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g") if math.isfinite(x) else str(x)
    return str(x)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


@dataclass
class TimingRecord:
    """One summary row: a solver at one problem size."""

    solver: str
    kind: str
    n: int
    m: int
    repetitions: int
    status: str = "ok"
    w1: float = None
    oracle_w1: float = None
    oracle_error: float = None
    plan_frobenius_vs_ipot: float = None
    median_time: float = None
    mean_time: float = None
    speedup_vs_ipot: float = None

    def __post_init__(self):
        for t in (self.median_time, self.mean_time):
            if t is not None and not t > 0:
                raise ValueError("times must be positive")

    @property
    def ok(self):
        return self.status == "ok"

    def row(self):
        return (self.solver, self.kind, self.n, self.m, self.n * self.m, self.repetitions,
                self.status, self.w1, self.oracle_w1, self.oracle_error,
                self.plan_frobenius_vs_ipot, self.median_time, self.mean_time,
                self.speedup_vs_ipot)


def _timed(fn):
    with timed_region():
        t0 = time.perf_counter()
        result = fn()
        # guard against a zero reading from a coarse clock
        return result, max(time.perf_counter() - t0, 1e-9)


_warm = False


def warmup():
    """Load the compiled kernels once so their start-up cost is not timed."""
    global _warm
    if _warm:
        return
    u = np.array([0.2, 0.3, 0.1, 0.4])
    v = np.array([0.4, 0.1, 0.3, 0.2])
    for p in (Problem1D(u, v, 1.0, L=1, itr_max=1), Problem2D(u, v, 2, 2, 1.0, 1.0, L=1, itr_max=1)):
        fs2(p)
        fs1(p, 1.0, 1)
    _warm = True


def run_size(cfg, size, out=None):
    """Run every solver of ``cfg`` on one size; returns TimingRecords.

    Trace CSVs are written to ``out`` when given.
    """
    warmup()
    p = build_problem(cfg, size)
    n, m = (p.n, p.m) if isinstance(p, Problem2D) else (p.n, 1)
    exact = oracle_w1(p)
    cost = p.cost() if {"ipot", "sinkhorn"} & set(cfg.solvers) else None
    records = []
    plans = {}
    for label, solver, eps in solver_runs(cfg):
        rec = TimingRecord(label, cfg.kind, n, m, cfg.repetitions)
        records.append(rec)
        times = []
        try:
            for _ in range(cfg.repetitions):
                result, dt = _timed(lambda: run_solver(solver, p, eps, cost=cost))
                times.append(dt)
        except FloatingPointError as e:
            rec.status = f"failed: {e}"
            log.warning("%s at size %s failed: %s", label, size, e)
            continue
        w1, plan, trace = result
        plans[label] = plan
        if out is not None:
            _write_csv(Path(out) / f"trace_{label}_{n}x{m}.csv", TRACE_FIELDS, trace.rows())
        rec.w1 = w1
        rec.median_time = statistics.median(times)
        rec.mean_time = statistics.fmean(times)
        if exact is not None:
            rec.oracle_w1 = exact
            rec.oracle_error = abs(w1 - exact) / abs(exact) if exact else abs(w1)
    ref = plans.get("ipot")
    ipot = next((r for r in records if r.solver == "ipot" and r.ok), None)
    for rec in records:
        if ref is not None and rec.solver in plans and p.u.size <= MAX_COMPARE_POINTS:
            rec.plan_frobenius_vs_ipot = compare_plans(plans[rec.solver], ref)
        if ipot is not None and rec.ok:
            rec.speedup_vs_ipot = ipot.median_time / rec.median_time
    return records


def run_experiment(cfg):
    """Run every (size, solver) cell; returns the summary CSV path."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = [int(s) for s in cfg.sizes]
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and not cfg.timing and len(sizes) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(run_size, [cfg] * len(sizes), sizes, [out] * len(sizes)))
    else:
        chunks = [run_size(cfg, s, out) for s in sizes]
    summary = out / "summary.csv"
    _write_csv(summary, SUMMARY_FIELDS, [r.row() for chunk in chunks for r in chunk])
    return summary


def read_summary(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
