"""``colt-ot`` command line.

Exit codes: 0 success, 1 invalid input, 2 numerical failure in a solver,
3 file I/O problem.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import bench
from .colt import DenseGuardError
from .data import (
    MIXTURE_A,
    MIXTURE_B,
    GridSpec1D,
    PgmError,
    gaussian_mixture,
    image_marginal,
    load_pgm,
    read_csv_vector,
    rescale,
    uniform_random_2d,
)
from .oracles import MAX_LP_SIDE, lp_transport_exact, w1_1d_exact
from .solvers import Problem1D, Problem2D, ipot_dense

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("colt_ot")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _fmt(x):
    return format(x, ".17g")


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def _solver_options(p, default_outer=500):
    p.add_argument("--solver", default="fs2", choices=bench.SOLVERS)
    p.add_argument("--delta", type=_positive(float), default=1.0,
                   help="proximal step size (default 1)")
    p.add_argument("--epsilon", type=_positive(float), default=1 / 80,
                   help="entropic regularization for sinkhorn/fs1, relative to a unit-length domain")
    p.add_argument("--inner", type=_positive(int), default=20, metavar="L",
                   help="scaling sweeps per outer step")
    p.add_argument("--outer", type=_positive(int), default=default_outer,
                   help="outer steps (total iterations = outer * L)")
    p.add_argument("--eta", type=_positive(float), default=1e-5,
                   help="positivity shift applied to the marginals")
    p.add_argument("--oracle", action="store_true",
                   help="also compute a reference value and report the error")
    p.add_argument("--out", help="write the convergence trace CSV here")


def build_parser():
    parser = _Parser(prog="colt-ot", description="Linear-time Wasserstein-1 solvers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("w1-1d", help="W1 between two 1D histograms")
    p.add_argument("--n", type=int, default=100, help="grid nodes for the built-in mixtures")
    p.add_argument("--u", help="CSV file with the source histogram (one value per line)")
    p.add_argument("--v", help="CSV file with the target histogram")
    p.add_argument("--h", type=_positive(float), help="grid spacing (default: [0, 100] split evenly)")
    _solver_options(p)

    p = sub.add_parser("w1-2d", help="W1 between two random fields on an n x m grid")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h1", type=_positive(float), default=0.1)
    p.add_argument("--h2", type=_positive(float), default=0.1)
    _solver_options(p)

    p = sub.add_parser("image-w1", help="W1 between two grayscale PGM images")
    p.add_argument("images", nargs="*", help="two PGM files (default: the bundled pair)")
    p.add_argument("--n", type=int, default=32, help="block-average both images to n x n")
    p.add_argument("--h", type=_positive(float), default=0.1, help="pixel spacing")
    _solver_options(p)

    p = sub.add_parser("bench", help="run an experiment grid and write CSV tables")
    p.add_argument("--kind", default="gaussian1d", choices=bench.KINDS)
    p.add_argument("--n", type=int, nargs="+", default=[100], help="problem sizes")
    p.add_argument("--solver", nargs="+", default=["fs2", "ipot"], choices=bench.SOLVERS)
    p.add_argument("--delta", type=_positive(float), default=1.0)
    p.add_argument("--epsilon", type=_positive(float), nargs="+", default=[1 / 20, 1 / 80, 1 / 320])
    p.add_argument("--inner", type=_positive(int), default=20, metavar="L")
    p.add_argument("--outer", type=_positive(int),
                   help="outer steps (default 500, or 10 with --timing)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta", type=_positive(float), default=1e-5)
    p.add_argument("--reps", type=_positive(int), default=1)
    p.add_argument("--h", type=_positive(float), default=0.1, help="2D grid spacing")
    p.add_argument("--images", nargs=2, metavar="PGM")
    p.add_argument("--timing", action="store_true",
                   help="timing run: sequential cells and 10 outer steps by default")
    p.add_argument("--out", default="results")

    p = sub.add_parser("fit", help="fit log(time) = slope * log(size) + c")
    p.add_argument("summary", nargs="?", help="summary.csv written by 'bench'")
    p.add_argument("--solver", default="fs2")
    p.add_argument("--sizes", type=float, nargs="+")
    p.add_argument("--times", type=float, nargs="+")
    return parser


def _report(label, w1, trace, args, reference=None, ref_name=None):
    print(f"solver: {label}")
    print(f"w1: {_fmt(w1)}")
    if trace is not None and len(trace):
        print(f"iterations: {trace.iterations[-1]}")
        print(f"col_residual: {_fmt(trace.col_residual[-1])}")
    if reference is not None:
        print(f"{ref_name}: {_fmt(reference)}")
        rel = abs(w1 - reference) / abs(reference) if reference else abs(w1)
        print(f"relative_error: {_fmt(rel)}")
    if args.out and trace is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        bench._write_csv(out / f"trace_{label}.csv", bench.TRACE_FIELDS, trace.rows())
    if not math.isfinite(w1):
        return EXIT_NUMERIC
    return EXIT_OK


def _solve(args, p):
    eps = args.epsilon if args.solver in ("sinkhorn", "fs1") else None
    w1, _, trace = bench.run_solver(args.solver, p, eps)
    return w1, trace


def cmd_w1_1d(args):
    if args.u or args.v:
        if not (args.u and args.v):
            raise ValueError("--u and --v must be given together")
        u = rescale(read_csv_vector(args.u), args.eta)
        v = rescale(read_csv_vector(args.v), args.eta)
        if u.size != v.size:
            raise ValueError(f"histograms differ in length: {u.size} vs {v.size}")
        h = args.h or 1.0
    else:
        grid = GridSpec1D(0.0, 100.0, args.n)
        u = rescale(gaussian_mixture(*MIXTURE_A, grid), args.eta)
        v = rescale(gaussian_mixture(*MIXTURE_B, grid), args.eta)
        h = args.h or grid.h
    p = Problem1D(u, v, h, args.delta, args.inner, args.outer)
    w1, trace = _solve(args, p)
    ref = w1_1d_exact(u, v, h) if args.oracle else None
    return _report(args.solver, w1, trace, args, ref, "exact_w1")


def _oracle_2d(p):
    if p.u.size <= MAX_LP_SIDE:
        return lp_transport_exact(p.u, p.v, p.cost()).objective, "lp_w1"
    # too large for the LP; fall back to the dense IPOT baseline
    return ipot_dense(p)[0], "ipot_w1"


def cmd_w1_2d(args):
    if args.n < 2 or args.m < 2:
        raise ValueError("grid must be at least 2 x 2")
    u = rescale(uniform_random_2d(args.n, args.m, args.seed), args.eta)
    v = rescale(uniform_random_2d(args.n, args.m, args.seed + 1), args.eta)
    p = Problem2D(u, v, args.n, args.m, args.h1, args.h2, args.delta, args.inner, args.outer)
    w1, trace = _solve(args, p)
    ref, name = _oracle_2d(p) if args.oracle else (None, None)
    return _report(args.solver, w1, trace, args, ref, name)


def cmd_image_w1(args):
    if args.images and len(args.images) != 2:
        raise ValueError("give exactly two image paths")
    a, b = args.images or bench.bundled_images()
    imgs = [load_pgm(path) for path in (a, b)]
    if args.n < 2:
        raise ValueError("--n must be at least 2")
    imgs = [bench._fit_image(img, args.n) for img in imgs]
    u, v = (image_marginal(img, args.eta) for img in imgs)
    p = Problem2D(u, v, args.n, args.n, args.h, args.h, args.delta, args.inner, args.outer)
    w1, trace = _solve(args, p)
    ref, name = _oracle_2d(p) if args.oracle else (None, None)
    return _report(args.solver, w1, trace, args, ref, name)


def cmd_bench(args):
    cfg = bench.ExperimentConfig(
        kind=args.kind, sizes=args.n, solvers=args.solver, delta=args.delta,
        epsilons=args.epsilon, L=args.inner,
        itr_max=args.outer or (10 if args.timing else 500),
        seed=args.seed, repetitions=args.reps, out=args.out, timing=args.timing,
        eta=args.eta, spacing=args.h, images=tuple(args.images) if args.images else None,
    )
    summary = bench.run_experiment(cfg)
    rows = bench.read_summary(summary)
    for r in rows:
        print(f"{r['solver']:>14} {r['n']:>6}x{r['m']:<4} {r['status']:>6}  w1={r['w1']}  "
              f"time={r['median_time']}")
    print(f"summary: {summary}")
    return EXIT_NUMERIC if any(r["status"] != "ok" for r in rows) else EXIT_OK


def cmd_fit(args):
    if args.summary:
        rows = [r for r in bench.read_summary(args.summary)
                if r["solver"] == args.solver and r["status"] == "ok"]
        sizes = [float(r["points"]) for r in rows]
        times = [float(r["median_time"]) for r in rows]
    elif args.sizes and args.times:
        sizes, times = args.sizes, args.times
    else:
        raise ValueError("give a summary CSV or both --sizes and --times")
    slope, intercept, r2 = bench.fit_complexity(sizes, times)
    print(f"slope: {_fmt(slope)}")
    print(f"intercept: {_fmt(intercept)}")
    print(f"r2: {_fmt(r2)}")
    return EXIT_OK


COMMANDS = {
    "w1-1d": cmd_w1_1d,
    "w1-2d": cmd_w1_2d,
    "image-w1": cmd_image_w1,
    "bench": cmd_bench,
    "fit": cmd_fit,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FloatingPointError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, PgmError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, KeyError, DenseGuardError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
