import csv
import subprocess
import sys

import numpy as np
import pytest

from colt_ot import bench, cli
from colt_ot.bench import (
    ExperimentConfig,
    TimingRecord,
    build_problem,
    compare_plans,
    fit_complexity,
    run_experiment,
)
from colt_ot.colt import DenseGuardError, kernel_1d, to_dense
from colt_ot.data import write_pgm
from colt_ot.solvers import NumericalFailure, fs2, ipot_dense


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def stable(path, drop=bench.TIME_COLUMNS):
    rows = read_rows(path)
    return [{k: v for k, v in r.items() if k not in drop} for r in rows]


# --- fitting ---------------------------------------------------------------


def test_fit_linear():
    n = np.array([100, 200, 400, 800, 1600])
    slope, intercept, r2 = fit_complexity(n, 3e-6 * n)
    assert abs(slope - 1) <= 1e-12
    assert intercept == pytest.approx(np.log(3e-6))
    assert r2 == pytest.approx(1)


def test_fit_quadratic():
    n = np.array([10, 20, 40, 80])
    assert abs(fit_complexity(n, 0.5 * n ** 2)[0] - 2) <= 1e-12


def test_fit_errors():
    with pytest.raises(ValueError, match="three"):
        fit_complexity([1, 2], [1, 2])
    with pytest.raises(ValueError, match="positive"):
        fit_complexity([1, 2, 3], [1, 0, 2])
    with pytest.raises(ValueError, match="distinct"):
        fit_complexity([4, 4, 4], [1, 2, 3])


# --- plan comparison -------------------------------------------------------


def test_compare_identical():
    k = kernel_1d(6, 0.4)
    assert compare_plans(k, to_dense(k)) == 0


def test_compare_perturbation():
    a = np.full((5, 5), 0.04)
    b = a.copy()
    b[2, 3] += 1e-8
    assert compare_plans(a, b) == pytest.approx(1e-8, rel=1e-6)


def test_compare_shape_mismatch():
    with pytest.raises(ValueError, match="shapes"):
        compare_plans(np.zeros((3, 3)), np.zeros((4, 4)))


def test_compare_guard():
    with pytest.raises(DenseGuardError):
        compare_plans(kernel_1d(5000, 0.5), kernel_1d(5000, 0.5))


def test_fs2_vs_ipot_plans_n500():
    p = build_problem(ExperimentConfig(itr_max=20), 500)
    assert compare_plans(fs2(p)[1], ipot_dense(p)[1]) <= 1e-12


# --- configuration ---------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(solvers=[]),
    dict(sizes=[]),
    dict(solvers=["simplex"]),
    dict(kind="3d"),
    dict(repetitions=0),
    dict(sizes=[1]),
    dict(epsilons=[0.0]),
    dict(delta=-1.0),
])
def test_config_validation(kw, tmp_path):
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig(out=str(tmp_path), **kw))


def test_timing_record_positive_times():
    with pytest.raises(ValueError):
        TimingRecord("fs2", "gaussian1d", 10, 1, 1, median_time=0.0)


def test_solver_runs_expand_epsilons():
    cfg = ExperimentConfig(solvers=["fs2", "fs1"], epsilons=[0.05, 0.0125])
    assert [r[0] for r in bench.solver_runs(cfg)] == ["fs2", "fs1@0.05", "fs1@0.0125"]


# --- experiments -----------------------------------------------------------


def test_gaussian_experiment(tmp_path):
    cfg = ExperimentConfig(kind="gaussian1d", sizes=[100], solvers=["fs2", "ipot"], repetitions=3,
                           out=str(tmp_path))
    rows = read_rows(run_experiment(cfg))
    assert [r["solver"] for r in rows] == ["fs2", "ipot"]
    w = [float(r["w1"]) for r in rows]
    assert abs(w[0] - w[1]) <= 1e-10
    fs2_row, ipot_row = rows
    assert float(fs2_row["speedup_vs_ipot"]) == pytest.approx(
        float(ipot_row["median_time"]) / float(fs2_row["median_time"]))
    assert float(fs2_row["plan_frobenius_vs_ipot"]) <= 1e-12
    assert float(fs2_row["oracle_error"]) <= 1e-4
    assert all(float(r["median_time"]) > 0 and float(r["mean_time"]) > 0 for r in rows)


def test_random2d_trace(tmp_path):
    cfg = ExperimentConfig(kind="random2d", sizes=[8], solvers=["fs2"], itr_max=30, out=str(tmp_path))
    run_experiment(cfg)
    trace = read_rows(tmp_path / "trace_fs2_8x8.csv")
    assert len(trace) == 30
    times = [float(r["wall_time"]) for r in trace]
    assert all(a <= b for a, b in zip(times, times[1:]))
    assert [int(r["outer"]) for r in trace] == list(range(1, 31))


def test_deterministic_output(tmp_path):
    kw = dict(kind="random2d", sizes=[4, 5], solvers=["fs2", "ipot", "fs1"], itr_max=15,
              epsilons=[0.1])
    a = run_experiment(ExperimentConfig(out=str(tmp_path / "a"), **kw))
    b = run_experiment(ExperimentConfig(out=str(tmp_path / "b"), **kw))
    assert stable(a) == stable(b)
    for name in ("trace_fs2_5x5.csv", "trace_fs1@0.1_4x4.csv"):
        assert stable(tmp_path / "a" / name, ("wall_time",)) == stable(tmp_path / "b" / name, ("wall_time",))


def test_floats_have_17_digits(tmp_path):
    out = run_experiment(ExperimentConfig(sizes=[20], solvers=["fs2"], itr_max=5, out=str(tmp_path)))
    w1 = read_rows(out)[0]["w1"]
    assert float(w1) == float(format(float(w1), ".17g"))
    assert format(float(w1), ".17g") == w1


def test_parallel_workers_match(tmp_path, monkeypatch):
    kw = dict(kind="gaussian1d", sizes=[30, 40], solvers=["fs2"], itr_max=10)
    seq = run_experiment(ExperimentConfig(out=str(tmp_path / "s"), **kw))
    monkeypatch.setenv(bench.WORKERS_ENV, "2")
    par = run_experiment(ExperimentConfig(out=str(tmp_path / "p"), **kw))
    assert stable(seq) == stable(par)


def test_failed_solver_recorded(tmp_path, monkeypatch):
    real = bench.run_solver

    def flaky(name, p, epsilon=None, iters=None, cost=None):
        if name == "ipot":
            raise NumericalFailure("synthetic breakdown")
        return real(name, p, epsilon, iters, cost)

    monkeypatch.setattr(bench, "run_solver", flaky)
    rows = read_rows(run_experiment(ExperimentConfig(sizes=[20, 30], solvers=["ipot", "fs2"], itr_max=5,
                                                     out=str(tmp_path))))
    assert [r["status"] for r in rows] == ["failed: synthetic breakdown", "ok"] * 2
    assert rows[0]["w1"] == "" and rows[1]["w1"] != ""


def test_dense_paths_stay_outside_timed_regions(tmp_path, monkeypatch):
    from colt_ot import colt
    calls = []
    real = colt.check_dense_allowed

    def spy(n, max_n=colt.MAX_DENSE_N):
        calls.append(colt._in_timed_region.get())
        return real(n, max_n)

    monkeypatch.setattr(colt, "check_dense_allowed", spy)
    monkeypatch.setattr("colt_ot.oracles.check_dense_allowed", spy)
    run_experiment(ExperimentConfig(sizes=[16], solvers=["fs2", "ipot", "sinkhorn"], itr_max=5,
                                    epsilons=[0.1], out=str(tmp_path)))
    assert calls and not any(calls)


def test_image_experiment(tmp_path):
    rows = read_rows(run_experiment(ExperimentConfig(kind="images", sizes=[8], solvers=["fs2", "ipot"],
                                                     itr_max=50, out=str(tmp_path))))
    assert abs(float(rows[0]["w1"]) - float(rows[1]["w1"])) <= 1e-10


# --- command line ----------------------------------------------------------


def run_cli(*args):
    return cli.main(list(args))


def test_cli_w1_1d(capsys):
    assert run_cli("w1-1d", "--n", "50", "--outer", "200", "--oracle") == 0
    out = dict(line.split(": ") for line in capsys.readouterr().out.strip().splitlines())
    assert float(out["relative_error"]) <= 1e-4


def test_cli_w1_1d_csv(tmp_path, capsys):
    (tmp_path / "u.csv").write_text("1\n2\n3\n")
    (tmp_path / "v.csv").write_text("3\n2\n1\n")
    assert run_cli("w1-1d", "--u", str(tmp_path / "u.csv"), "--v", str(tmp_path / "v.csv"),
                   "--outer", "300", "--oracle", "--out", str(tmp_path / "o")) == 0
    assert (tmp_path / "o" / "trace_fs2.csv").exists()


@pytest.mark.parametrize("solver", ["fs1", "sinkhorn", "ipot"])
def test_cli_other_solvers(solver, capsys):
    assert run_cli("w1-1d", "--n", "20", "--outer", "5", "--solver", solver) == 0
    assert f"solver: {solver}" in capsys.readouterr().out


def test_cli_w1_2d(capsys):
    assert run_cli("w1-2d", "--n", "4", "--m", "3", "--outer", "50", "--oracle") == 0
    assert "lp_w1" in capsys.readouterr().out


def test_cli_image(capsys):
    assert run_cli("image-w1", "--n", "16", "--outer", "20") == 0
    out = capsys.readouterr().out
    assert np.isfinite(float(out.split("w1: ")[1].split()[0]))


def test_cli_image_custom(tmp_path, capsys):
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    write_pgm(a, np.arange(16).reshape(4, 4))
    write_pgm(b, np.arange(16)[::-1].reshape(4, 4), binary=False)
    assert run_cli("image-w1", str(a), str(b), "--n", "4", "--outer", "30", "--oracle") == 0


def test_cli_bench_and_fit(tmp_path, capsys):
    out = tmp_path / "res"
    assert run_cli("bench", "--n", "64", "128", "256", "--solver", "fs2", "--timing", "--reps", "2",
                   "--out", str(out)) == 0
    assert run_cli("fit", str(out / "summary.csv")) == 0
    text = capsys.readouterr().out
    assert "slope:" in text and "r2:" in text


def test_cli_fit_lists(capsys):
    assert run_cli("fit", "--sizes", "1", "2", "4", "--times", "1", "4", "16") == 0
    out = capsys.readouterr().out
    assert float(out.split("slope: ")[1].split()[0]) == pytest.approx(2, abs=1e-12)


@pytest.mark.parametrize("args", [
    ["w1-1d", "--n", "1"],
    ["w1-1d", "--delta", "0"],
    ["w1-1d", "--solver", "magic"],
    ["w1-2d", "--n", "1"],
    ["bench", "--n", "1"],
    ["fit", "--sizes", "1", "2", "--times", "1", "2"],
    ["fit"],
    ["image-w1", "only_one.pgm"],
    ["w1-1d", "--u", "x.csv"],
    [],
    ["unknown-command"],
])
def test_cli_validation_errors(args, capsys):
    with pytest.raises(SystemExit) as e:
        code = run_cli(*args)
        raise SystemExit(code)
    assert e.value.code == 1


def test_cli_numerical_failure(monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericalFailure("zero denominator")

    monkeypatch.setattr(bench, "run_solver", boom)
    assert run_cli("w1-1d", "--n", "10") == 2
    assert "numerical failure" in capsys.readouterr().err


def test_cli_io_errors(tmp_path, capsys):
    assert run_cli("image-w1", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm")) == 3
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n8 8\n255\n" + bytes(3))
    assert run_cli("image-w1", str(bad), str(bad)) == 3
    assert run_cli("w1-1d", "--u", str(tmp_path / "u.csv"), "--v", str(tmp_path / "v.csv")) == 3


def test_cli_too_large_for_dense_oracle(capsys):
    assert run_cli("w1-2d", "--n", "70", "--m", "70", "--outer", "1", "--oracle") == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "colt_ot", "fit", "--sizes", "1", "2", "3",
                          "--times", "1", "2", "3"], capture_output=True, text=True)
    assert res.returncode == 0
    assert float(res.stdout.split("slope: ")[1].split()[0]) == pytest.approx(1, abs=1e-12)
