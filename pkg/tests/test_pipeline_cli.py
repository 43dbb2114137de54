import json
import subprocess
import sys

import numpy as np
import pytest

from regimeshift.cli import main
from regimeshift.config import preset
from regimeshift.pipeline import bench_parallel, run_pipeline, screen_reports_identical
from regimeshift.plots import plot_scores

SMALL = ["system.horizon=30,50", "screen.iterations=300", "screen.median_window=50",
         "screen.width=8", "screen.hidden_layers=2", "screen.lr_theta=3e-3",
         "refine.iterations=300", "refine.width=8", "refine.hidden_layers=2"]


def small_args(*extra):
    out = ["--preset", "malthus-full"]
    for s in SMALL + list(extra):
        out += ["--set", s]
    return out


def small_cfg():
    return preset("malthus-full").with_overrides(SMALL)


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    assert main(["run", *small_args(), "--out", str(a)]) == 0
    assert main(["run", *small_args(), "--out", str(b), "--workers", "2"]) == 0
    return a, b


def test_run_outputs(two_runs):
    a, _ = two_runs
    for f in ["report.json", "screen.json", "screen.csv", "data.csv", "certificates.csv",
              "baselines.json", "parameters.csv", "change_points.csv", "timing.json",
              "trajectory.svg", "scores.svg", "parameters.svg"]:
        assert (a / f).exists(), f
    rep = json.loads((a / "report.json").read_text())
    assert len(rep["estimate"]["change_points"]) == len(rep["screen"]["clusters"]) >= 1
    assert "output_dir" not in json.dumps(rep["config"])
    assert rep["certificates"]["all_passed"]


def test_reports_are_byte_identical(two_runs):
    a, b = two_runs
    for f in ["report.json", "screen.json", "baselines.json", "parameters.csv",
              "change_points.csv", "scores.svg", "parameters.svg", "trajectory.svg"]:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    assert (a / "timing.json").exists()


def test_staged_commands(tmp_path):
    out = str(tmp_path)
    assert main(["simulate", *small_args(), "--out", out]) == 0
    data = tmp_path / "data.csv"
    assert data.exists()
    assert main(["screen", *small_args(), "--data", str(data), "--out", out]) == 0
    assert main(["refine", *small_args(), "--screen", str(tmp_path / "screen.json"),
                 "--data", str(data), "--out", out]) == 0
    ref = json.loads((tmp_path / "refine.json").read_text())
    assert 30 <= ref["results"][0]["tau_hat"] <= 50
    assert main(["baseline", *small_args(), "--screen", str(tmp_path / "screen.json"),
                 "--out", out]) == 0
    assert "pelt" in json.loads((tmp_path / "baselines.json").read_text())


def test_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["screen", *small_args("screen.gamma=1e30"), "--out", out]) == 4
    assert "no window" in capsys.readouterr().err
    assert main(["run", *small_args("no.such.key=1"), "--out", out]) == 2
    assert main(["run", "--preset", "nope", "--out", out]) == 2
    assert main(["run", *small_args("screen.divergence_threshold=1e-300"), "--out", out]) == 3
    assert main(["certify", *small_args(), "--out", out]) == 0
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "regimeshift", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "certify" in r.stdout


def test_bench_commands(tmp_path):
    out = str(tmp_path)
    assert main(["bench", *small_args(), "--kind", "kernels", "--out", out]) == 0
    res = json.loads((tmp_path / "bench_kernels.json").read_text())
    if res["speedup"] is not None:
        assert res["max_abs_diff"] < 1e-10
    assert main(["bench", *small_args(), "--tasks", "2", "--worker-counts", "1,2",
                 "--iterations", "100", "--out", out]) == 0


def test_bench_single_worker_speedup_is_one():
    (r,) = bench_parallel(small_cfg(), [1], tasks=3, iterations=100)
    assert r.P == 1 and r.speedup == 1.0 and r.efficiency == 1.0
    assert r.predicted_T_p == pytest.approx(r.T_p, rel=1e-12)


def test_screen_identical_across_workers():
    cfg = small_cfg().with_overrides(["system.horizon=36,44", "screen.iterations=150"])
    assert screen_reports_identical(cfg, (1, 2, 8))


def test_empty_candidate_plot_has_no_shading(tmp_path):
    plot_scores(np.arange(5.0), np.ones(5), tmp_path / "s.svg", intervals=())
    plot_scores(np.arange(5.0), np.ones(5), tmp_path / "t.svg", intervals=[(1.0, 3.0)])
    # the shading colour appears only when a candidate interval is drawn
    assert "#ff7f0e" not in (tmp_path / "s.svg").read_text()
    assert "#ff7f0e" in (tmp_path / "t.svg").read_text()


def test_run_pipeline_in_memory(tmp_path):
    res = run_pipeline(small_cfg(), tmp_path, workers=1)
    est = res.report["estimate"]
    assert all(30 < t < 50 for t in est["change_points"])
    assert res.outdir == tmp_path
