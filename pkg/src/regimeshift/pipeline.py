"""End-to-end orchestration: simulate → Stage I screen → Stage II refine → report.

The JSON report is a pure function of the configuration and seeds: it holds
no timestamps, no wall-clock timings (those go to ``timing.json``), and
neither the output directory nor the worker count.
"""
from __future__ import annotations

import json
import math
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .baselines import run_baselines
from .config import RunConfig
from .errors import NoCandidateError, RegimeShiftError
from .local_pinn import fit_window
from .oracle import certify_plan, write_certificates
from .refine import Candidate, RefineResult, refine
from .screen import ScreenReport, map_tasks, run_screen
from .simulate import integrate, read_dataset, sample_observations, snap_schedule, write_dataset

__all__ = [
    "PipelineResult",
    "TimingReport",
    "load_or_simulate",
    "truth_trajectory",
    "screen_stage",
    "refine_stage",
    "aggregate_estimates",
    "estimate_errors",
    "run_pipeline",
    "bench_parallel",
    "available_cores",
    "write_json",
]


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@contextmanager
def _stage(name: str):
    """Prefix errors raised inside a stage with the stage name."""
    try:
        yield
    except RegimeShiftError as exc:
        msg = exc.args[0] if exc.args else str(exc)
        exc.args = (f"[{name}] {msg}",) + exc.args[1:]
        raise


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


# --------------------------------------------------------------------------- stages


def load_or_simulate(cfg: RunConfig):
    """Return ``(dataset, trajectory)``; the trajectory is None for loaded data."""
    system = cfg.system
    if cfg["data.path"]:
        ds = read_dataset(cfg["data.path"], system.state_dim)
        return ds, None
    sched = snap_schedule(cfg.schedule(), cfg["data.dt"])
    traj = integrate(system, sched, cfg.x0(), cfg["data.dt"])
    ds = sample_observations(traj, cfg["data.dt_obs"], cfg["data.noise_sigma"], cfg["data.seed"])
    return ds, traj


def truth_trajectory(cfg: RunConfig, dataset, trajectory=None):
    """Noise-free reference trajectory for the oracle, or None if unknown."""
    if trajectory is not None:
        return trajectory
    sched = dataset.schedule or cfg.schedule()
    x0 = dataset.x0 if dataset.x0 is not None else None
    dt = dataset.dt or cfg["data.dt"]
    if sched is None or x0 is None:
        return None
    return integrate(cfg.system, snap_schedule(sched, dt), x0, dt)


def screen_stage(cfg: RunConfig, dataset, workers: int | None = None) -> ScreenReport:
    with _stage("stage I"):
        t0, T = float(dataset.obs_times[0]), float(dataset.obs_times[-1])
        hz = cfg.horizon() or (t0, T)
        return run_screen(dataset, cfg.system, cfg.plan(hz), cfg.train_config(),
                          cfg["screen.gamma"], workers or cfg["run.workers"], cfg["run.seed"],
                          cfg["screen.epsilon"], cfg.theta_init())


def _refine_task(shared, cand: Candidate) -> RefineResult:
    dataset, system_name, rcfg, seed = shared
    try:
        return refine(dataset, system_name, cand, rcfg, seed)
    except RegimeShiftError as exc:
        lo, hi = cand.interval
        exc.args = (f"candidate [{lo}, {hi}]: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def candidates_from_screen(report: ScreenReport) -> list[Candidate]:
    out = []
    for c in sorted(report.clusters, key=lambda c: c.interval):
        left, right = report.neighbor_thetas(c)
        out.append(Candidate(tuple(c.interval), tuple(map(float, left)), tuple(map(float, right)),
                             task_id=c.k_star))
    return out


def refine_stage(cfg: RunConfig, dataset, report: ScreenReport,
                 workers: int | None = None) -> list[RefineResult]:
    with _stage("stage II"):
        cands = candidates_from_screen(report)
        shared = (dataset, cfg.system.name, cfg.refine_config(), cfg["run.seed"])
        return map_tasks(_refine_task, shared, cands, workers or cfg["run.workers"])


def aggregate_estimates(results: list[RefineResult], report: ScreenReport) -> dict:
    """Piecewise-constant estimate from the per-candidate Stage II results.

    Change points are the τ̂ in time order.  The first regime is θ̂⁻ of the
    first candidate, the last θ̂⁺ of the last; an inner regime is estimated
    by two neighbouring candidates and their mean is reported.  Without
    candidates the single regime is the median of the window estimates.
    """
    if not results:
        return {"change_points": [], "regimes": [np.median(report.theta_hat, axis=0).tolist()]}
    res = sorted(results, key=lambda r: r.tau_hat)
    regimes = [res[0].theta_minus]
    for a, b in zip(res[:-1], res[1:]):
        regimes.append(0.5 * (a.theta_plus + b.theta_minus))
    regimes.append(res[-1].theta_plus)
    return {"change_points": [float(r.tau_hat) for r in res],
            "regimes": [[float(v) for v in r] for r in regimes]}


def estimate_errors(estimate: dict, schedule, param_names) -> dict:
    """Squared errors in table layout (one row per parameter and regime).

    Each true change point is paired with the nearest estimate; regimes are
    compared one-to-one when the counts agree, else by the estimate active at
    the midpoint of each true regime.
    """
    taus = estimate["change_points"]
    cp_rows = []
    for tau in schedule.breakpoints:
        if taus:
            est = min(taus, key=lambda t: abs(t - tau))
            cp_rows.append({"true": tau, "estimate": est, "squared_error": (est - tau) ** 2})
        else:
            cp_rows.append({"true": tau, "estimate": None, "squared_error": None})
    edges = [schedule.horizon[0], *schedule.breakpoints, schedule.horizon[1]]
    rows = []
    for r, truth in enumerate(schedule.regimes):
        if len(estimate["regimes"]) == len(schedule.regimes):
            est = estimate["regimes"][r]
        else:
            mid = 0.5 * (edges[r] + edges[r + 1])
            est = estimate["regimes"][int(np.searchsorted(taus, mid, side="right"))]
        for name, tv, ev in zip(param_names, truth, est):
            rows.append({"regime": r, "parameter": name, "true": tv, "estimate": ev,
                         "squared_error": (ev - tv) ** 2})
    return {"change_points": cp_rows, "parameters": rows,
            "mse_parameters": float(np.mean([row["squared_error"] for row in rows])),
            "mse_change_points": (float(np.mean([row["squared_error"] for row in cp_rows]))
                                  if cp_rows and all(r["squared_error"] is not None for r in cp_rows)
                                  else None)}


def _cert_summary(certs, true_breakpoints) -> dict:
    floors = np.array([c.floor for c in certs])
    k = int(np.argmax(floors))
    a, b = certs[k].window
    crossing = [c for c in certs if c.crossing]
    return {
        "windows": len(certs),
        "crossing_windows": len(crossing),
        "all_passed": bool(all(c.passed for c in certs)),
        "min_margin": float(min(c.margin for c in certs)),
        "max_noncrossing_floor": float(max([c.floor for c in certs if not c.crossing], default=0.0)),
        "argmax_window": [a, b],
        "argmax_contains_change": bool(any(a < t < b for t in true_breakpoints)),
    }


def _tables(outdir: Path, errors: dict) -> None:
    import csv

    with open(outdir / "parameters.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regime", "parameter", "true", "estimate", "squared_error"])
        for r in errors["parameters"]:
            w.writerow([r["regime"], r["parameter"], repr(r["true"]), repr(r["estimate"]),
                        repr(r["squared_error"])])
    with open(outdir / "change_points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true", "estimate", "squared_error"])
        for r in errors["change_points"]:
            w.writerow([repr(r["true"]), repr(r["estimate"]), repr(r["squared_error"])])


def _config_record(cfg: RunConfig) -> dict:
    skip = {"run.output_dir", "run.workers"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.values.items() if k not in skip}


@dataclass
class PipelineResult:
    report: dict
    screen: ScreenReport
    refine: list
    timing: dict
    outdir: Path | None


def run_pipeline(cfg: RunConfig, outdir=None, workers: int | None = None,
                 write: bool = True) -> PipelineResult:
    """Run every enabled stage and (optionally) write the report files."""
    system = cfg.system
    out = Path(outdir if outdir is not None else cfg["run.output_dir"])
    if write:
        out.mkdir(parents=True, exist_ok=True)
    P = workers or cfg["run.workers"]
    timing = {"workers": P, "cores": available_cores(), "stages": {}}

    t = time.perf_counter()
    with _stage("data"):
        dataset, traj = load_or_simulate(cfg)
    timing["stages"]["data"] = time.perf_counter() - t
    schedule = dataset.schedule or cfg.schedule()
    hz = cfg.horizon() or (float(dataset.obs_times[0]), float(dataset.obs_times[-1]))

    t = time.perf_counter()
    screen = screen_stage(cfg, dataset, P)
    timing["stages"]["screen"] = time.perf_counter() - t

    results: list[RefineResult] = []
    if cfg["refine.enabled"] and screen.clusters:
        t = time.perf_counter()
        results = refine_stage(cfg, dataset, screen, P)
        timing["stages"]["refine"] = time.perf_counter() - t
    estimate = aggregate_estimates(results, screen)

    truth = None
    if schedule is not None:
        truth = {"breakpoints": list(schedule.breakpoints),
                 "regimes": [list(r) for r in schedule.regimes]}
    report = {
        "schema": 1,
        "system": system.name,
        "horizon": list(hz),
        "config": _config_record(cfg),
        "dataset": dataset.provenance(),
        "screen": screen.to_dict(),
        "refine": [],
        "estimate": estimate,
        "truth": truth,
    }
    for r in results:
        tr = None
        if schedule is not None:
            # the true change point nearest to τ̂ and its adjacent regimes
            j = int(np.argmin([abs(b - r.tau_hat) for b in schedule.breakpoints])) \
                if schedule.breakpoints else None
            if j is not None:
                tr = {"tau": schedule.breakpoints[j], "theta_minus": schedule.regimes[j],
                      "theta_plus": schedule.regimes[j + 1]}
        report["refine"].append(r.to_dict(tr))
    if schedule is not None:
        report["errors"] = estimate_errors(estimate, schedule, system.param_names)

    certs = None
    if cfg["run.certify"] and schedule is not None:
        t = time.perf_counter()
        with _stage("oracle"):
            ref = truth_trajectory(cfg, dataset, traj)
            if ref is not None:
                certs = certify_plan(screen.plan.windows, ref, system, ref.schedule)
                report["certificates"] = _cert_summary(certs, ref.schedule.breakpoints)
        timing["stages"]["oracle"] = time.perf_counter() - t

    baseline = None
    if cfg["baseline.enabled"]:
        t = time.perf_counter()
        with _stage("baselines"):
            n_peaks = len(screen.clusters) or None
            baseline = run_baselines(screen.plan.centers(), screen.theta_hat, cfg["baseline.psi"],
                                     cfg["baseline.gmm_k"], n_peaks, cfg["baseline.gmm_iters"],
                                     cfg["baseline.gmm_restarts"], cfg["run.seed"], schedule)
            bd = baseline.to_dict()
            report["baselines"] = {
                "pelt_change_times": bd["pelt"]["change_times"],
                "gmm_peaks": bd["gmm"]["probability"]["peaks"],
                "gmm_intervals": bd["gmm"]["probability"]["intervals"],
                "squared_errors": bd["squared_errors"],
            }
        timing["stages"]["baselines"] = time.perf_counter() - t

    if write:
        write_json(report, out / "report.json")
        screen.to_json(out / "screen.json")
        screen.to_csv(out / "screen.csv")
        write_dataset(dataset, out / "data.csv")
        if "errors" in report:
            _tables(out, report["errors"])
        if certs is not None:
            write_certificates(certs, out / "certificates.csv")
        if baseline is not None:
            baseline.to_json(out / "baselines.json")
        if cfg["run.plots"]:
            from .plots import emit_plots

            emit_plots(report, out, dataset)
        write_json(timing, out / "timing.json")
    return PipelineResult(report, screen, results, timing, out if write else None)


# --------------------------------------------------------------------------- parallel bench


@dataclass(frozen=True)
class TimingReport:
    stage: str
    K: int
    P: int
    T_s: float
    T_p: float
    speedup: float
    efficiency: float
    predicted_T_p: float
    model_rel_err: float
    t_sub: float
    c2: float
    T_s_estimated: bool
    cores: int

    def to_dict(self) -> dict:
        return asdict(self)


def _timed_fit(shared, arg):
    dataset, system, tcfg, seed = shared
    k, window = arg
    t = time.perf_counter()
    fit = fit_window(dataset, window, system, tcfg, None, seed, window_id=k)
    return time.perf_counter() - t, float(fit.terminal_median)


def bench_parallel(cfg: RunConfig, worker_counts=None, tasks: int | None = None,
                   iterations: int | None = None, window=None) -> list[TimingReport]:
    """Time ``K`` equal window fits at each worker count and compare to the model.

    Every task fits the same window (different initialisations), so tasks
    cost the same.  ``P = 1`` is measured first and fixes the model
    ``T_p = ⌈K/P⌉·t_sub + c2``: ``t_sub`` is the mean in-task time and
    ``c2 = T_1 − K·t_sub`` the serial overhead (floored at 0).
    """
    K = int(tasks or cfg["bench.tasks"])
    counts = list(worker_counts or cfg["bench.workers"])
    if 1 not in counts:
        counts = [1] + counts
    counts = sorted(set(int(p) for p in counts))
    dataset, _ = load_or_simulate(cfg)
    tcfg = cfg.train_config()
    it = int(iterations or cfg["bench.iterations"])
    from .local_pinn import with_overrides

    tcfg = with_overrides(tcfg, iterations=it, median_window=min(tcfg.median_window, it))
    if window is None:
        window = cfg.plan((float(dataset.obs_times[0]), float(dataset.obs_times[-1]))).windows[0]
    shared = (dataset, cfg.system.name, tcfg, cfg["run.seed"])
    args = [(k, tuple(window)) for k in range(K)]
    cores = available_cores()
    measured = {}
    t_sub = c2 = None
    for P in counts:
        t = time.perf_counter()
        out = map_tasks(_timed_fit, shared, args, P)
        T = time.perf_counter() - t
        measured[P] = T
        if P == 1:
            t_sub = float(np.mean([o[0] for o in out]))
            c2 = max(T - K * t_sub, 0.0)
    T_s = measured[1]
    reports = []
    for P in counts:
        pred = math.ceil(K / P) * t_sub + c2
        S = T_s / measured[P]
        reports.append(TimingReport("screen", K, P, T_s, measured[P], S, S / P, pred,
                                    abs(pred - measured[P]) / measured[P], t_sub, c2, False, cores))
    return reports


def screen_reports_identical(cfg: RunConfig, worker_counts=(1, 2, 8)) -> bool:
    """Stage I JSON for each worker count is byte-identical."""
    dataset, _ = load_or_simulate(cfg)
    texts = {json.dumps(screen_stage(cfg, dataset, P).to_dict(), sort_keys=True)
             for P in worker_counts}
    return len(texts) == 1


def require_candidates(report: ScreenReport) -> None:
    if not report.clusters:
        raise NoCandidateError(f"no window exceeded Z ≥ {report.gamma:g} "
                             f"(max Z = {float(np.max(report.Z)):.3g})")
