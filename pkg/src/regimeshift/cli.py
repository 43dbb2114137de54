"""Command-line interface: ``regimeshift <command> [options]``.

Exit codes: 0 success, 1 certificate failure or unexpected error,
2 configuration error, 3 training/numerical error, 4 no candidate (screen).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import RegimeShiftError

log = logging.getLogger("regimeshift")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="named preset, e.g. malthus-desk or vanderpol-full")
    p.add_argument("--config", type=Path, help="key = value config file (applied after --preset)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--workers", type=int, help="worker processes (overrides run.workers)")
    p.add_argument("--out", type=Path, help="output directory (overrides run.output_dir)")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regimeshift",
                                 description="Change-point detection in regime-switching ODEs.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a benchmark and write observations as CSV")
    _common(p)
    p.add_argument("--data-out", type=Path, help="CSV path (default <out>/data.csv)")

    p = sub.add_parser("screen", help="Stage I: local fits, scores and candidate clusters")
    _common(p)
    p.add_argument("--data", type=Path, help="dataset CSV (default: simulate from the config)")

    p = sub.add_parser("refine", help="Stage II on the clusters of a screen report")
    _common(p)
    p.add_argument("--screen", type=Path, required=True, help="screen.json from 'screen'")
    p.add_argument("--data", type=Path, help="dataset CSV (default: simulate from the config)")

    p = sub.add_parser("run", help="full pipeline with report, tables and figures")
    _common(p)
    p.add_argument("--data", type=Path, help="dataset CSV (default: simulate from the config)")

    p = sub.add_parser("certify", help="exact residual-floor certificates for the window plan")
    _common(p)

    p = sub.add_parser("baseline", help="PELT and EM-GMM on the Stage I window estimates")
    _common(p)
    p.add_argument("--screen", type=Path, required=True, help="screen.json from 'screen'")

    p = sub.add_parser("bench", help="parallel scaling or compiled-kernel benchmark")
    _common(p)
    p.add_argument("--kind", choices=("parallel", "kernels"), default="parallel")
    p.add_argument("--tasks", type=int, help="number of equal tasks (overrides bench.tasks)")
    p.add_argument("--worker-counts", help="comma list (overrides bench.workers)")
    p.add_argument("--iterations", type=int, help="iterations per task (overrides bench.iterations)")
    return ap


def _config(args):
    from .config import load_config

    overrides = list(args.overrides)
    if getattr(args, "data", None) is not None:
        overrides.append(f"data.path={args.data}")
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    if args.out is not None:
        overrides.append(f"run.output_dir={args.out}")
    return load_config(args.config, args.preset, overrides)


def _outdir(cfg) -> Path:
    out = Path(cfg["run.output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args, cfg) -> int:
    from .pipeline import load_or_simulate
    from .simulate import write_dataset

    ds, _ = load_or_simulate(cfg)
    path = args.data_out or _outdir(cfg) / "data.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, path)
    print(f"wrote {path} ({len(ds.obs_times)} observations)")
    return 0


def _cmd_screen(args, cfg) -> int:
    from .pipeline import load_or_simulate, require_candidates, screen_stage

    ds, _ = load_or_simulate(cfg)
    rep = screen_stage(cfg, ds)
    out = _outdir(cfg)
    rep.to_json(out / "screen.json")
    rep.to_csv(out / "screen.csv")
    for c in rep.clusters:
        print(f"candidate {c.interval[0]:g}..{c.interval[1]:g} (top window {c.k_star}, "
              f"Z = {rep.Z[c.k_star]:.3g})")
    require_candidates(rep)
    return 0


def _cmd_refine(args, cfg) -> int:
    from .pipeline import load_or_simulate, refine_stage, require_candidates, write_json
    from .screen import ScreenReport

    rep = ScreenReport.from_json(args.screen)
    require_candidates(rep)
    ds, _ = load_or_simulate(cfg)
    results = refine_stage(cfg, ds, rep)
    out = _outdir(cfg)
    write_json({"schema": 1, "results": [r.to_dict() for r in results]}, out / "refine.json")
    for r in results:
        print(f"[{r.interval[0]:g}, {r.interval[1]:g}]: tau = {r.tau_hat:.4f}, "
              f"theta- = {r.theta_minus.tolist()}, theta+ = {r.theta_plus.tolist()}")
    return 0


def _cmd_run(args, cfg) -> int:
    from .pipeline import run_pipeline

    res = run_pipeline(cfg)
    est = res.report["estimate"]
    print(f"change points: {[round(t, 4) for t in est['change_points']]}")
    print(f"regimes: {est['regimes']}")
    if "errors" in res.report:
        print(f"parameter MSE: {res.report['errors']['mse_parameters']:.3e}")
    print(f"report: {res.outdir / 'report.json'}")
    return 0


def _cmd_certify(args, cfg) -> int:
    from .oracle import certify_plan, write_certificates
    from .pipeline import _cert_summary, load_or_simulate, truth_trajectory, write_json

    ds, traj = load_or_simulate(cfg)
    ref = truth_trajectory(cfg, ds, traj)
    if ref is None:
        raise RegimeShiftError("certification needs a known schedule and initial state")
    plan = cfg.plan(ref.schedule.horizon)
    certs = certify_plan(plan.windows, ref, cfg.system, ref.schedule)
    out = _outdir(cfg)
    write_certificates(certs, out / "certificates.csv")
    summary = _cert_summary(certs, ref.schedule.breakpoints)
    write_json(summary, out / "certificates.json")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary["all_passed"] and summary["argmax_contains_change"] else 1


def _cmd_baseline(args, cfg) -> int:
    from .baselines import run_baselines
    from .screen import ScreenReport

    rep = ScreenReport.from_json(args.screen)
    schedule = None if cfg["data.path"] else cfg.schedule()
    res = run_baselines(rep.plan.centers(), rep.theta_hat, cfg["baseline.psi"], cfg["baseline.gmm_k"],
                        len(rep.clusters) or None, cfg["baseline.gmm_iters"],
                        cfg["baseline.gmm_restarts"], cfg["run.seed"], schedule)
    out = _outdir(cfg)
    res.to_json(out / "baselines.json")
    print(f"PELT change times: {list(res.pelt_times)}")
    print(f"EM-GMM peaks: {list(res.gmm.probability.peaks)}")
    return 0


def _cmd_bench(args, cfg) -> int:
    from .pipeline import write_json

    out = _outdir(cfg)
    if args.kind == "kernels":
        from .bench import bench_kernels

        res = bench_kernels(cfg["system.name"], cfg["screen.hidden_layers"], cfg["screen.width"],
                            n_col=cfg["screen.collocation_count"])
        write_json(res, out / "bench_kernels.json")
        print(json.dumps(res, indent=2, sort_keys=True))
        return 0
    from .pipeline import bench_parallel

    counts = [int(p) for p in args.worker_counts.split(",")] if args.worker_counts else None
    reps = bench_parallel(cfg, counts, args.tasks, args.iterations)
    write_json([r.to_dict() for r in reps], out / "bench_parallel.json")
    print(f"{'P':>3} {'T_p':>9} {'model':>9} {'S':>6} {'E':>5}")
    for r in reps:
        print(f"{r.P:>3} {r.T_p:>9.3f} {r.predicted_T_p:>9.3f} {r.speedup:>6.2f} {r.efficiency:>5.2f}")
    if reps and reps[0].cores < max(r.P for r in reps):
        print(f"note: only {reps[0].cores} core(s) available")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "screen": _cmd_screen,
    "refine": _cmd_refine,
    "run": _cmd_run,
    "certify": _cmd_certify,
    "baseline": _cmd_baseline,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return _COMMANDS[args.command](args, cfg)
    except RegimeShiftError as exc:
        print(f"regimeshift {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
