"""Parallel scaling of Stage I: K equal window fits at several worker counts.

    python3 benchmarks/bench_parallel.py [--preset malthus-desk] [--tasks 32] [--workers 1,2,4,8]

Equivalent to ``regimeshift bench --kind parallel``; prints measured and
modelled times, speedup and efficiency.
"""
import argparse

from regimeshift.config import preset
from regimeshift.pipeline import bench_parallel


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="malthus-desk")
    ap.add_argument("--tasks", type=int, default=32)
    ap.add_argument("--workers", default="1,2,4,8")
    ap.add_argument("--iterations", type=int, default=500)
    args = ap.parse_args()
    reps = bench_parallel(preset(args.preset), [int(p) for p in args.workers.split(",")],
                          args.tasks, args.iterations)
    print(f"K = {args.tasks} tasks, {reps[0].cores} core(s) available")
    print(f"{'P':>3}{'T_p (s)':>10}{'model (s)':>11}{'S':>7}{'E':>6}")
    for r in reps:
        print(f"{r.P:>3}{r.T_p:>10.2f}{r.predicted_T_p:>11.2f}{r.speedup:>7.2f}{r.efficiency:>6.2f}")


if __name__ == "__main__":
    main()
