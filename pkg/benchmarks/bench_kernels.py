"""Compare the compiled PINN kernel with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--system vanderpol] [--width 32] [--repeats 1000]

Prints microseconds per loss+gradient evaluation for each backend, the
speedup of the compiled kernel, and the largest output difference.
"""
import argparse
import json

from regimeshift.bench import bench_kernels
from regimeshift.dynamics import SYSTEMS


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--system", choices=sorted(SYSTEMS), default=None,
                    help="one system (default: all)")
    ap.add_argument("--hidden-layers", type=int, default=4)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--n-obs", type=int, default=21)
    ap.add_argument("--n-col", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=1000)
    ap.add_argument("--json", action="store_true", help="print raw JSON")
    args = ap.parse_args()
    systems = [args.system] if args.system else sorted(SYSTEMS)
    rows = [bench_kernels(s, args.hidden_layers, args.width, args.n_obs, args.n_col, args.repeats)
            for s in systems]
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'system':<16}{'numpy µs':>10}{'cython µs':>11}{'speedup':>9}{'max |diff|':>12}")
    def fmt(v, spec):
        return "n/a" if v is None else format(v, spec)

    for r in rows:
        us = r["us_per_call"]
        print(f"{r['system']:<16}{us['python']:>10.1f}{fmt(us.get('cython'), '.1f'):>11}"
              f"{fmt(r['speedup'], '.2f'):>9}{fmt(r['max_abs_diff'], '.1e'):>12}")

if __name__ == "__main__":
    main()
