"""Stage I: overlapping windows, local fits, robust scoring and candidates.

Pipeline per dataset:

1. :func:`build_windows` covers ``[t0, T]`` with overlapping windows.
2. Each window is fitted independently (:func:`regimeshift.local_pinn.fit_window`),
   in parallel when ``workers > 1``; per-window seeds derive from
   ``(seed, k)`` so results do not depend on the worker count.
3. Terminal residual levels ``S_k`` are robustly standardized,
   ``Z_k = (S_k − median S) / (MAD S + ε)``.
4. Windows with ``Z_k ≥ γ`` are grouped into runs of consecutive indices; each
   run yields its top window ``k*`` and the candidate interval
   ``I_c = I_{k*−1} ∪ I_{k*} ∪ I_{k*+1}``.
"""
from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dynamics import get_system
from .errors import ConfigError, RegimeShiftError
from .local_pinn import LocalFit, TrainConfig, fit_window
from .oracle import residual_floor

__all__ = [
    "WindowPlan",
    "build_windows",
    "build_windows_from_partition",
    "window_crosses",
    "mad_normalize",
    "MadStats",
    "mad_stats",
    "Cluster",
    "select_candidates",
    "ScreenReport",
    "run_screen",
    "oracle_screen",
    "map_tasks",
]

DEFAULT_GAMMA = 3.0
DEFAULT_EPSILON = 1e-12


def _r(x: float) -> float:
    # window edges are sums of decimal steps; round away binary noise
    return round(float(x), 10)


@dataclass(frozen=True)
class WindowPlan:
    t0: float
    T: float
    window_len: float
    step: float
    windows: tuple[tuple[float, float], ...]

    @property
    def overlap(self) -> float:
        return self.window_len - self.step

    def __len__(self) -> int:
        return len(self.windows)

    def centers(self) -> np.ndarray:
        return np.array([0.5 * (a + b) for a, b in self.windows])

    def to_dict(self) -> dict:
        return {"t0": self.t0, "T": self.T, "window_len": self.window_len, "step": self.step,
                "overlap": self.overlap, "windows": [list(w) for w in self.windows]}

    @classmethod
    def from_dict(cls, d: dict) -> "WindowPlan":
        return cls(float(d["t0"]), float(d["T"]), float(d["window_len"]), float(d["step"]),
                   tuple((float(a), float(b)) for a, b in d["windows"]))


def build_windows(t0: float, T: float, window_len: float, step: float) -> WindowPlan:
    """Sliding windows ``[t0 + k·step, t0 + k·step + window_len]``.

    Windows are added until ``T`` is covered; the last window is shifted back
    to end exactly at ``T`` if needed.
    """
    t0, T, L, h = float(t0), float(T), float(window_len), float(step)
    if not (0 < h < L <= T - t0):
        raise ConfigError(f"need 0 < step < window_len ≤ T − t0 (got step={h}, len={L}, span={T - t0})")
    n_full = (T - t0 - L) / h
    K = int(math.ceil(n_full - 1e-9)) + 1
    wins = []
    for k in range(K):
        a = _r(t0 + k * h)
        b = _r(a + L)
        if b > T or k == K - 1:
            a, b = _r(T - L), _r(T)
        wins.append((a, b))
    return WindowPlan(t0, T, L, h, tuple(wins))


def build_windows_from_partition(t0: float, T: float, n_cells: int, delta: float) -> WindowPlan:
    """Partition-plus-overlap form: ``n_cells`` equal cells, each widened by ``delta``.

    Equivalent to sliding windows of length ``h + delta`` and step ``h`` with
    ``h = (T − t0)/n_cells``; the last window ends at ``T``.
    """
    if n_cells < 1 or not delta > 0:
        raise ConfigError("need n_cells ≥ 1 and delta > 0")
    h = (float(T) - float(t0)) / n_cells
    return build_windows(t0, T, h + delta, h)


def window_crosses(window: Sequence[float], tau: float, dt: float) -> bool:
    """True if ``tau`` lies inside ``window`` by more than half a grid cell on both sides."""
    a, b = window
    return (tau - a > 0.5 * dt) and (b - tau > 0.5 * dt)


@dataclass(frozen=True)
class MadStats:
    median: float
    mad: float
    denominator: float
    degenerate_guard: bool


def mad_stats(scores, epsilon: float = DEFAULT_EPSILON, guard: bool = False) -> MadStats:
    """Median, MAD and the denominator used for standardization.

    The plain denominator is ``MAD + ε``.  With ``guard=True``, a MAD below
    ``1e-15 · median`` is treated as degenerate and the denominator becomes
    ``max(ε, 1e-6 · median)`` so numerically equal scores are not flagged.
    """
    S = np.asarray(scores, dtype=float).ravel()
    if S.size == 0:
        raise ConfigError("no scores")
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    med = float(np.median(S))
    mad = float(np.median(np.abs(S - med)))
    if guard and mad < 1e-15 * abs(med):
        return MadStats(med, mad, max(epsilon, 1e-6 * abs(med)), True)
    return MadStats(med, mad, mad + epsilon, False)


def mad_normalize(scores, epsilon: float = DEFAULT_EPSILON, guard: bool = False) -> np.ndarray:
    """``Z_k = (S_k − median S) / (MAD S + ε)`` (see :func:`mad_stats` for ``guard``)."""
    st = mad_stats(scores, epsilon, guard)
    return (np.asarray(scores, dtype=float) - st.median) / st.denominator


@dataclass(frozen=True)
class Cluster:
    indices: tuple[int, ...]
    k_star: int
    window: tuple[float, float]
    interval: tuple[float, float]

    def to_dict(self) -> dict:
        return {"indices": list(self.indices), "k_star": self.k_star,
                "window": list(self.window), "interval": list(self.interval)}

    @classmethod
    def from_dict(cls, d: dict) -> "Cluster":
        return cls(tuple(int(i) for i in d["indices"]), int(d["k_star"]),
                   tuple(d["window"]), tuple(d["interval"]))


def select_candidates(plan: WindowPlan, scores, Z, gamma: float = DEFAULT_GAMMA) -> list[Cluster]:
    """Group ``{k : Z_k ≥ γ}`` into runs and pick each run's top window."""
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    S = np.asarray(scores, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if S.shape != (len(plan),) or Z.shape != (len(plan),):
        raise ConfigError("scores and Z must have one entry per window")
    cand = [k for k in range(len(plan)) if Z[k] >= gamma]
    runs: list[list[int]] = []
    for k in cand:
        if runs and k == runs[-1][-1] + 1:
            runs[-1].append(k)
        else:
            runs.append([k])
    out = []
    for run in runs:
        k_star = max(run, key=lambda k: (S[k], -k))
        lo, hi = max(k_star - 1, 0), min(k_star + 1, len(plan) - 1)
        out.append(Cluster(tuple(run), k_star, plan.windows[k_star],
                           (plan.windows[lo][0], plan.windows[hi][1])))
    return out


@dataclass
class ScreenReport:
    system: str
    plan: WindowPlan
    scores: np.ndarray
    scores_mean: np.ndarray
    Z: np.ndarray
    theta_hat: np.ndarray
    clusters: list[Cluster]
    gamma: float
    epsilon: float
    mad: MadStats
    seed: int
    train_config: dict
    restarts: list[int] = field(default_factory=list)
    fits: list[LocalFit] | None = field(default=None, repr=False, compare=False)

    @property
    def candidates(self) -> list[int]:
        return [k for c in self.clusters for k in c.indices]

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "system": self.system,
            "plan": self.plan.to_dict(),
            "S": [float(v) for v in self.scores],
            "S_mean": [float(v) for v in self.scores_mean],
            "Z": [float(v) for v in self.Z],
            "theta_hat": [[float(v) for v in row] for row in self.theta_hat],
            "candidates": self.candidates,
            "clusters": [c.to_dict() for c in self.clusters],
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "median": self.mad.median,
            "mad": self.mad.mad,
            "denominator": self.mad.denominator,
            "degenerate_mad_guard": self.mad.degenerate_guard,
            "seed": self.seed,
            "train_config": self.train_config,
            "restarts": list(self.restarts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScreenReport":
        return cls(
            system=d["system"],
            plan=WindowPlan.from_dict(d["plan"]),
            scores=np.asarray(d["S"], dtype=float),
            scores_mean=np.asarray(d.get("S_mean", d["S"]), dtype=float),
            Z=np.asarray(d["Z"], dtype=float),
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            clusters=[Cluster.from_dict(c) for c in d["clusters"]],
            gamma=float(d["gamma"]),
            epsilon=float(d["epsilon"]),
            mad=MadStats(float(d["median"]), float(d["mad"]), float(d["denominator"]),
                         bool(d["degenerate_mad_guard"])),
            seed=int(d["seed"]),
            train_config=dict(d["train_config"]),
            restarts=[int(v) for v in d.get("restarts", [])],
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "ScreenReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "a", "b", "S", "Z"])
            for k, (a, b) in enumerate(self.plan.windows):
                wr.writerow([k, repr(a), repr(b), repr(float(self.scores[k])), repr(float(self.Z[k]))])

    def neighbor_thetas(self, cluster: Cluster) -> tuple[np.ndarray, np.ndarray]:
        """θ̂ of the nearest windows entirely left / right of the candidate interval.

        Falls back to the outermost window of the interval at a domain edge.
        """
        lo, hi = cluster.interval
        left = [k for k, (a, b) in enumerate(self.plan.windows) if b <= lo + 1e-12]
        right = [k for k, (a, b) in enumerate(self.plan.windows) if a >= hi - 1e-12]
        kl = left[-1] if left else max(cluster.k_star - 1, 0)
        kr = right[0] if right else min(cluster.k_star + 1, len(self.plan) - 1)
        return self.theta_hat[kl].copy(), self.theta_hat[kr].copy()


# --- task execution ---------------------------------------------------------

_WORKER_STATE: dict = {}


def _init_worker(fn, shared) -> None:
    # keep BLAS single-threaded inside pool workers
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    _WORKER_STATE["fn"] = fn
    _WORKER_STATE["shared"] = shared


def _run_task(arg):
    return _WORKER_STATE["fn"](_WORKER_STATE["shared"], arg)


def map_tasks(fn: Callable, shared, args: Sequence, workers: int = 1) -> list:
    """``[fn(shared, a) for a in args]``, optionally in a process pool.

    ``shared`` is sent once per worker.  Results come back in input order.
    ``fn`` must be a module-level function.
    """
    if workers < 1:
        raise ConfigError("workers must be ≥ 1")
    if workers == 1 or len(args) <= 1:
        return [fn(shared, a) for a in args]
    methods = mp.get_all_start_methods()
    ctx = mp.get_context("fork" if "fork" in methods else "spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                             initializer=_init_worker, initargs=(fn, shared)) as ex:
        return list(ex.map(_run_task, args, chunksize=1))


def _fit_task(shared, arg):
    dataset, system_name, config, theta_init, seed = shared
    k, window = arg
    try:
        return fit_window(dataset, window, system_name, config, theta_init, seed, window_id=k)
    except RegimeShiftError as exc:
        exc.args = (f"window {k} {tuple(window)}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def run_screen(dataset, system=None, plan: WindowPlan | None = None,
               config: TrainConfig | None = None, gamma: float = DEFAULT_GAMMA,
               workers: int = 1, seed: int = 0, epsilon: float = DEFAULT_EPSILON,
               theta_init=None, keep_fits: bool = False) -> ScreenReport:
    """Fit all windows, score them and extract candidate clusters."""
    system = get_system(system if system is not None else dataset.system)
    config = config or TrainConfig()
    if plan is None:
        t0, T = float(dataset.obs_times[0]), float(dataset.obs_times[-1])
        plan = build_windows(t0, T, 2.0, 1.0)
    lo, hi = float(dataset.obs_times[0]), float(dataset.obs_times[-1])
    if plan.windows[0][0] < lo - 1e-9 or plan.windows[-1][1] > hi + 1e-9:
        raise ConfigError(f"window plan [{plan.windows[0][0]}, {plan.windows[-1][1]}] "
                          f"exceeds the data range [{lo}, {hi}]")
    shared = (dataset, system.name, config, theta_init, int(seed))
    fits: list[LocalFit] = map_tasks(_fit_task, shared, list(enumerate(plan.windows)), workers)
    S = np.array([f.terminal_median for f in fits])
    S_mean = np.array([f.terminal_mean for f in fits])
    stats = mad_stats(S, epsilon, guard=True)
    Z = (S - stats.median) / stats.denominator
    clusters = select_candidates(plan, S, Z, gamma)
    return ScreenReport(
        system=system.name,
        plan=plan,
        scores=S,
        scores_mean=S_mean,
        Z=Z,
        theta_hat=np.array([f.theta_hat for f in fits]),
        clusters=clusters,
        gamma=float(gamma),
        epsilon=float(epsilon),
        mad=stats,
        seed=int(seed),
        train_config=config.to_dict(),
        restarts=[f.restarts for f in fits],
        fits=fits if keep_fits else None,
    )


def oracle_screen(trajectory, system=None, schedule=None, plan: WindowPlan | None = None) -> np.ndarray:
    """Exact residual floors of every window (training-free reference screen)."""
    system = get_system(system if system is not None else trajectory.system)
    if plan is None:
        plan = build_windows(trajectory.times[0], trajectory.times[-1], 2.0, 1.0)
    return np.array([residual_floor(w, trajectory, system, schedule) for w in plan.windows])
