"""Piecewise RK4 integration of regime schedules and observation sampling."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import RegimeSchedule, eval_field, get_system, SystemSpec
from .errors import ConfigError, IntegrationError, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    system: SystemSpec
    schedule: RegimeSchedule
    x0: tuple[float, ...]
    dt: float


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    obs_times: np.ndarray
    obs_states: np.ndarray
    noise_sigma: float
    seed: int
    system: str
    schedule: RegimeSchedule | None = None
    x0: tuple[float, ...] | None = None
    dt: float | None = None
    dt_obs: float | None = None

    @property
    def state_dim(self) -> int:
        return self.obs_states.shape[1]

    def provenance(self) -> dict:
        return {
            "system": self.system,
            "schedule": self.schedule.to_dict() if self.schedule else None,
            "x0": list(self.x0) if self.x0 is not None else None,
            "dt": self.dt,
            "dt_obs": self.dt_obs,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (np.array_equal(self.obs_times, other.obs_times)
                and np.array_equal(self.obs_states, other.obs_states)
                and self.provenance() == other.provenance())


def _steps(span: float, dt: float, what: str) -> int:
    n = int(round(span / dt))
    if n <= 0 or abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ConfigError(f"{what}: step {dt} does not divide span {span}")
    return n


def snap_schedule(schedule: RegimeSchedule, dt: float) -> RegimeSchedule:
    """Move breakpoints onto the integration grid."""
    t0, T = schedule.horizon
    snapped = []
    for b in schedule.breakpoints:
        nb = t0 + round((b - t0) / dt) * dt
        if abs(nb - b) > 1e-9 * dt:
            log.warning("breakpoint %.12g snapped to grid node %.12g", b, nb)
        snapped.append(round(nb, 12))
    return RegimeSchedule(schedule.horizon, tuple(snapped), schedule.regimes,
                          schedule.allow_equal_adjacent)


def integrate(system, schedule: RegimeSchedule, x0, dt: float) -> Trajectory:
    """Classical RK4; each step uses the regime active at its left node."""
    system = get_system(system)
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (system.state_dim,):
        raise ConfigError(f"x0 must have {system.state_dim} components")
    if schedule.param_dim != system.param_dim:
        raise ConfigError(f"schedule has {schedule.param_dim} parameters, "
                          f"{system.name} needs {system.param_dim}")
    t0, T = schedule.horizon
    n = _steps(T - t0, dt, "integrate")
    schedule = snap_schedule(schedule, dt)
    times = t0 + dt * np.arange(n + 1)
    times[-1] = T
    states = np.empty((n + 1, system.state_dim))
    states[0] = x0
    node_of = [int(round((b - t0) / dt)) for b in schedule.breakpoints]
    edges = [0] + node_of + [n]
    x = x0.copy()
    for seg, (i0, i1) in enumerate(zip(edges[:-1], edges[1:])):
        theta = np.asarray(schedule.regimes[seg])
        for i in range(i0, i1):
            t = times[i]
            k1 = eval_field(system, t, x, theta)
            k2 = eval_field(system, t + dt / 2, x + dt / 2 * k1, theta)
            k3 = eval_field(system, t + dt / 2, x + dt / 2 * k2, theta)
            k4 = eval_field(system, t + dt, x + dt * k3, theta)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationError(f"state became non-finite at t={times[i + 1]:.6g}")
            states[i + 1] = x
    return Trajectory(times, states, system, schedule, tuple(x0.tolist()), float(dt))


def sample_observations(trajectory: Trajectory, dt_obs: float, noise_sigma: float = 0.0,
                        seed: int = 0) -> TrajectoryDataset:
    stride = _steps(dt_obs, trajectory.dt, "sample_observations")
    if abs(stride * trajectory.dt - dt_obs) > 1e-9 * dt_obs:
        raise ConfigError(f"dt_obs={dt_obs} is not a multiple of dt={trajectory.dt}")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    idx = np.arange(0, len(trajectory.times), stride)
    times = trajectory.times[idx].copy()
    states = trajectory.states[idx].copy()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        states = states + rng.normal(0.0, noise_sigma, size=states.shape)
    return TrajectoryDataset(times, states, float(noise_sigma), int(seed),
                             trajectory.system.name, trajectory.schedule,
                             trajectory.x0, trajectory.dt, float(dt_obs))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def write_dataset(dataset: TrajectoryDataset, path) -> None:
    """Write ``t,x1..xn`` CSV plus a JSON sidecar with the provenance."""
    path = Path(path)
    n = dataset.state_dim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
        for t, x in zip(dataset.obs_times, dataset.obs_states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])
    sidecar_path(path).write_text(json.dumps(dataset.provenance(), indent=2, sort_keys=True) + "\n")


def read_dataset(path, n_states: int | None = None) -> TrajectoryDataset:
    path = Path(path)
    meta = {}
    if sidecar_path(path).exists():
        meta = json.loads(sidecar_path(path).read_text())
    if n_states is None and meta.get("system"):
        n_states = get_system(meta["system"]).state_dim
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        n = len(header) - 1
        expected = ["t"] + [f"x{i + 1}" for i in range(n)]
        if header != expected or n < 1 or (n_states is not None and n != n_states):
            raise ParseError(f"{path}:1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n + 1:
                raise ParseError(f"{path}:{lineno}: expected {n + 1} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no observations")
    arr = np.array(rows)
    sched = meta.get("schedule")
    return TrajectoryDataset(
        arr[:, 0].copy(), arr[:, 1:].copy(),
        float(meta.get("noise_sigma", 0.0)), int(meta.get("seed", 0)),
        meta.get("system", ""),
        RegimeSchedule.from_dict(sched) if sched else None,
        tuple(meta["x0"]) if meta.get("x0") is not None else None,
        meta.get("dt"), meta.get("dt_obs"),
    )
