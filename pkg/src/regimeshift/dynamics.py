"""Benchmark vector fields, regime schedules and information matrices.

Every benchmark field is affine in its parameter vector,
``f(t, x; theta) = G(t, x) @ theta + b(t, x)``, and the helpers here expose
both forms.  Parameter orderings are fixed per system:

==============  =====  ===========================
system          (n,m)  theta
==============  =====  ===========================
malthus         (1,1)  (r,)
logistic        (1,1)  (r,)          Q is a constant
vanderpol       (2,1)  (mu,)
lotka_volterra  (2,4)  (alpha, beta, gamma, delta)
lorenz          (3,3)  (sigma, r, b)
==============  =====  ===========================
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, SpecificationError

LOGISTIC_CAPACITY = 100.0


@dataclass(frozen=True)
class SystemSpec:
    name: str
    state_dim: int
    param_dim: int
    state_names: tuple[str, ...]
    param_names: tuple[str, ...]
    kernel_id: int
    fixed_constants: Mapping[str, float] = field(default_factory=dict)

    def constants_array(self) -> np.ndarray:
        # the compiled kernel reads constants positionally
        return np.array([self.fixed_constants.get("Q", 0.0)], dtype=float)


SYSTEMS: dict[str, SystemSpec] = {
    "malthus": SystemSpec("malthus", 1, 1, ("P",), ("r",), 0),
    "logistic": SystemSpec(
        "logistic", 1, 1, ("P",), ("r",), 1, {"Q": LOGISTIC_CAPACITY}
    ),
    "vanderpol": SystemSpec("vanderpol", 2, 1, ("M", "N"), ("mu",), 2),
    "lotka_volterra": SystemSpec(
        "lotka_volterra", 2, 4, ("S", "W"), ("alpha", "beta", "gamma", "delta"), 3
    ),
    "lorenz": SystemSpec("lorenz", 3, 3, ("U", "V", "W"), ("sigma", "r", "b"), 4),
}


def get_system(name: str | SystemSpec) -> SystemSpec:
    if isinstance(name, SystemSpec):
        return name
    try:
        return SYSTEMS[name]
    except KeyError:
        raise SpecificationError(
            f"unknown system {name!r}; expected one of {sorted(SYSTEMS)}"
        ) from None


def _check_state(system: SystemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != system.state_dim:
        raise SpecificationError(
            f"{system.name}: state has {x.shape[-1]} components, expected {system.state_dim}"
        )
    return x


def _check_theta(system: SystemSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1)
    if theta.shape[-1] != system.param_dim:
        raise SpecificationError(
            f"{system.name}: theta has {theta.shape[-1]} entries, expected {system.param_dim}"
        )
    return theta


def affine_parts_array(system: SystemSpec, x: np.ndarray):
    """Return ``(G, b)`` for states ``x`` of shape ``(..., n)``.

    ``G`` has shape ``(..., n, m)`` and ``b`` shape ``(..., n)``.
    """
    name = system.name
    lead = x.shape[:-1]
    G = np.zeros(lead + (system.state_dim, system.param_dim))
    b = np.zeros(lead + (system.state_dim,))
    if name == "malthus":
        G[..., 0, 0] = x[..., 0]
    elif name == "logistic":
        Q = system.fixed_constants["Q"]
        G[..., 0, 0] = x[..., 0] * (1.0 - x[..., 0] / Q)
    elif name == "vanderpol":
        M, N = x[..., 0], x[..., 1]
        G[..., 1, 0] = (1.0 - M * M) * N
        b[..., 0] = N
        b[..., 1] = -M
    elif name == "lotka_volterra":
        S, W = x[..., 0], x[..., 1]
        G[..., 0, 0] = S
        G[..., 0, 1] = -S * W
        G[..., 1, 2] = -W
        G[..., 1, 3] = S * W
    elif name == "lorenz":
        U, V, W = x[..., 0], x[..., 1], x[..., 2]
        G[..., 0, 0] = V - U
        G[..., 1, 1] = U
        G[..., 2, 2] = -W
        b[..., 1] = -V - U * W
        b[..., 2] = U * V
    else:  # pragma: no cover - guarded by get_system
        raise SpecificationError(name)
    return G, b


def state_jacobian_array(system: SystemSpec, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """d f / d x with shape ``(..., n, n)``; ``theta`` broadcasts as ``(..., m)``."""
    name = system.name
    lead = x.shape[:-1]
    J = np.zeros(lead + (system.state_dim, system.state_dim))
    th = np.broadcast_to(theta, lead + (system.param_dim,))
    if name == "malthus":
        J[..., 0, 0] = th[..., 0]
    elif name == "logistic":
        Q = system.fixed_constants["Q"]
        J[..., 0, 0] = th[..., 0] * (1.0 - 2.0 * x[..., 0] / Q)
    elif name == "vanderpol":
        M, N = x[..., 0], x[..., 1]
        mu = th[..., 0]
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -2.0 * mu * M * N - 1.0
        J[..., 1, 1] = mu * (1.0 - M * M)
    elif name == "lotka_volterra":
        S, W = x[..., 0], x[..., 1]
        a, bb, g, d = th[..., 0], th[..., 1], th[..., 2], th[..., 3]
        J[..., 0, 0] = a - bb * W
        J[..., 0, 1] = -bb * S
        J[..., 1, 0] = d * W
        J[..., 1, 1] = -(g - d * S)
    elif name == "lorenz":
        U, V, W = x[..., 0], x[..., 1], x[..., 2]
        s, r, bb = th[..., 0], th[..., 1], th[..., 2]
        J[..., 0, 0] = -s
        J[..., 0, 1] = s
        J[..., 1, 0] = r - W
        J[..., 1, 1] = -1.0
        J[..., 1, 2] = -U
        J[..., 2, 0] = V
        J[..., 2, 1] = U
        J[..., 2, 2] = -bb
    return J


def eval_field(system, t, x, theta) -> np.ndarray:
    """Evaluate the benchmark equations directly (not through ``G`` and ``b``)."""
    system = get_system(system)
    x = _check_state(system, x)
    theta = _check_theta(system, theta)
    name = system.name
    if name == "malthus":
        out = theta[..., 0:1] * x
    elif name == "logistic":
        Q = system.fixed_constants["Q"]
        out = theta[..., 0:1] * x * (1.0 - x / Q)
    elif name == "vanderpol":
        M, N = x[..., 0], x[..., 1]
        out = np.stack([N, theta[..., 0] * (1.0 - M**2) * N - M], axis=-1)
    elif name == "lotka_volterra":
        S, W = x[..., 0], x[..., 1]
        a, b, g, d = (theta[..., i] for i in range(4))
        out = np.stack([S * (a - b * W), -W * (g - d * S)], axis=-1)
    else:
        U, V, W = x[..., 0], x[..., 1], x[..., 2]
        s, r, b = (theta[..., i] for i in range(3))
        out = np.stack([s * (V - U), r * U - V - U * W, U * V - b * W], axis=-1)
    return np.asarray(out, dtype=float)


@dataclass(frozen=True)
class AffineParts:
    G: np.ndarray
    b: np.ndarray


def eval_affine_parts(system, t, x) -> AffineParts:
    system = get_system(system)
    x = _check_state(system, x)
    G, b = affine_parts_array(system, x)
    return AffineParts(G, b)


@dataclass(frozen=True)
class RegimeSchedule:
    """Right-continuous piecewise-constant parameter path on ``[t0, T]``."""

    horizon: tuple[float, float]
    breakpoints: tuple[float, ...]
    regimes: tuple[tuple[float, ...], ...]
    allow_equal_adjacent: bool = False

    def __post_init__(self):
        t0, T = (float(v) for v in self.horizon)
        bps = tuple(float(b) for b in self.breakpoints)
        regs = tuple(tuple(float(v) for v in np.atleast_1d(r)) for r in self.regimes)
        object.__setattr__(self, "horizon", (t0, T))
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "regimes", regs)
        if not T > t0:
            raise DomainError(f"empty horizon [{t0}, {T}]")
        if len(regs) != len(bps) + 1:
            raise SpecificationError(
                f"{len(bps)} breakpoints need {len(bps) + 1} regimes, got {len(regs)}"
            )
        if any(not (t0 < b < T) for b in bps):
            raise DomainError(f"breakpoints must lie strictly inside ({t0}, {T})")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise DomainError("breakpoints must be strictly increasing")
        m = len(regs[0])
        if any(len(r) != m for r in regs):
            raise SpecificationError("all regimes must have the same length")
        if not all(math.isfinite(v) for r in regs for v in r):
            raise SpecificationError("regime parameters must be finite")
        if not self.allow_equal_adjacent and any(r1 == r2 for r1, r2 in zip(regs, regs[1:])):
            raise SpecificationError("adjacent regimes are equal")

    @property
    def param_dim(self) -> int:
        return len(self.regimes[0])

    def regime_index(self, t: float) -> int:
        t0, T = self.horizon
        if not (t0 <= t <= T):
            raise DomainError(f"t={t} outside horizon [{t0}, {T}]")
        return bisect.bisect_right(self.breakpoints, t)

    def regime_indices(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        t0, T = self.horizon
        if np.any(times < t0) or np.any(times > T):
            raise DomainError(f"times outside horizon [{t0}, {T}]")
        return np.searchsorted(np.asarray(self.breakpoints), times, side="right")

    def theta_path(self, times) -> np.ndarray:
        return np.asarray(self.regimes)[self.regime_indices(times)]

    def regime_spans(self) -> list[tuple[float, float]]:
        edges = (self.horizon[0],) + self.breakpoints + (self.horizon[1],)
        return list(zip(edges[:-1], edges[1:]))

    def to_dict(self) -> dict:
        return {
            "horizon": list(self.horizon),
            "breakpoints": list(self.breakpoints),
            "regimes": [list(r) for r in self.regimes],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegimeSchedule":
        return cls(tuple(d["horizon"]), tuple(d["breakpoints"]),
                   tuple(tuple(r) for r in d["regimes"]),
                   bool(d.get("allow_equal_adjacent", False)))


def theta_at(schedule: RegimeSchedule, t: float) -> np.ndarray:
    return np.array(schedule.regimes[schedule.regime_index(t)])


_LV = ((2.0, 1.0, 2.0, 1.0), (4.0, 2.0, 3.0, 4.0), (3.0, 4.0, 1.0, 2.0))

BENCHMARK_SCHEDULES: dict[str, RegimeSchedule] = {
    "malthus": RegimeSchedule((0.0, 100.0), (40.0,), ((0.1,), (0.05,))),
    "logistic": RegimeSchedule((0.0, 100.0), (60.0,), ((0.1,), (0.05,))),
    "vanderpol": RegimeSchedule((0.0, 100.0), (40.0, 80.0), ((1.0,), (0.1,), (0.5,))),
    "lotka_volterra": RegimeSchedule(
        (0.0, 100.0), (20.0, 40.0, 60.0, 80.0), (_LV[0], _LV[1], _LV[2], _LV[1], _LV[0])
    ),
    "lorenz": RegimeSchedule(
        (0.0, 20.0), (8.0, 16.0),
        ((10.0, 28.0, 8.0 / 3.0), (12.0, 16.0, 10.0 / 3.0), (14.0, 20.0, 3.0)),
    ),
}

DEFAULT_X0: dict[str, tuple[float, ...]] = {
    "malthus": (1.0,),
    "logistic": (10.0,),
    "vanderpol": (2.0, 0.0),
    "lotka_volterra": (1.0, 1.0),
    "lorenz": (1.0, 1.0, 1.0),
}


# --- information matrices -------------------------------------------------

def grid_index(times: np.ndarray, t: float) -> int:
    """Index of the grid node at ``t``; raises if ``t`` is not (close to) a node."""
    t0 = float(times[0])
    dt = float(times[1] - times[0])
    i = int(round((t - t0) / dt))
    if i < 0 or i >= len(times) or abs(times[i] - t) > 1e-6 * dt:
        raise DomainError(
            f"t={t} is not covered by the trajectory grid [{times[0]}, {times[-1]}] step {dt}"
        )
    return i


def trapezoid_weights(n_nodes: int, dt: float) -> np.ndarray:
    if n_nodes < 2:
        return np.zeros(max(n_nodes, 0))
    w = np.full(n_nodes, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(frozen=True)
class InformationMatrix:
    M: np.ndarray
    interval: tuple[float, float]

    @property
    def lambda_min(self) -> float:
        if self.M.size == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.M)[0])


def information_matrix(system, trajectory, interval, quadrature: str = "trapezoid") -> InformationMatrix:
    """``M(J) = int_J G^T G dt`` by the composite trapezoid rule on the trajectory grid."""
    if quadrature != "trapezoid":
        raise SpecificationError(f"unsupported quadrature rule {quadrature!r}")
    system = get_system(system)
    a, b = (float(v) for v in interval)
    if b < a:
        raise DomainError(f"reversed interval [{a}, {b}]")
    times = trajectory.times
    ia, ib = grid_index(times, a), grid_index(times, b)
    m = system.param_dim
    if ib == ia:
        return InformationMatrix(np.zeros((m, m)), (a, b))
    G, _ = affine_parts_array(system, trajectory.states[ia:ib + 1])
    w = trapezoid_weights(ib - ia + 1, float(times[1] - times[0]))
    M = np.einsum("k,kni,knj->ij", w, G, G)
    M = 0.5 * (M + M.T)
    return InformationMatrix(M, (a, b))


def alpha_estimate(system, trajectory, intervals: Sequence[tuple[float, float]]) -> float:
    """Smallest ``lambda_min(M(J)) / |J|`` over the given intervals."""
    if len(intervals) == 0:
        raise DomainError("alpha_estimate needs at least one interval")
    best = math.inf
    for a, b in intervals:
        if not b - a > 0:
            raise DomainError(f"interval [{a}, {b}] has zero length")
        info = information_matrix(system, trajectory, (a, b))
        best = min(best, info.lambda_min / (b - a))
    return best
