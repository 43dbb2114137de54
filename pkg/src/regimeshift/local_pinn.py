"""Local PINN fits on a single time window (Stage I building block).

Each window gets its own network and a constant parameter vector, trained
jointly with Adam on

    (ρ/n_obs) Σ_j ‖x̂(t_j) − x_d(t_j)‖² + λ Σ_i w̄_i ‖dx̂/dt(s_i) − f(x̂(s_i); θ)‖²

where ``w̄_i`` are trapezoid weights of a uniform collocation grid normalized
to sum to one.  With that normalization the physics term equals the
normalized residual energy E̅ = E / Σ w, which is recorded at every iteration.

The data weight is ``ρ = data_weight · (2/|window|)²``.  The physics residual
has units of state per time, the data misfit units of state; the factor
``(2/|window|)²`` keeps their balance independent of the window length, so
one ``data_weight`` serves windows of length 2 and 0.2 alike.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .autodiff_nn import (AdamState, LossEvaluator, MlpParams, MlpSpec, Scaling,
                          forward_with_time_derivative, init_params)
from .dynamics import SystemSpec, affine_parts_array, get_system
from .errors import ConfigError, TrainingError, WindowError

__all__ = [
    "TrainConfig",
    "LocalFit",
    "WindowBatch",
    "window_batch",
    "collocation_grid",
    "fit_window",
    "residual_energy",
    "terminal_score",
    "terminal_mean",
]


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    lr_net: float = 5e-3
    lr_theta: float = 1e-3
    lam: float = 1.0
    reg_lambda: float = 0.0
    data_weight: float = 10.0
    collocation_count: int = 50
    median_window: int = 100
    hidden_layers: int = 4
    width: int = 64
    divergence_threshold: float = 1e8
    max_restarts: int = 1

    def __post_init__(self) -> None:
        if not (self.iterations >= self.median_window >= 1):
            raise ConfigError(
                f"need iterations ≥ median_window ≥ 1 (got {self.iterations}, {self.median_window})"
            )
        if not (self.lr_net > 0 and self.lr_theta > 0):
            raise ConfigError("learning rates must be positive")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.reg_lambda < 0:
            raise ConfigError("reg_lambda must be non-negative")
        if not self.data_weight > 0:
            raise ConfigError("data_weight must be positive")
        if self.collocation_count < 2:
            raise ConfigError("collocation_count must be at least 2")
        if self.hidden_layers < 1 or self.width < 1:
            raise ConfigError("network needs at least one hidden layer of width ≥ 1")
        if self.max_restarts < 0:
            raise ConfigError("max_restarts must be non-negative")

    def mlp(self, output_dim: int) -> MlpSpec:
        return MlpSpec(output_dim=output_dim, hidden_layers=self.hidden_layers, width=self.width)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class LocalFit:
    window_id: int
    window: tuple[float, float]
    theta_hat: np.ndarray
    residual_trace: np.ndarray
    params: MlpParams
    scaling: Scaling
    seed: int
    terminal_median: float
    terminal_mean: float
    final_loss: float
    restarts: int = 0
    meta: dict = field(default_factory=dict)

    def to_dict(self, trace_tail: int | None = None) -> dict:
        trace = self.residual_trace if trace_tail is None else self.residual_trace[-trace_tail:]
        return {
            "window_id": self.window_id,
            "window": list(self.window),
            "theta_hat": [float(v) for v in self.theta_hat],
            "terminal_median": self.terminal_median,
            "terminal_mean": self.terminal_mean,
            "final_loss": self.final_loss,
            "seed": self.seed,
            "restarts": self.restarts,
            "trace_length": int(len(self.residual_trace)),
            "residual_trace": [float(v) for v in trace],
            "mlp": self.params.spec.to_dict(),
            "params": [float(v) for v in self.params.flat],
            "scaling": self.scaling.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LocalFit":
        spec = MlpSpec.from_dict(d["mlp"])
        return cls(
            window_id=int(d["window_id"]),
            window=(float(d["window"][0]), float(d["window"][1])),
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            residual_trace=np.asarray(d["residual_trace"], dtype=float),
            params=MlpParams(spec, np.asarray(d["params"], dtype=float)),
            scaling=Scaling.from_dict(d["scaling"]),
            seed=int(d["seed"]),
            terminal_median=float(d["terminal_median"]),
            terminal_mean=float(d["terminal_mean"]),
            final_loss=float(d["final_loss"]),
            restarts=int(d.get("restarts", 0)),
        )


def collocation_grid(a: float, b: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform grid of ``count`` points on ``[a, b]`` with trapezoid weights."""
    if count < 2 or not b > a:
        raise WindowError(f"invalid collocation request on [{a}, {b}] with {count} points")
    s = np.linspace(a, b, count)
    h = (b - a) / (count - 1)
    w = np.full(count, h)
    w[0] = w[-1] = 0.5 * h
    return s, w


@dataclass(frozen=True)
class WindowBatch:
    obs_times: np.ndarray
    obs_states: np.ndarray
    col_times: np.ndarray
    col_weights: np.ndarray
    scaling: Scaling


def window_batch(dataset, window: tuple[float, float], collocation_count: int) -> WindowBatch:
    """Observations inside ``window`` (inclusive) plus its collocation grid."""
    a, b = float(window[0]), float(window[1])
    if not b > a:
        raise WindowError(f"empty window [{a}, {b}]")
    t = dataset.obs_times
    tol = 1e-9 * max(1.0, abs(b))
    mask = (t >= a - tol) & (t <= b + tol)
    if int(mask.sum()) < 2:
        raise WindowError(f"window [{a}, {b}] contains {int(mask.sum())} observation(s); need ≥ 2")
    obs_t = t[mask]
    obs_x = dataset.obs_states[mask]
    s, w = collocation_grid(a, b, collocation_count)
    return WindowBatch(obs_t, obs_x, s, w, Scaling.for_window(a, b, obs_t, obs_x))


def observation_weight(config: TrainConfig, batch: WindowBatch) -> float:
    """Per-observation weight ``data_weight · tscale² / n_obs`` (see module docstring)."""
    return config.data_weight * batch.scaling.tscale ** 2 / len(batch.obs_times)


def terminal_score(residual_trace, M: int) -> float:
    """Median of the last ``M`` entries of the residual trace."""
    trace = np.asarray(residual_trace, dtype=float)
    if M < 1 or M > len(trace):
        raise ConfigError(f"median window M={M} invalid for a trace of length {len(trace)}")
    return float(np.median(trace[-M:]))


def terminal_mean(residual_trace, M: int) -> float:
    """Mean of the last ``M`` entries (reported alongside the median)."""
    trace = np.asarray(residual_trace, dtype=float)
    if M < 1 or M > len(trace):
        raise ConfigError(f"median window M={M} invalid for a trace of length {len(trace)}")
    return float(np.mean(trace[-M:]))


def residual_energy(network, theta, system, col_times, weights,
                    scaling: Scaling | None = None) -> tuple[float, float]:
    """Return ``(E, E̅)`` with ``E = Σ w_i ‖dx̂/dt − f(x̂; θ)‖²`` and ``E̅ = E / Σ w_i``.

    ``network`` is either :class:`MlpParams` (with optional ``scaling``) or a
    callable ``t -> (x, dx/dt)`` returning arrays of shape ``(k, n)``.
    """
    system = get_system(system)
    col_times = np.asarray(col_times, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if col_times.size == 0 or w.shape != col_times.shape or np.any(w <= 0):
        raise ConfigError("collocation set must be nonempty with positive weights")
    if isinstance(network, MlpParams):
        x, dx = forward_with_time_derivative(network, col_times, scaling)
    else:
        x, dx = network(col_times)
    x = np.asarray(x, dtype=float).reshape(len(col_times), system.state_dim)
    dx = np.asarray(dx, dtype=float).reshape(len(col_times), system.state_dim)
    G, b = affine_parts_array(system, x)
    f = np.einsum("knm,m->kn", G, np.asarray(theta, dtype=float)) + b
    r = dx - f
    E = float(np.sum(w * np.sum(r * r, axis=1)))
    return E, E / float(w.sum())


def _train_once(ev: LossEvaluator, params: MlpParams, theta: np.ndarray, iterations: int,
                lr_net: float, lr_theta: float, threshold: float):
    trace = np.empty(iterations)
    adam_phi = AdamState.zeros(params.flat.shape)
    adam_th = AdamState.zeros(theta.shape)
    phi = params.flat
    loss = np.nan
    for it in range(iterations):
        loss, _, energy = ev.evaluate(phi, ev.theta_points(theta))
        if not np.isfinite(loss) or loss > threshold:
            raise TrainingError(f"loss {loss:.3e} at iteration {it + 1}", iteration=it + 1)
        trace[it] = energy
        gth = ev.gtheta.sum(axis=0)
        adam_phi.update_(phi, ev.grad, lr_net)
        adam_th.update_(theta, gth, lr_theta)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(theta))):
        raise TrainingError("non-finite parameters after training", iteration=iterations)
    return trace, float(loss)


def fit_window(dataset, window: tuple[float, float], system: SystemSpec | str | None = None,
               config: TrainConfig | None = None, theta_init=None, seed: int = 0,
               window_id: int = 0,
               progress: Callable[[int, float], None] | None = None) -> LocalFit:
    """Train a local PINN and a constant θ on ``window``.

    Deterministic in ``(dataset, window, config, theta_init, seed, window_id)``.
    On divergence (loss above ``config.divergence_threshold`` or non-finite)
    training restarts with halved learning rates and ``seed + 1``; after
    ``config.max_restarts`` restarts the failure is raised.
    """
    system = get_system(system if system is not None else dataset.system)
    config = config or TrainConfig()
    batch = window_batch(dataset, window, config.collocation_count)
    if theta_init is None:
        theta0 = np.zeros(system.param_dim)
    else:
        theta0 = np.asarray(theta_init, dtype=float).reshape(system.param_dim)
        if not np.all(np.isfinite(theta0)):
            raise ConfigError("theta_init must be finite")
    spec = config.mlp(system.state_dim)
    ev = LossEvaluator(spec, system, batch.obs_times, batch.obs_states, batch.col_times,
                       v=observation_weight(config, batch), w=batch.col_weights / batch.col_weights.sum(),
                       scaling=batch.scaling, lam=config.lam, reg_lambda=config.reg_lambda)
    lr_net, lr_theta, cur_seed = config.lr_net, config.lr_theta, int(seed)
    last_err: TrainingError | None = None
    for attempt in range(config.max_restarts + 1):
        params = init_params(spec, cur_seed, window_id)
        theta = np.ascontiguousarray(theta0.copy())
        try:
            trace, loss = _train_once(ev, params, theta, config.iterations, lr_net, lr_theta,
                                      config.divergence_threshold)
        except TrainingError as exc:
            last_err = exc
            lr_net, lr_theta, cur_seed = 0.5 * lr_net, 0.5 * lr_theta, cur_seed + 1
            continue
        if progress is not None:
            progress(window_id, loss)
        M = config.median_window
        return LocalFit(
            window_id=window_id,
            window=(float(window[0]), float(window[1])),
            theta_hat=theta.copy(),
            residual_trace=trace,
            params=params,
            scaling=batch.scaling,
            seed=cur_seed,
            terminal_median=terminal_score(trace, M),
            terminal_mean=terminal_mean(trace, M),
            final_loss=loss,
            restarts=attempt,
        )
    raise TrainingError(
        f"window {window_id} {tuple(window)} diverged after {config.max_restarts} restart(s): {last_err}",
        iteration=getattr(last_err, "iteration", None),
    )


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
