"""Small tanh MLPs with exact time derivatives and exact loss gradients.

Networks map a scalar (normalized) time to the state.  The time derivative is
propagated in forward mode alongside the values, and the loss gradient with
respect to both the weights and the system parameters is obtained by reverse
accumulation through that stacked forward pass.  The numerical work lives in
:mod:`regimeshift.kernels` (compiled or numpy backend).

An optional :class:`Scaling` maps physical time to the network input and the
network output to the physical state::

    s = (t - center) / half_width,     x̂(t) = mu + beta * s + sigma * net(s)

so the network only has to represent the departure of the state from a
straight line, in units of that departure's spread.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .dynamics import SystemSpec
from .errors import ConfigError, SpecificationError, TrainingError

__all__ = [
    "MlpSpec",
    "MlpParams",
    "Scaling",
    "AdamState",
    "init_params",
    "forward",
    "forward_with_time_derivative",
    "LossEvaluator",
    "loss_and_gradients",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a scalar-input tanh MLP with a linear output layer.

    ``hidden_layers = 0`` gives a purely affine map (useful in tests); the
    trainers always use at least one hidden layer.
    """

    output_dim: int
    hidden_layers: int = 4
    width: int = 64
    input_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.input_dim != 1:
            raise SpecificationError("networks take a single (time) input")
        if self.activation != "tanh":
            raise SpecificationError(f"unsupported activation {self.activation!r}")
        if self.output_dim < 1 or self.width < 1 or self.hidden_layers < 0:
            raise SpecificationError(
                f"invalid MLP shape: output_dim={self.output_dim}, "
                f"hidden_layers={self.hidden_layers}, width={self.width}"
            )

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim,) + (self.width,) * self.hidden_layers + (self.output_dim,)

    @property
    def n_params(self) -> int:
        return kernels.param_offsets(self.sizes)[2]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_layers": self.hidden_layers,
            "width": self.width,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            output_dim=int(d["output_dim"]),
            hidden_layers=int(d["hidden_layers"]),
            width=int(d["width"]),
            input_dim=int(d.get("input_dim", 1)),
            activation=str(d.get("activation", "tanh")),
        )


@dataclass
class MlpParams:
    """Weights and biases stored in one flat float64 vector.

    Layer ``l`` occupies ``flat[w_off[l] : w_off[l] + out*in]`` (row-major
    ``(out, in)`` weight) followed by ``flat[b_off[l] : b_off[l] + out]``.
    """

    spec: MlpSpec
    flat: np.ndarray

    def __post_init__(self) -> None:
        self.flat = np.ascontiguousarray(self.flat, dtype=float)
        if self.flat.shape != (self.spec.n_params,):
            raise SpecificationError(
                f"expected {self.spec.n_params} parameters, got {self.flat.shape}"
            )

    @property
    def index_map(self) -> list[tuple[slice, slice]]:
        w_off, b_off, _ = kernels.param_offsets(self.spec.sizes)
        out = []
        for l, (fin, fout) in enumerate(zip(self.spec.sizes[:-1], self.spec.sizes[1:])):
            out.append((slice(w_off[l], w_off[l] + fin * fout), slice(b_off[l], b_off[l] + fout)))
        return out

    def weight(self, layer: int) -> np.ndarray:
        fin, fout = self.spec.sizes[layer], self.spec.sizes[layer + 1]
        return self.flat[self.index_map[layer][0]].reshape(fout, fin)

    def bias(self, layer: int) -> np.ndarray:
        return self.flat[self.index_map[layer][1]]

    @classmethod
    def from_layers(cls, spec: MlpSpec, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> "MlpParams":
        flat = np.zeros(spec.n_params)
        p = cls(spec, flat)
        if len(layers) != len(spec.sizes) - 1:
            raise SpecificationError("wrong number of layers")
        for l, (W, c) in enumerate(layers):
            ws, bs = p.index_map[l]
            fin, fout = spec.sizes[l], spec.sizes[l + 1]
            W = np.asarray(W, dtype=float).reshape(fout, fin)
            p.flat[ws] = W.ravel()
            p.flat[bs] = np.asarray(c, dtype=float).reshape(fout)
        return p

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))


@dataclass(frozen=True)
class Scaling:
    """Affine input map and per-component output map of a network."""

    center: float = 0.0
    half_width: float = 1.0
    mu: tuple[float, ...] = ()
    sigma: tuple[float, ...] = ()
    beta: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise SpecificationError("scaling half-width must be positive")
        if not self.beta:
            object.__setattr__(self, "beta", (0.0,) * len(self.mu))
        if not (len(self.mu) == len(self.sigma) == len(self.beta)):
            raise SpecificationError("scaling mu/sigma/beta lengths differ")

    @classmethod
    def identity(cls, output_dim: int) -> "Scaling":
        return cls(0.0, 1.0, (0.0,) * output_dim, (1.0,) * output_dim)

    @classmethod
    def for_window(cls, a: float, b: float, obs_times, x_obs) -> "Scaling":
        """Map ``[a, b]`` to ``[-1, 1]`` and precondition outputs by the observations.

        Per component, ``mu + beta * s`` is the least-squares line through the
        window's observations and ``sigma`` the standard deviation of the
        observations about it, floored at 1% of the component's overall spread
        (and at ``1e-8 * (|mu| + 1)``) so near-linear components stay well scaled.
        """
        x_obs = np.atleast_2d(np.asarray(x_obs, dtype=float))
        center, half = 0.5 * (a + b), 0.5 * (b - a)
        s = (np.asarray(obs_times, dtype=float).ravel() - center) / half
        if len(s) >= 2 and np.ptp(s) > 0:
            A = np.column_stack([np.ones_like(s), s])
            coef, *_ = np.linalg.lstsq(A, x_obs, rcond=None)
            mu, beta = coef[0], coef[1]
        else:
            mu, beta = x_obs.mean(axis=0), np.zeros(x_obs.shape[1])
        resid = x_obs - (mu + np.outer(s, beta))
        sigma = np.maximum.reduce([resid.std(axis=0), 1e-2 * x_obs.std(axis=0),
                                   1e-8 * (np.abs(mu) + 1.0)])
        return cls(center, half, tuple(float(v) for v in mu), tuple(float(v) for v in sigma),
                   tuple(float(v) for v in beta))

    @property
    def tscale(self) -> float:
        return 1.0 / self.half_width

    def to_input(self, t) -> np.ndarray:
        return (np.asarray(t, dtype=float) - self.center) / self.half_width

    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)

    def beta_array(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=float)

    def to_dict(self) -> dict:
        return {"center": self.center, "half_width": self.half_width,
                "mu": list(self.mu), "beta": list(self.beta), "sigma": list(self.sigma)}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaling":
        return cls(float(d["center"]), float(d["half_width"]),
                   tuple(float(v) for v in d["mu"]), tuple(float(v) for v in d["sigma"]),
                   tuple(float(v) for v in d.get("beta", ())))


def init_params(spec: MlpSpec, seed: int, window_index: int = 0) -> MlpParams:
    """Glorot-uniform weights, zero biases, seeded by ``(seed, window_index)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(window_index)]))
    layers = []
    for fin, fout in zip(spec.sizes[:-1], spec.sizes[1:]):
        limit = np.sqrt(6.0 / (fin + fout))
        layers.append((rng.uniform(-limit, limit, size=(fout, fin)), np.zeros(fout)))
    return MlpParams.from_layers(spec, layers)


_FORWARD_KERNELS: dict[tuple[int, ...], object] = {}


def _forward_kernel(sizes: tuple[int, ...]):
    k = _FORWARD_KERNELS.get(sizes)
    if k is None:
        k = kernels.PinnKernel(sizes, 0, 0, 0, np.zeros(1))
        _FORWARD_KERNELS[sizes] = k
    return k


def _raw(params: MlpParams, t, scaling: Scaling | None):
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_flat = np.atleast_1d(t_arr).ravel()
    if not np.all(np.isfinite(t_flat)):
        raise SpecificationError("network input must be finite")
    if t_flat.size == 0:
        n = params.spec.output_dim
        return np.zeros((0, n)), np.zeros((0, n)), scalar
    sc = scaling or Scaling.identity(params.spec.output_dim)
    s = sc.to_input(t_flat)
    Y, dY = _forward_kernel(params.spec.sizes).forward(params.flat, s)
    beta = sc.beta_array()
    x = sc.mu_array() + np.outer(s, beta) + sc.sigma_array() * Y
    dx = sc.tscale * (beta + sc.sigma_array() * dY)
    return x, dx, scalar


def forward(params: MlpParams, t, scaling: Scaling | None = None) -> np.ndarray:
    """Network state at ``t`` (scalar → shape ``(n,)``, array → ``(k, n)``)."""
    x, _, scalar = _raw(params, t, scaling)
    return x[0] if scalar else x


def forward_with_time_derivative(params: MlpParams, t, scaling: Scaling | None = None):
    """State and exact time derivative at ``t`` (forward-mode, no differencing)."""
    x, dx, scalar = _raw(params, t, scaling)
    return (x[0], dx[0]) if scalar else (x, dx)


class LossEvaluator:
    """Reusable evaluator of the PINN loss for fixed batches.

    The loss is::

        Σ_j v_j ‖x̂(t_j) − x_d(t_j)‖² + λ Σ_i w_i ‖dx̂/dt(s_i) − f(x̂(s_i); θ_i)‖² + reg ‖φ‖²

    where ``θ_i`` may differ per collocation point (Stage II gating) or be a
    single vector broadcast to all points.
    """

    def __init__(self, spec: MlpSpec, system: SystemSpec, obs_times, obs_states,
                 col_times, v, w, scaling: Scaling | None = None,
                 lam: float = 1.0, reg_lambda: float = 0.0):
        obs_times = np.asarray(obs_times, dtype=float).ravel()
        col_times = np.asarray(col_times, dtype=float).ravel()
        obs_states = np.asarray(obs_states, dtype=float).reshape(len(obs_times), -1)
        if obs_states.shape[1] != system.state_dim or spec.output_dim != system.state_dim:
            raise SpecificationError("state dimension mismatch between network, data and system")
        if len(obs_times) == 0 and len(col_times) == 0:
            raise SpecificationError("empty batches")
        if not lam > 0.0:
            raise ConfigError(f"lambda must be positive, got {lam}")
        if reg_lambda < 0.0:
            raise ConfigError(f"reg_lambda must be non-negative, got {reg_lambda}")
        self.spec = spec
        self.system = system
        self.scaling = scaling or Scaling.identity(system.state_dim)
        self.s = np.ascontiguousarray(
            np.concatenate([self.scaling.to_input(obs_times), self.scaling.to_input(col_times)])
        )
        self.x_obs = np.ascontiguousarray(obs_states)
        self.v = np.ascontiguousarray(np.broadcast_to(np.asarray(v, dtype=float), obs_times.shape))
        self.w = np.ascontiguousarray(np.broadcast_to(np.asarray(w, dtype=float), col_times.shape))
        self.n_col = len(col_times)
        self.lam = float(lam)
        self.reg = float(reg_lambda)
        self._kernel = kernels.PinnKernel(spec.sizes, len(obs_times), self.n_col,
                                          system.kernel_id, system.constants_array())
        self._mu = np.ascontiguousarray(self.scaling.mu_array())
        self._beta = np.ascontiguousarray(self.scaling.beta_array())
        self._sigma = np.ascontiguousarray(self.scaling.sigma_array())
        self.grad = np.zeros(spec.n_params)
        self.gtheta = np.zeros((self.n_col, system.param_dim))

    def theta_points(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        if th.ndim == 1:
            th = np.broadcast_to(th, (self.n_col, self.system.param_dim))
        return np.ascontiguousarray(th)

    def evaluate(self, flat: np.ndarray, theta_pts: np.ndarray, lam: float | None = None):
        """Return ``(loss, data_loss, energy)``; gradients land in ``self.grad`` / ``self.gtheta``.

        ``energy`` is ``Σ w_i ‖R_i‖²`` (unscaled by λ); ``gtheta`` holds per-point
        gradients ``∂loss/∂θ_i``.
        """
        lam_v = self.lam if lam is None else float(lam)
        return self._kernel.loss_grad(flat, self.s, self.x_obs, self.v, self.w, theta_pts,
                                      self._mu, self._beta, self._sigma, self.scaling.tscale, lam_v,
                                      self.reg, self.grad, self.gtheta)


def loss_and_gradients(params: MlpParams, theta, system: SystemSpec, obs_times, obs_states,
                       col_times, v, w, lam: float = 1.0, reg_lambda: float = 0.0,
                       scaling: Scaling | None = None):
    """Loss and exact gradients w.r.t. the network weights and a shared θ.

    Returns ``(loss, grad_phi, grad_theta)``.  Raises :class:`TrainingError`
    if the loss is not finite.
    """
    ev = LossEvaluator(params.spec, system, obs_times, obs_states, col_times, v, w,
                       scaling=scaling, lam=lam, reg_lambda=reg_lambda)
    theta = np.asarray(theta, dtype=float).reshape(system.param_dim)
    loss, _, _ = ev.evaluate(params.flat, ev.theta_points(theta))
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    return float(loss), ev.grad.copy(), ev.gtheta.sum(axis=0)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps)

    def update_(self, x: np.ndarray, g: np.ndarray, lr: float) -> None:
        """In-place Adam step on contiguous float64 ``x`` (hot path for the trainers)."""
        self.step += 1
        kernels.adam_update(x, g, self.m, self.v, self.step, lr, self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, variables, grads, lr: float):
    """One Adam step with bias correction; returns ``(new_variables, new_state)``.

    Inputs are not modified.
    """
    x = np.array(variables, dtype=float, copy=True)
    g = np.ascontiguousarray(grads, dtype=float)
    if x.shape != g.shape or x.shape != state.m.shape:
        raise SpecificationError(f"shape mismatch: variables {x.shape}, grads {g.shape}, state {state.m.shape}")
    if not lr > 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient at Adam step {state.step + 1}", iteration=state.step + 1)
    new = state.copy()
    shape = x.shape
    xf, gf = x.reshape(-1), np.ascontiguousarray(g.reshape(-1))
    new.m = new.m.reshape(-1)
    new.v = new.v.reshape(-1)
    new.update_(xf, gf, lr)
    new.m = new.m.reshape(shape)
    new.v = new.v.reshape(shape)
    return xf.reshape(shape), new


def save_checkpoint(path: str | Path, params: MlpParams, scaling: Scaling | None = None) -> None:
    doc = {"mlp": params.spec.to_dict(), "params": [float(v) for v in params.flat]}
    if scaling is not None:
        doc["scaling"] = scaling.to_dict()
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[MlpParams, Scaling | None]:
    doc = json.loads(Path(path).read_text())
    spec = MlpSpec.from_dict(doc["mlp"])
    sc = Scaling.from_dict(doc["scaling"]) if "scaling" in doc else None
    return MlpParams(spec, np.asarray(doc["params"], dtype=float)), sc
