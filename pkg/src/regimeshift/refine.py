"""Stage II: differentiable change point inside a candidate interval.

On ``I_c = [t_L, t_R]`` (width ``W``) one network and two parameter vectors
are trained, with the parameter path blended by a logistic gate::

    τ(η)  = t_L + W·sigmoid(η)
    g(t)  = sigmoid(κ (t − τ))
    θ(t)  = θ⁻ + (θ⁺ − θ⁻)·g(t)

Training runs in three phases (fractions of the iteration budget):

1. network only, data term only, θ± frozen at the neighbour estimates, η = 0;
2. η only, full loss (only the physics term depends on η), κ = κ₀;
3. everything jointly, κ ramped geometrically from κ₀ to κ₁.

κ₀ = 10/W and κ₁ = 200/W by default.  The reported τ̂ is τ(η̂) at the end.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff_nn import AdamState, LossEvaluator, MlpParams, MlpSpec, Scaling, init_params
from .dynamics import get_system
from .errors import CandidateError, ConfigError, SpecificationError, TrainingError
from .local_pinn import collocation_grid

__all__ = [
    "RefineConfig",
    "GateConfig",
    "Candidate",
    "RefineResult",
    "sigmoid",
    "tau_of_eta",
    "eta_of_tau",
    "gate",
    "gated_theta",
    "Stage2Objective",
    "refine",
]


def sigmoid(z):
    """Logistic function with ``sigmoid(−z) == 1 − sigmoid(z)`` exactly.

    The upper half is evaluated directly and the lower half as its complement
    (exact by Sterbenz's lemma), so the gate symmetry holds bit for bit.
    Values below ~1e-16 round to 0, which is harmless at double precision.
    """
    z = np.asarray(z, dtype=float)
    up = 1.0 / (1.0 + np.exp(-np.abs(z)))
    out = np.where(z >= 0, up, 1.0 - up)
    return out if out.ndim else float(out)


def tau_of_eta(eta: float, t_L: float, t_R: float) -> float:
    if not t_R > t_L:
        raise SpecificationError(f"need t_L < t_R (got {t_L}, {t_R})")
    return float(t_L + (t_R - t_L) * sigmoid(eta))


def eta_of_tau(tau: float, t_L: float, t_R: float) -> float:
    if not t_L < tau < t_R:
        raise SpecificationError("tau must lie strictly inside (t_L, t_R)")
    p = (tau - t_L) / (t_R - t_L)
    return float(math.log(p / (1.0 - p)))


def gate(t, tau: float, kappa: float):
    if not kappa > 0:
        raise SpecificationError("kappa must be positive")
    return sigmoid(kappa * (np.asarray(t, dtype=float) - tau))


def gated_theta(t, theta_minus, theta_plus, eta: float, kappa: float, t_L: float, t_R: float):
    """``θ(t) = θ⁻ + (θ⁺ − θ⁻)·g(t; τ(η), κ)``; array ``t`` gives one row per time."""
    tm = np.atleast_1d(np.asarray(theta_minus, dtype=float))
    tp = np.atleast_1d(np.asarray(theta_plus, dtype=float))
    if tm.shape != tp.shape:
        raise SpecificationError("theta_minus and theta_plus differ in length")
    g = gate(t, tau_of_eta(eta, t_L, t_R), kappa)
    if np.ndim(g) == 0:
        return tm + (tp - tm) * g
    return tm[None, :] + (tp - tm)[None, :] * np.asarray(g)[:, None]


@dataclass(frozen=True)
class GateConfig:
    """Gate sharpness schedule in units of 1/W."""

    kappa_start: float = 10.0
    kappa_end: float = 200.0

    def __post_init__(self) -> None:
        if not (self.kappa_start > 0 and self.kappa_end > 0):
            raise ConfigError("kappa must be positive")

    def kappas(self, width: float, n_phase3: int) -> np.ndarray:
        k0, k1 = self.kappa_start / width, self.kappa_end / width
        if n_phase3 <= 1:
            return np.array([k1])[:n_phase3]
        return k0 * (k1 / k0) ** (np.arange(n_phase3) / (n_phase3 - 1))


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 30000
    phase_split: tuple[float, float, float] = (0.4, 0.2, 0.4)
    lr_net: float = 5e-3
    lr_theta: float = 1e-3
    lr_eta: float = 1e-2
    lam: float = 1.0
    reg_lambda: float = 0.0
    data_weight: float = 10.0
    collocation_count: int = 100
    hidden_layers: int = 4
    width: int = 80
    gate: GateConfig = GateConfig()
    divergence_threshold: float = 1e8
    max_restarts: int = 1

    def __post_init__(self) -> None:
        if self.iterations < 3:
            raise ConfigError("Stage II needs at least 3 iterations")
        if len(self.phase_split) != 3 or any(f < 0 for f in self.phase_split) \
                or abs(sum(self.phase_split) - 1.0) > 1e-9:
            raise ConfigError("phase_split must be three non-negative fractions summing to 1")
        if not (self.lr_net > 0 and self.lr_theta > 0 and self.lr_eta > 0):
            raise ConfigError("learning rates must be positive")
        if not self.lam > 0 or self.reg_lambda < 0 or not self.data_weight > 0:
            raise ConfigError("need lambda > 0, reg_lambda ≥ 0, data_weight > 0")
        if self.collocation_count < 2 or self.hidden_layers < 1 or self.width < 1:
            raise ConfigError("invalid collocation count or network shape")

    def phase_lengths(self) -> tuple[int, int, int]:
        n1 = int(round(self.phase_split[0] * self.iterations))
        n2 = int(round(self.phase_split[1] * self.iterations))
        return n1, n2, self.iterations - n1 - n2

    def mlp(self, output_dim: int) -> MlpSpec:
        return MlpSpec(output_dim=output_dim, hidden_layers=self.hidden_layers, width=self.width)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "gate"}
        d["phase_split"] = list(self.phase_split)
        d["kappa_start"] = self.gate.kappa_start
        d["kappa_end"] = self.gate.kappa_end
        return d


@dataclass(frozen=True)
class Candidate:
    interval: tuple[float, float]
    theta_left: tuple[float, ...]
    theta_right: tuple[float, ...]
    task_id: int = 0


@dataclass
class RefineResult:
    interval: tuple[float, float]
    tau_hat: float
    eta: float
    kappa_final: float
    theta_minus: np.ndarray
    theta_plus: np.ndarray
    phase_losses: list[float]
    physics_energy: float
    loss_trace: np.ndarray
    params: MlpParams
    scaling: Scaling
    seed: int
    restarts: int = 0
    meta: dict = field(default_factory=dict)

    def to_dict(self, truth: dict | None = None, trace_stride: int = 10) -> dict:
        d = {
            "interval": list(self.interval),
            "tau_hat": self.tau_hat,
            "eta": self.eta,
            "kappa_final": self.kappa_final,
            "theta_minus": [float(v) for v in self.theta_minus],
            "theta_plus": [float(v) for v in self.theta_plus],
            "phase_losses": [float(v) for v in self.phase_losses],
            "physics_energy": self.physics_energy,
            "loss_trace": [float(v) for v in self.loss_trace[::trace_stride]],
            "loss_trace_stride": trace_stride,
            "seed": self.seed,
            "restarts": self.restarts,
            "mlp": self.params.spec.to_dict(),
            "scaling": self.scaling.to_dict(),
        }
        if truth is not None:
            tau = float(truth["tau"])
            tm = np.asarray(truth["theta_minus"], dtype=float)
            tp = np.asarray(truth["theta_plus"], dtype=float)
            d["truth"] = {"tau": tau, "theta_minus": tm.tolist(), "theta_plus": tp.tolist()}
            d["squared_errors"] = {
                "tau": (self.tau_hat - tau) ** 2,
                "theta_minus": ((self.theta_minus - tm) ** 2).tolist(),
                "theta_plus": ((self.theta_plus - tp) ** 2).tolist(),
            }
        return d

    def to_json(self, path, truth: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(truth), indent=2, sort_keys=True) + "\n")


class Stage2Objective:
    """Stage II loss and its exact gradients for fixed batches on ``[t_L, t_R]``."""

    def __init__(self, spec: MlpSpec, system, obs_times, obs_states, col_times, col_weights,
                 t_L: float, t_R: float, scaling: Scaling, data_weight: float, lam: float = 1.0,
                 reg_lambda: float = 0.0):
        self.system = get_system(system)
        self.t_L, self.t_R = float(t_L), float(t_R)
        self.W = self.t_R - self.t_L
        self.col_times = np.asarray(col_times, dtype=float)
        v = data_weight * scaling.tscale ** 2 / len(obs_times)
        self.ev = LossEvaluator(spec, self.system, obs_times, obs_states, col_times, v,
                                np.asarray(col_weights) / np.sum(col_weights), scaling=scaling,
                                lam=lam, reg_lambda=reg_lambda)

    def __call__(self, flat, theta_minus, theta_plus, eta: float, kappa: float,
                 lam: float | None = None):
        """Return ``(loss, data_loss, energy, g_phi, g_theta_minus, g_theta_plus, g_eta)``.

        ``g_phi`` is a view into the evaluator's buffer (copy before the next call).
        """
        tm = np.asarray(theta_minus, dtype=float)
        tp = np.asarray(theta_plus, dtype=float)
        s_eta = float(sigmoid(eta))
        tau = self.t_L + self.W * s_eta
        g = sigmoid(kappa * (self.col_times - tau))
        dtheta = tp - tm
        theta_pts = tm[None, :] + g[:, None] * dtheta[None, :]
        loss, data_loss, energy = self.ev.evaluate(flat, np.ascontiguousarray(theta_pts), lam)
        gt = self.ev.gtheta
        g_tm = ((1.0 - g)[:, None] * gt).sum(axis=0)
        g_tp = (g[:, None] * gt).sum(axis=0)
        dg_deta = -kappa * g * (1.0 - g) * self.W * s_eta * (1.0 - s_eta)
        g_eta = float(np.sum((gt @ dtheta) * dg_deta))
        return loss, data_loss, energy, self.ev.grad, g_tm, g_tp, g_eta


def _check(loss: float, it: int, threshold: float) -> None:
    if not math.isfinite(loss) or loss > threshold:
        raise TrainingError(f"Stage II loss {loss:.3e} at iteration {it}", iteration=it)


def _train(obj: Stage2Objective, spec: MlpSpec, cfg: RefineConfig, theta_left, theta_right,
           seed: int, task_id: int, lr_scale: float):
    n1, n2, n3 = cfg.phase_lengths()
    params = init_params(spec, seed, task_id)
    phi = params.flat
    m = len(theta_left)
    th = np.ascontiguousarray(np.concatenate([theta_left, theta_right]).astype(float))
    eta = np.zeros(1)
    k0 = cfg.gate.kappa_start / obj.W
    trace = np.empty(cfg.iterations)
    phase_losses = []
    lr_net, lr_th, lr_eta = (lr_scale * cfg.lr_net, lr_scale * cfg.lr_theta, lr_scale * cfg.lr_eta)
    it = 0

    # phase 1: network on the data term
    ad_phi = AdamState.zeros(phi.shape)
    loss = math.nan
    for _ in range(n1):
        loss, _, _, gphi, _, _, _ = obj(phi, th[:m], th[m:], eta[0], k0, lam=0.0)
        _check(loss, it + 1, cfg.divergence_threshold)
        trace[it] = loss
        it += 1
        ad_phi.update_(phi, gphi, lr_net)
    phase_losses.append(float(loss))

    # phase 2: change point only
    ad_eta = AdamState.zeros(1)
    for _ in range(n2):
        loss, _, _, _, _, _, geta = obj(phi, th[:m], th[m:], eta[0], k0)
        _check(loss, it + 1, cfg.divergence_threshold)
        trace[it] = loss
        it += 1
        ad_eta.update_(eta, np.array([geta]), lr_eta)
    phase_losses.append(float(loss))

    # phase 3: joint, sharpening gate
    kappas = cfg.gate.kappas(obj.W, n3)
    ad_phi = AdamState.zeros(phi.shape)
    ad_th = AdamState.zeros(th.shape)
    ad_eta = AdamState.zeros(1)
    gth = np.empty_like(th)
    for j in range(n3):
        loss, _, _, gphi, gtm, gtp, geta = obj(phi, th[:m], th[m:], eta[0], kappas[j])
        _check(loss, it + 1, cfg.divergence_threshold)
        trace[it] = loss
        it += 1
        gth[:m], gth[m:] = gtm, gtp
        ad_phi.update_(phi, gphi, lr_net)
        ad_th.update_(th, gth, lr_th)
        ad_eta.update_(eta, np.array([geta]), lr_eta)
    phase_losses.append(float(loss))
    kappa_final = float(kappas[-1]) if n3 else k0
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(th)) and np.isfinite(eta[0])):
        raise TrainingError("non-finite parameters after Stage II", iteration=it)
    # energy at the final state
    _, _, energy, *_ = obj(phi, th[:m], th[m:], eta[0], kappa_final)
    return params, th[:m].copy(), th[m:].copy(), float(eta[0]), kappa_final, phase_losses, \
        float(energy), trace


def refine(dataset, system, candidate: Candidate, config: RefineConfig | None = None,
           seed: int = 0) -> RefineResult:
    """Estimate one change point and the two adjacent regimes on ``candidate.interval``."""
    system = get_system(system if system is not None else dataset.system)
    cfg = config or RefineConfig()
    t_L, t_R = (float(v) for v in candidate.interval)
    if not t_R > t_L:
        raise CandidateError(f"empty candidate interval [{t_L}, {t_R}]")
    t = dataset.obs_times
    tol = 1e-9 * max(1.0, abs(t_R))
    mask = (t >= t_L - tol) & (t <= t_R + tol)
    if int(mask.sum()) < 4:
        raise CandidateError(f"candidate [{t_L}, {t_R}] has {int(mask.sum())} observations; need ≥ 4")
    tl = np.asarray(candidate.theta_left, dtype=float).reshape(system.param_dim)
    tr = np.asarray(candidate.theta_right, dtype=float).reshape(system.param_dim)
    if not (np.all(np.isfinite(tl)) and np.all(np.isfinite(tr))):
        raise CandidateError("neighbour parameter estimates must be finite")
    obs_t, obs_x = t[mask], dataset.obs_states[mask]
    col_t, col_w = collocation_grid(t_L, t_R, cfg.collocation_count)
    scaling = Scaling.for_window(t_L, t_R, obs_t, obs_x)
    spec = cfg.mlp(system.state_dim)
    obj = Stage2Objective(spec, system, obs_t, obs_x, col_t, col_w, t_L, t_R, scaling,
                          cfg.data_weight, cfg.lam, cfg.reg_lambda)
    cur_seed, lr_scale = int(seed), 1.0
    last: TrainingError | None = None
    for attempt in range(cfg.max_restarts + 1):
        try:
            params, tm, tp, eta, kf, pl, energy, trace = _train(
                obj, spec, cfg, tl, tr, cur_seed, candidate.task_id, lr_scale)
        except TrainingError as exc:
            last = exc
            cur_seed, lr_scale = cur_seed + 1, 0.5 * lr_scale
            continue
        return RefineResult(
            interval=(t_L, t_R), tau_hat=tau_of_eta(eta, t_L, t_R), eta=eta, kappa_final=kf,
            theta_minus=tm, theta_plus=tp, phase_losses=pl, physics_energy=energy,
            loss_trace=trace, params=params, scaling=scaling, seed=cur_seed, restarts=attempt,
        )
    raise TrainingError(f"Stage II on [{t_L}, {t_R}] diverged after {cfg.max_restarts} "
                        f"restart(s): {last}", iteration=getattr(last, "iteration", None))
