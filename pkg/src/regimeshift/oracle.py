"""Training-free exact computations for parameter-affine systems.

For ``f = G(x) θ + b(x)`` and an exact trajectory, the continuous-time window
residual ``R(θ) = ∫_window ‖ẋ − Gθ − b‖² dt`` is a convex quadratic in θ.
Its minimizer solves the normal equations ``M(window) θ = ∫ Gᵀ(ẋ − b) dt`` with
``M(J) = ∫_J GᵀG dt``; the minimum is the residual floor of the window.

Conventions used throughout:

* ``ẋ`` is evaluated from the vector field with the true schedule, never
  differenced numerically.
* Quadrature is the composite trapezoid rule on the trajectory grid, split at
  every breakpoint strictly inside the window.  On the piece left of a
  breakpoint the left-limit parameters are used at the breakpoint node; the
  node itself belongs to the right piece (right-continuity).  With this split
  the floor equals the quadratic form of the proof exactly, up to rounding.
* A breakpoint counts as inside a window only if both sides are at least half
  a grid cell long; otherwise the window is non-crossing (empty-side case).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .dynamics import (RegimeSchedule, affine_parts_array, alpha_estimate, get_system,
                       grid_index, information_matrix, trapezoid_weights)
from .errors import DomainError, IdentifiabilityError

__all__ = [
    "WindowPiece",
    "window_pieces",
    "wls_theta",
    "weighted_avg_theta",
    "residual_at",
    "residual_floor",
    "Theorem2Bound",
    "theorem2_bound",
    "FloorCertificate",
    "certify_window",
    "certify_plan",
    "PostChangeCheck",
    "post_change_check",
    "write_certificates",
]

SINGULAR_TOL = 1e-12
NONCROSSING_TOL = 1e-10
CROSSING_SLACK = 1e-9


@dataclass(frozen=True)
class WindowPiece:
    """A single-regime piece ``[a, b]`` of a window with grid indices ``[ia, ib]``."""

    a: float
    b: float
    ia: int
    ib: int
    regime: int
    theta: np.ndarray

    @property
    def length(self) -> float:
        return self.b - self.a


def _schedule_of(trajectory, schedule: RegimeSchedule | None) -> RegimeSchedule:
    return schedule if schedule is not None else trajectory.schedule


def window_pieces(window, trajectory, schedule: RegimeSchedule | None = None) -> list[WindowPiece]:
    """Split ``window`` at interior breakpoints into single-regime pieces."""
    schedule = _schedule_of(trajectory, schedule)
    a, b = (float(v) for v in window)
    if not b > a:
        raise DomainError(f"empty window [{a}, {b}]")
    times = trajectory.times
    dt = float(times[1] - times[0])
    ia, ib = grid_index(times, a), grid_index(times, b)
    cuts = [a]
    for tau in schedule.breakpoints:
        if tau - a > 0.5 * dt and b - tau > 0.5 * dt:
            cuts.append(float(times[grid_index(times, tau)]))
    cuts.append(b)
    pieces = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        i0 = ia if lo == a else grid_index(times, lo)
        i1 = ib if hi == b else grid_index(times, hi)
        mid = 0.5 * (lo + hi)
        r = schedule.regime_index(mid)
        pieces.append(WindowPiece(lo, hi, i0, i1, r, np.asarray(schedule.regimes[r], dtype=float)))
    return pieces


def _piece_arrays(system, trajectory, piece: WindowPiece):
    x = trajectory.states[piece.ia:piece.ib + 1]
    G, bvec = affine_parts_array(system, x)
    xdot = np.einsum("knm,m->kn", G, piece.theta) + bvec
    w = trapezoid_weights(piece.ib - piece.ia + 1, float(trajectory.times[1] - trajectory.times[0]))
    return G, bvec, xdot, w


def _normal_equations(window, trajectory, system, schedule):
    m = system.param_dim
    M = np.zeros((m, m))
    rhs = np.zeros(m)
    for p in window_pieces(window, trajectory, schedule):
        G, bvec, xdot, w = _piece_arrays(system, trajectory, p)
        M += np.einsum("k,kni,knj->ij", w, G, G)
        rhs += np.einsum("k,kni,kn->i", w, G, xdot - bvec)
    return 0.5 * (M + M.T), rhs


def wls_theta(window, trajectory, system=None, schedule: RegimeSchedule | None = None) -> np.ndarray:
    """Unique minimizer of the window residual (normal equations)."""
    system = get_system(system if system is not None else trajectory.system)
    schedule = _schedule_of(trajectory, schedule)
    M, rhs = _normal_equations(window, trajectory, system, schedule)
    lam = float(np.linalg.eigvalsh(M)[0])
    if lam <= SINGULAR_TOL:
        raise IdentifiabilityError(
            f"information matrix on {tuple(window)} is singular (λ_min = {lam:.3e})", lambda_min=lam
        )
    return np.linalg.solve(M, rhs)


def weighted_avg_theta(len_minus: float, len_plus: float, theta_minus, theta_plus) -> np.ndarray:
    """``(|I⁻| θ⁻ + |I⁺| θ⁺) / (|I⁻| + |I⁺|)``."""
    if len_minus < 0 or len_plus < 0:
        raise DomainError("lengths must be non-negative")
    total = len_minus + len_plus
    if total == 0:
        raise DomainError("both lengths are zero")
    tm = np.asarray(theta_minus, dtype=float)
    tp = np.asarray(theta_plus, dtype=float)
    return (len_minus * tm + len_plus * tp) / total


def residual_at(window, trajectory, theta, system=None, schedule: RegimeSchedule | None = None) -> float:
    """``R(θ) = ∫_window ‖ẋ − Gθ − b‖² dt`` by split trapezoid quadrature."""
    system = get_system(system if system is not None else trajectory.system)
    schedule = _schedule_of(trajectory, schedule)
    theta = np.asarray(theta, dtype=float).reshape(system.param_dim)
    total = 0.0
    for p in window_pieces(window, trajectory, schedule):
        G, bvec, xdot, w = _piece_arrays(system, trajectory, p)
        r = xdot - np.einsum("knm,m->kn", G, theta) - bvec
        total += float(np.sum(w * np.sum(r * r, axis=1)))
    return total


def residual_floor(window, trajectory, system=None, schedule: RegimeSchedule | None = None) -> float:
    """Minimum over constant θ of the window residual."""
    system = get_system(system if system is not None else trajectory.system)
    theta = wls_theta(window, trajectory, system, schedule)
    return residual_at(window, trajectory, theta, system, schedule)


class Theorem2Bound(NamedTuple):
    full: float
    simplified: float


def theorem2_bound(len_minus: float, len_plus: float, delta_theta, alpha: float) -> Theorem2Bound:
    """``α·ab/(a+b)·‖Δθ‖²`` and the simplified ``(α/2)·min(a,b)·‖Δθ‖²``."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    a, b = float(len_minus), float(len_plus)
    if a < 0 or b < 0:
        raise DomainError("lengths must be non-negative")
    if a + b == 0:
        raise DomainError("|I⁻| + |I⁺| = 0")
    d2 = float(np.sum(np.square(np.asarray(delta_theta, dtype=float))))
    return Theorem2Bound(alpha * a * b / (a + b) * d2, 0.5 * alpha * min(a, b) * d2)


@dataclass(frozen=True)
class FloorCertificate:
    window: tuple[float, float]
    crossing: bool
    floor: float
    bound: float
    bound_simplified: float
    alpha: float | None
    len_minus: float
    len_plus: float
    delta_theta: tuple[float, ...]

    @property
    def margin(self) -> float:
        """Positive when the certificate holds (with the stated tolerances)."""
        if self.crossing:
            return self.floor - self.bound + CROSSING_SLACK
        return NONCROSSING_TOL - self.floor

    @property
    def passed(self) -> bool:
        return self.margin >= 0.0

    def to_dict(self) -> dict:
        return {
            "window": list(self.window),
            "crossing": self.crossing,
            "floor": self.floor,
            "bound": self.bound,
            "bound_simplified": self.bound_simplified,
            "alpha": self.alpha,
            "len_minus": self.len_minus,
            "len_plus": self.len_plus,
            "delta_theta": list(self.delta_theta),
            "margin": self.margin,
            "passed": self.passed,
        }


def certify_window(window, trajectory, system=None, schedule: RegimeSchedule | None = None,
                   alpha: float | None = None) -> FloorCertificate:
    """Floor, change-point lower bound and pass/fail for one window.

    ``alpha`` defaults to :func:`alpha_estimate` over the window's two
    single-regime pieces.  Windows containing more than one breakpoint are
    certified against their first breakpoint's pieces merged on each side
    (the default plans never produce such windows).
    """
    system = get_system(system if system is not None else trajectory.system)
    schedule = _schedule_of(trajectory, schedule)
    a, b = (float(v) for v in window)
    pieces = window_pieces((a, b), trajectory, schedule)
    floor = residual_floor((a, b), trajectory, system, schedule)
    if len(pieces) == 1:
        return FloorCertificate((a, b), False, floor, 0.0, 0.0, None, b - a, 0.0,
                                (0.0,) * system.param_dim)
    left, right = pieces[0], pieces[1]
    tau = left.b
    lm, lp = tau - a, b - tau
    if alpha is None:
        alpha = alpha_estimate(system, trajectory, [(a, tau), (tau, b)])
    dtheta = right.theta - left.theta
    bd = theorem2_bound(lm, lp, dtheta, alpha)
    return FloorCertificate((a, b), True, floor, bd.full, bd.simplified, float(alpha), lm, lp,
                            tuple(float(v) for v in dtheta))


def certify_plan(windows: Iterable[Sequence[float]], trajectory, system=None,
                 schedule: RegimeSchedule | None = None) -> list[FloorCertificate]:
    return [certify_window(w, trajectory, system, schedule) for w in windows]


@dataclass(frozen=True)
class PostChangeCheck:
    interval: tuple[float, float]
    residual_norm: float
    gamma_plus: float
    theta_error: float

    @property
    def bound(self) -> float:
        return self.gamma_plus * self.theta_error

    @property
    def margin(self) -> float:
        return self.residual_norm - self.bound + CROSSING_SLACK

    @property
    def passed(self) -> bool:
        return self.margin >= 0.0

    def __iter__(self):
        # unpacks as (residual_norm, gamma_plus, pass)
        return iter((self.residual_norm, self.gamma_plus, self.passed))


def post_change_check(E_plus, trajectory, system=None, schedule: RegimeSchedule | None = None,
                      theta_tilde=None) -> PostChangeCheck:
    """Check ``‖ẋ − f(x; θ̃)‖_{L²(E₊)} ≥ sqrt(λ_min M(E₊)) · ‖θ⁺ − θ̃‖``.

    ``E_plus`` must lie inside a single regime; ``θ⁺`` is that regime's value.
    """
    system = get_system(system if system is not None else trajectory.system)
    schedule = _schedule_of(trajectory, schedule)
    a, b = (float(v) for v in E_plus)
    pieces = window_pieces((a, b), trajectory, schedule)
    if len(pieces) != 1:
        raise DomainError(f"E₊ = [{a}, {b}] crosses a breakpoint")
    theta_plus = pieces[0].theta
    theta_tilde = np.asarray(theta_tilde, dtype=float).reshape(system.param_dim)
    R = residual_at((a, b), trajectory, theta_tilde, system, schedule)
    lam = information_matrix(system, trajectory, (a, b)).lambda_min
    return PostChangeCheck((a, b), math.sqrt(max(R, 0.0)), math.sqrt(max(lam, 0.0)),
                           float(np.linalg.norm(theta_plus - theta_tilde)))


def write_certificates(certs: Sequence[FloorCertificate], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["a", "b", "crossing", "floor", "bound", "margin", "passed"])
        for c in certs:
            wr.writerow([repr(c.window[0]), repr(c.window[1]), int(c.crossing), repr(c.floor),
                         repr(c.bound), repr(c.margin), int(c.passed)])
