"""Comparison detectors run on the Stage I windowed estimates θ̂_k.

* :func:`pelt_segment` — exact penalised least-squares segmentation (PELT),
  with :func:`exhaustive_segment` as the unpruned dynamic program it must match.
* :func:`gmm_em_1d` + :func:`changepoint_probability` — per-parameter
  Gaussian mixtures and the three-point consistency measure
  ``p_i(t) = 1 − Σ_k γ_k(t−Δt) γ_k(t) γ_k(t+Δt)``.

Both consume the θ̂_k sequence indexed by window-centre time.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "SegmentationResult",
    "pelt_segment",
    "exhaustive_segment",
    "default_psi",
    "GaussianMixture",
    "gmm_em_1d",
    "ChangeProbability",
    "three_point_measure",
    "changepoint_probability",
    "GmmChangeReport",
    "BaselineReport",
    "run_baselines",
]


# --------------------------------------------------------------------------- PELT


@dataclass(frozen=True)
class SegmentationResult:
    """``breakpoints[j]`` is the index of the first sample of segment ``j + 1``."""

    breakpoints: tuple[int, ...]
    segment_means: np.ndarray
    cost: float
    psi: float
    n: int

    def segments(self) -> list[tuple[int, int]]:
        edges = (0,) + self.breakpoints + (self.n,)
        return list(zip(edges[:-1], edges[1:]))

    def to_dict(self) -> dict:
        return {
            "breakpoints": list(self.breakpoints),
            "segment_means": self.segment_means.tolist(),
            "cost": self.cost,
            "psi": self.psi,
            "n": self.n,
        }


def _as_series(sequence) -> np.ndarray:
    y = np.asarray(sequence, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] == 0:
        raise DomainError("segmentation needs a non-empty (n,) or (n, d) series")
    if not np.all(np.isfinite(y)):
        raise DomainError("segmentation input contains non-finite values")
    return y


class _SegmentCost:
    """SSE of ``y[s:t]`` about its mean, summed over components, via prefix sums."""

    def __init__(self, y: np.ndarray):
        self.S1 = np.vstack([np.zeros(y.shape[1]), np.cumsum(y, axis=0)])
        self.S2 = np.concatenate([[0.0], np.cumsum(np.sum(y * y, axis=1))])

    def __call__(self, s: int, t: int) -> float:
        d = self.S1[t] - self.S1[s]
        c = (self.S2[t] - self.S2[s]) - float(d @ d) / (t - s)
        return c if c > 0.0 else 0.0

    def many(self, s: np.ndarray, t: int) -> np.ndarray:
        d = self.S1[t][None, :] - self.S1[s]
        c = (self.S2[t] - self.S2[s]) - np.sum(d * d, axis=1) / (t - s)
        return np.maximum(c, 0.0)


def _finish(y: np.ndarray, last: np.ndarray, F: np.ndarray, psi: float) -> SegmentationResult:
    n = y.shape[0]
    bps = []
    t = n
    while t > 0:
        s = int(last[t])
        if s > 0:
            bps.append(s)
        t = s
    bps.reverse()
    edges = [0] + bps + [n]
    means = np.array([y[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    return SegmentationResult(tuple(bps), means, float(F[n]), float(psi), n)


def _check_psi(psi: float) -> float:
    psi = float(psi)
    if not psi > 0 or not math.isfinite(psi):
        raise DomainError("penalty psi must be positive and finite")
    return psi


def pelt_segment(sequence, psi: float) -> SegmentationResult:
    """Exact minimiser of ``Σ_segments SSE + ψ·(#breakpoints)`` with PELT pruning.

    Ties go to the smallest last-segment start, the same rule as
    :func:`exhaustive_segment`, so the two agree exactly.
    """
    y = _as_series(sequence)
    psi = _check_psi(psi)
    n = y.shape[0]
    cost = _SegmentCost(y)
    F = np.empty(n + 1)
    F[0] = -psi
    last = np.zeros(n + 1, dtype=np.int64)
    R = np.array([0], dtype=np.int64)
    for t in range(1, n + 1):
        vals = F[R] + cost.many(R, t)
        j = int(np.argmin(vals))          # first minimum = smallest start
        F[t] = vals[j] + psi
        last[t] = R[j]
        # a start s stays useful only if F[s] + C(s, t) ≤ F[t] (SSE is split-subadditive)
        # (tiny slack keeps rounding from pruning a start the full DP would pick)
        R = np.append(R[vals <= F[t] + 1e-12 * (abs(F[t]) + 1.0)], t)
    return _finish(y, last, F, psi)


def exhaustive_segment(sequence, psi: float) -> SegmentationResult:
    """The same optimal-partition recursion with every start kept (O(n²))."""
    y = _as_series(sequence)
    psi = _check_psi(psi)
    n = y.shape[0]
    cost = _SegmentCost(y)
    F = np.empty(n + 1)
    F[0] = -psi
    last = np.zeros(n + 1, dtype=np.int64)
    for t in range(1, n + 1):
        starts = np.arange(t)
        vals = F[:t] + cost.many(starts, t)
        j = int(np.argmin(vals))
        F[t] = vals[j] + psi
        last[t] = j
    return _finish(y, last, F, psi)


_CHI2_1_MEDIAN = 0.45493642311957283  # median of a chi-square(1) variable


def default_psi(sequence) -> float:
    """``2·m·log(K)·σ̂²`` with σ̂² a robust per-window noise variance.

    ``m`` is the number of components, ``K`` the sequence length.  Per
    component, σ̂² = median((Δy)²) / (2·q) where ``q`` is the median of a χ²₁
    variable, so σ̂² is consistent for i.i.d. Gaussian noise; σ̂² is then
    averaged over components.  First differences make the estimate
    insensitive to the few regime jumps.
    """
    y = _as_series(sequence)
    K, m = y.shape
    if K < 3:
        return 1.0
    d2 = np.median(np.diff(y, axis=0) ** 2, axis=0) / (2.0 * _CHI2_1_MEDIAN)
    s2 = float(np.mean(d2))
    if not s2 > 0:
        s2 = 1e-12 * (float(np.mean(np.var(y, axis=0))) + 1.0)
    return 2.0 * m * math.log(K) * s2


# --------------------------------------------------------------------------- EM-GMM


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    posteriors: np.ndarray
    loglik_trace: np.ndarray
    restart: int
    warnings: tuple[str, ...] = ()

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "loglik": self.loglik,
            "iterations": int(len(self.loglik_trace) - 1),
            "restart": self.restart,
            "warnings": list(self.warnings),
        }


def _log_density(x, mu, var):
    return -0.5 * (np.log(2.0 * np.pi * var)[None, :] + (x[:, None] - mu[None, :]) ** 2 / var[None, :])


def _e_step(x, w, mu, var):
    with np.errstate(divide="ignore"):
        logp = _log_density(x, mu, var) + np.log(w)[None, :]
    mx = logp.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logp - mx).sum(axis=1))
    return np.exp(logp - lse[:, None]), float(lse.sum())


def _em(x, mu0, var_floor, iters, tol):
    n, K = len(x), len(mu0)
    w = np.full(K, 1.0 / K)
    mu = np.array(mu0, dtype=float)
    var = np.full(K, max(float(np.var(x)), var_floor))
    floored = False
    gamma, ll = _e_step(x, w, mu, var)
    trace = [ll]
    for _ in range(iters):
        nk = gamma.sum(axis=0)
        live = nk > 1e-300
        w = nk / n
        mu = np.where(live, (gamma * x[:, None]).sum(axis=0) / np.where(live, nk, 1.0), mu)
        var = np.where(live, (gamma * (x[:, None] - mu[None, :]) ** 2).sum(axis=0)
                       / np.where(live, nk, 1.0), var)
        if np.any(var < var_floor):
            floored = True
            var = np.maximum(var, var_floor)
        gamma, ll = _e_step(x, w, mu, var)
        trace.append(ll)
        if abs(trace[-1] - trace[-2]) <= tol * (1.0 + abs(trace[-2])):
            break
    return w, mu, var, gamma, np.array(trace), floored


def gmm_em_1d(values, K: int = 3, iters: int = 500, seed: int = 0, restarts: int = 5,
              tol: float = 1e-10) -> GaussianMixture:
    """EM for a K-component 1-D Gaussian mixture; best of ``restarts`` runs.

    Run 0 starts from quantile-spread means; later runs draw K distinct
    sample values as means.  All runs use equal weights and the pooled
    variance.  A variance that would fall below ``1e-8·var(values)`` is held
    there and reported in ``warnings``.
    """
    x = np.asarray(values, dtype=float).ravel()
    K = int(K)
    if K < 1:
        raise ConfigError("GMM needs K ≥ 1")
    if len(x) < K:
        raise DomainError(f"GMM with K={K} needs at least {K} values (got {len(x)})")
    if not np.all(np.isfinite(x)):
        raise DomainError("GMM input contains non-finite values")
    if iters < 1 or restarts < 1:
        raise ConfigError("iters and restarts must be ≥ 1")
    v = float(np.var(x))
    var_floor = 1e-8 * v if v > 0 else 1e-12 * (float(np.mean(x)) ** 2 + 1.0)
    rng = np.random.default_rng(seed)
    best = None
    for r in range(restarts):
        if r == 0:
            mu0 = np.quantile(x, (np.arange(K) + 0.5) / K)
        else:
            mu0 = np.sort(rng.choice(x, size=K, replace=False))
        w, mu, var, gamma, trace, floored = _em(x, mu0, var_floor, iters, tol)
        if best is None or trace[-1] > best[4][-1] + 1e-12 * abs(best[4][-1]):
            best = (w, mu, var, gamma, trace, floored, r)
    w, mu, var, gamma, trace, floored, r = best
    order = np.argsort(mu, kind="stable")
    notes = ()
    if floored:
        msg = f"GMM variance collapse: floored at {var_floor:.3e}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes = (msg,)
    return GaussianMixture(w[order], mu[order], var[order], gamma[:, order], trace, r, notes)


# --------------------------------------------------------------------------- change probability


@dataclass(frozen=True)
class ChangeProbability:
    times: np.ndarray
    p_components: np.ndarray        # (d, n)
    p: np.ndarray                   # (n,)
    peaks: tuple[float, ...]        # peak times, strongest first
    peak_values: tuple[float, ...]
    intervals: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "p_components": self.p_components.tolist(),
            "p": self.p.tolist(),
            "peaks": list(self.peaks),
            "peak_values": list(self.peak_values),
            "intervals": [list(iv) for iv in self.intervals],
        }


def three_point_measure(gamma) -> np.ndarray:
    """``1 − Σ_k γ(t−1)γ(t)γ(t+1)`` with each endpoint duplicated outward."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 2 or g.shape[0] < 3:
        raise DomainError("three-point measure needs an (n ≥ 3, K) posterior array")
    prev = np.vstack([g[:1], g[:-1]])
    nxt = np.vstack([g[1:], g[-1:]])
    p = 1.0 - np.sum(prev * g * nxt, axis=1)
    return np.clip(p, 0.0, 1.0)


def _plateaus(p: np.ndarray) -> list[tuple[int, int]]:
    """Strict local maxima of ``p``, flat tops merged into ``[lo, hi]`` runs."""
    out = []
    n, i = len(p), 0
    while i < n:
        j = i
        while j + 1 < n and p[j + 1] == p[i]:
            j += 1
        left_ok = i == 0 or p[i - 1] < p[i]
        right_ok = j == n - 1 or p[j + 1] < p[i]
        if left_ok and right_ok and p[i] > 0:
            out.append((i, j))
        i = j + 1
    return out


def changepoint_probability(posteriors: Sequence, dt: float = 1.0, times=None,
                            n_peaks: int | None = None, neighborhood: int = 2,
                            threshold: float = 0.5) -> ChangeProbability:
    """Per-parameter and combined change probability, peaks and intervals.

    ``posteriors`` is a list (one entry per parameter) of ``(n, K_i)`` arrays.
    Peaks are local maxima of the combined ``p``; a flat top counts once, at
    the mean time of its run.  With ``n_peaks=None`` every peak with
    ``p ≥ threshold`` is kept.  For each peak and parameter, ``τ̂_ij`` is the
    mean time of the maximisers of ``p_i`` within ``±neighborhood`` samples;
    parameters whose ``p_i`` is zero there are skipped.  The interval is
    ``[min_i τ̂_ij, max_i τ̂_ij]``.
    """
    comps = [three_point_measure(g) for g in posteriors]
    if not comps:
        raise DomainError("no posteriors given")
    n = len(comps[0])
    if any(len(c) != n for c in comps):
        raise DomainError("posterior arrays have different lengths")
    P = np.vstack(comps)
    p = P.mean(axis=0)
    t = np.arange(n) * float(dt) if times is None else np.asarray(times, dtype=float)
    if len(t) != n:
        raise DomainError("times and posteriors differ in length")
    runs = _plateaus(p)
    runs.sort(key=lambda r: (-p[r[0]], r[0]))
    if n_peaks is None:
        runs = [r for r in runs if p[r[0]] >= threshold]
    else:
        runs = runs[: int(n_peaks)]
    peaks, vals, intervals = [], [], []
    for lo, hi in runs:
        peaks.append(float(np.mean(t[lo:hi + 1])))
        vals.append(float(p[lo]))
        a, b = max(lo - neighborhood, 0), min(hi + neighborhood, n - 1)
        taus = []
        for pi in P:
            seg = pi[a:b + 1]
            mx = seg.max()
            if mx > 0:
                taus.append(float(np.mean(t[a:b + 1][seg == mx])))
        intervals.append((min(taus), max(taus)) if taus else (peaks[-1], peaks[-1]))
    return ChangeProbability(t, P, p, tuple(peaks), tuple(vals), tuple(intervals))


@dataclass(frozen=True)
class GmmChangeReport:
    mixtures: tuple[GaussianMixture, ...]
    probability: ChangeProbability

    def to_dict(self) -> dict:
        return {"mixtures": [m.to_dict() for m in self.mixtures],
                "probability": self.probability.to_dict()}


# --------------------------------------------------------------------------- report


@dataclass
class BaselineReport:
    centers: np.ndarray
    theta_hat: np.ndarray
    pelt: SegmentationResult
    pelt_times: tuple[float, ...]
    gmm: GmmChangeReport
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "centers": self.centers.tolist(),
            "theta_hat": self.theta_hat.tolist(),
            "pelt": dict(self.pelt.to_dict(), change_times=list(self.pelt_times)),
            "gmm": self.gmm.to_dict(),
            "squared_errors": self.errors,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _truth_errors(centers, pelt: SegmentationResult, mixtures, schedule) -> dict:
    """Squared errors of each detector's regime estimates against a truth schedule.

    PELT: the segment containing most of a regime's window centres supplies
    the estimate.  GMM: per parameter, the component with the largest total
    posterior over the regime's windows supplies its mean.
    """
    idx = schedule.regime_indices(centers)
    seg_of = np.zeros(len(centers), dtype=int)
    for j, (a, b) in enumerate(pelt.segments()):
        seg_of[a:b] = j
    pelt_err, gmm_err = [], []
    for r, truth in enumerate(schedule.regimes):
        sel = idx == r
        truth = np.asarray(truth, dtype=float)
        if not np.any(sel):
            pelt_err.append(None)
            gmm_err.append(None)
            continue
        seg = int(np.bincount(seg_of[sel]).argmax())
        pelt_err.append(((pelt.segment_means[seg] - truth) ** 2).tolist())
        est = [float(m.means[int(m.posteriors[sel].sum(axis=0).argmax())]) for m in mixtures]
        gmm_err.append(((np.array(est) - truth) ** 2).tolist())
    bps = list(schedule.breakpoints)
    return {"regimes": [list(map(float, r)) for r in schedule.regimes], "breakpoints": bps,
            "pelt": pelt_err, "gmm": gmm_err}


def run_baselines(centers, theta_hat, psi: float | None = None, gmm_k: int | Sequence[int] | None = None,
                  n_peaks: int | None = None, iters: int = 500, restarts: int = 5, seed: int = 0,
                  schedule=None) -> BaselineReport:
    """PELT and EM-GMM on the windowed estimates ``theta_hat[k]`` at ``centers[k]``.

    ``gmm_k`` defaults, per parameter, to the number of distinct values that
    component takes across the truth schedule's regimes, else 3.
    """
    c = np.asarray(centers, dtype=float)
    th = _as_series(theta_hat)
    if len(c) != th.shape[0]:
        raise DomainError("centers and theta_hat differ in length")
    if len(c) < 3:
        raise DomainError("baselines need at least 3 windows")
    psi_v = default_psi(th) if psi is None else float(psi)
    seg = pelt_segment(th, psi_v)
    times = tuple(float(0.5 * (c[b - 1] + c[b])) for b in seg.breakpoints)
    d = th.shape[1]
    if gmm_k is None:
        if schedule is not None:
            regs = np.asarray(schedule.regimes, dtype=float)
            ks = [len(np.unique(regs[:, i])) for i in range(d)]
        else:
            ks = [3] * d
    elif np.ndim(gmm_k) == 0:
        ks = [int(gmm_k)] * d
    else:
        ks = [int(k) for k in gmm_k]
    if len(ks) != d:
        raise ConfigError("gmm_k needs one entry per parameter")
    mixtures = tuple(gmm_em_1d(th[:, i], min(ks[i], len(c)), iters, seed + i, restarts)
                     for i in range(d))
    dt = float(np.median(np.diff(c)))
    prob = changepoint_probability([m.posteriors for m in mixtures], dt, times=c, n_peaks=n_peaks)
    errors = _truth_errors(c, seg, mixtures, schedule) if schedule is not None else {}
    return BaselineReport(c, th, seg, times, GmmChangeReport(mixtures, prob), errors)
