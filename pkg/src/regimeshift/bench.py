"""Compiled vs numpy kernel benchmark (one loss + gradient evaluation per call)."""
from __future__ import annotations

import time

import numpy as np

from .dynamics import get_system
from .kernels import available_backends

__all__ = ["bench_kernels"]


def bench_kernels(system: str = "vanderpol", hidden_layers: int = 4, width: int = 32,
                  n_obs: int = 21, n_col: int = 50, repeats: int = 1000, seed: int = 0) -> dict:
    """Time ``loss_grad`` on every available backend with identical inputs.

    Returns per-backend microseconds per call, the speedup of the compiled
    kernel over numpy, and the largest absolute difference in the outputs.
    """
    sp = get_system(system)
    sizes = (1,) + (width,) * hidden_layers + (sp.state_dim,)
    rng = np.random.default_rng(seed)
    backends = available_backends()
    probe = backends["python"].PinnKernel(sizes, n_obs, n_col, sp.kernel_id, sp.constants_array())
    params = rng.normal(size=probe.n_params) * 0.2
    s = np.ascontiguousarray(rng.uniform(-1, 1, n_obs + n_col))
    x_obs = np.ascontiguousarray(rng.normal(size=(n_obs, sp.state_dim)))
    v = np.full(n_obs, 1.0 / n_obs)
    w = np.full(n_col, 1.0 / n_col)
    theta = np.ascontiguousarray(rng.uniform(0.5, 1.5, (n_col, sp.param_dim)))
    mu, beta, sigma = np.zeros(sp.state_dim), np.zeros(sp.state_dim), np.ones(sp.state_dim)
    out = {"system": sp.name, "sizes": list(sizes), "n_obs": n_obs, "n_col": n_col,
           "repeats": repeats, "us_per_call": {}}
    results = {}
    for name, mod in backends.items():
        k = mod.PinnKernel(sizes, n_obs, n_col, sp.kernel_id, sp.constants_array())
        grad = np.zeros(probe.n_params)
        gth = np.zeros((n_col, sp.param_dim))
        args = (params, s, x_obs, v, w, theta, mu, beta, sigma, 1.0, 1.0, 0.0, grad, gth)
        k.loss_grad(*args)  # warm-up
        t = time.perf_counter()
        for _ in range(repeats):
            loss = k.loss_grad(*args)
        out["us_per_call"][name] = (time.perf_counter() - t) / repeats * 1e6
        results[name] = (np.array(loss), grad.copy(), gth.copy())
    if "cython" in results:
        a, b = results["python"], results["cython"]
        out["speedup"] = out["us_per_call"]["python"] / out["us_per_call"]["cython"]
        out["max_abs_diff"] = float(max(np.max(np.abs(x - y)) for x, y in zip(a, b)))
    else:
        out["speedup"] = None
        out["max_abs_diff"] = None
    return out
