"""Pure-numpy implementation of the PINN training kernel.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled path is tested against.  Layout conventions are shared
with the extension: parameters are one flat float64 vector holding, layer by
layer, a row-major ``(out, in)`` weight matrix followed by its bias; a batch
holds ``n_obs`` data rows followed by ``n_col`` collocation rows.  The state
is ``x̂ = mu + beta * s + sigma * net(s)`` and ``dx̂/dt = tscale * (beta + sigma * net'(s))``.
"""
from __future__ import annotations

import numpy as np

from .dynamics import SYSTEMS, SystemSpec, affine_parts_array, state_jacobian_array

_BY_ID = {s.kernel_id: s for s in SYSTEMS.values()}


def param_offsets(sizes):
    """Return (weight offsets, bias offsets, total count)."""
    w_off, b_off = [], []
    pos = 0
    for fin, fout in zip(sizes[:-1], sizes[1:]):
        w_off.append(pos)
        pos += fin * fout
        b_off.append(pos)
        pos += fout
    return w_off, b_off, pos


class PinnKernel:
    def __init__(self, sizes, n_obs, n_col, system_id, consts):
        self.sizes = tuple(int(s) for s in sizes)
        self.n_obs = int(n_obs)
        self.n_col = int(n_col)
        self.system_id = int(system_id)
        base = _BY_ID[self.system_id]
        fixed = dict(base.fixed_constants)
        if "Q" in fixed:
            fixed["Q"] = float(consts[0])
        self._system = SystemSpec(base.name, base.state_dim, base.param_dim, base.state_names,
                                  base.param_names, base.kernel_id, fixed)
        self.w_off, self.b_off, self.n_params = param_offsets(self.sizes)

    def _layers(self, params):
        for l, (fin, fout) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            W = params[self.w_off[l]:self.w_off[l] + fin * fout].reshape(fout, fin)
            c = params[self.b_off[l]:self.b_off[l] + fout]
            yield W, c

    def _forward(self, params, s):
        N = len(s)
        A = np.empty((2 * N, 1))
        A[:N, 0] = s
        A[N:, 0] = 1.0
        acts, dzs = [A], []
        n_layers = len(self.sizes) - 1
        for l, (W, c) in enumerate(self._layers(params)):
            Z = A @ W.T
            Z[:N] += c
            if l < n_layers - 1:
                H = np.tanh(Z[:N])
                dz = Z[N:].copy()
                A = np.concatenate([H, (1.0 - H * H) * dz])
                dzs.append(dz)
            else:
                A = Z
            acts.append(A)
        return acts, dzs

    def forward(self, params, s):
        s = np.ascontiguousarray(s, dtype=float)
        acts, _ = self._forward(np.asarray(params, dtype=float), s)
        N = len(s)
        return acts[-1][:N].copy(), acts[-1][N:].copy()

    def _backward(self, params, acts, dzs, gout, grad):
        N = acts[0].shape[0] // 2
        layers = list(self._layers(params))
        gZ = gout
        for l in range(len(layers) - 1, -1, -1):
            W, _ = layers[l]
            fin, fout = W.shape[1], W.shape[0]
            A = acts[l]
            grad[self.w_off[l]:self.w_off[l] + fin * fout] = (gZ.T @ A).ravel()
            grad[self.b_off[l]:self.b_off[l] + fout] = gZ[:N].sum(axis=0)
            if l > 0:
                gA = gZ @ W
                H = A[:N]
                D = 1.0 - H * H
                gh, gdh = gA[:N], gA[N:]
                gZ = np.concatenate([gh * D - 2.0 * gdh * dzs[l - 1] * H * D, gdh * D])

    def loss_grad(self, params, s, x_obs, v, w, theta_pts, mu, beta, sigma, tscale, lam, reg,
                  grad, gtheta):
        params = np.asarray(params, dtype=float)
        s = np.asarray(s, dtype=float)
        N = len(s)
        no = self.n_obs
        acts, dzs = self._forward(params, s)
        Y = acts[-1][:N]
        dY = acts[-1][N:]
        n = Y.shape[1]
        gout = np.zeros((2 * N, n))

        e = mu + beta * s[:no, None] + sigma * Y[:no] - x_obs
        data_loss = float(np.sum(v[:, None] * e * e))
        gout[:no] = 2.0 * v[:, None] * e * sigma

        x = mu + beta * s[no:, None] + sigma * Y[no:]
        xd = tscale * (beta + sigma * dY[no:])
        G, b = affine_parts_array(self._system, x)
        f = np.einsum("knm,km->kn", G, theta_pts) + b
        J = state_jacobian_array(self._system, x, theta_pts)
        r = xd - f
        energy = float(np.sum(w * np.sum(r * r, axis=1)))
        gr = 2.0 * lam * w[:, None] * r
        gout[N + no:] = gr * sigma * tscale
        gout[no:N] = -np.einsum("kcd,kc->kd", J, gr) * sigma
        gtheta[:] = -np.einsum("kcm,kc->km", G, gr)

        self._backward(params, acts, dzs, gout, grad)
        loss = data_loss + lam * energy
        if reg > 0.0:
            loss += reg * float(params @ params)
            grad += 2.0 * reg * params
        return loss, data_loss, energy


def adam_update(x, g, m, v, step, lr, beta1, beta2, eps):
    """In-place Adam step with bias correction; ``step`` counts from 1."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    x -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


BACKEND = "python"
__all__ = ["PinnKernel", "adam_update", "param_offsets", "BACKEND"]
