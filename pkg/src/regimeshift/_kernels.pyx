# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled PINN training kernel.

Mirrors ``_kernels_py`` exactly in layout and semantics.  Matrix products go
through scipy's BLAS bindings; activations, residuals and the Adam update are
plain C loops.  Row-major ``X (a x b)`` is column-major ``X^T`` with leading
dimension ``b``; every dgemm below is written in those terms.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, sqrt, pow
from libc.string cimport memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "cython"

DEF MAXN = 3
DEF MAXM = 4


def param_offsets(sizes):
    w_off, b_off = [], []
    pos = 0
    for fin, fout in zip(sizes[:-1], sizes[1:]):
        w_off.append(pos)
        pos += fin * fout
        b_off.append(pos)
        pos += fout
    return w_off, b_off, pos


cdef inline void _gemm(char ta, char tb, int m, int n, int k, double* a, int lda,
                       double* b, int ldb, double beta, double* c, int ldc) noexcept nogil:
    cdef double one = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _system_terms(int sid, double Q, double* x, double* th,
                        double* f, double* G, double* J, int n, int m) noexcept nogil:
    """Fill f (n), G (n x m row-major) and J = df/dx (n x n row-major)."""
    cdef int i
    for i in range(n * m):
        G[i] = 0.0
    for i in range(n * n):
        J[i] = 0.0
    cdef double S, W, U, V, M, N
    if sid == 0:
        G[0] = x[0]
        f[0] = th[0] * x[0]
        J[0] = th[0]
    elif sid == 1:
        G[0] = x[0] * (1.0 - x[0] / Q)
        f[0] = th[0] * G[0]
        J[0] = th[0] * (1.0 - 2.0 * x[0] / Q)
    elif sid == 2:
        M = x[0]; N = x[1]
        G[1] = (1.0 - M * M) * N
        f[0] = N
        f[1] = th[0] * G[1] - M
        J[1] = 1.0
        J[2] = -2.0 * th[0] * M * N - 1.0
        J[3] = th[0] * (1.0 - M * M)
    elif sid == 3:
        S = x[0]; W = x[1]
        G[0] = S
        G[1] = -S * W
        G[6] = -W
        G[7] = S * W
        f[0] = S * (th[0] - th[1] * W)
        f[1] = -W * (th[2] - th[3] * S)
        J[0] = th[0] - th[1] * W
        J[1] = -th[1] * S
        J[2] = th[3] * W
        J[3] = -(th[2] - th[3] * S)
    else:
        U = x[0]; V = x[1]; W = x[2]
        G[0] = V - U
        G[4] = U
        G[8] = -W
        f[0] = th[0] * (V - U)
        f[1] = th[1] * U - V - U * W
        f[2] = U * V - th[2] * W
        J[0] = -th[0]; J[1] = th[0]
        J[3] = th[1] - W; J[4] = -1.0; J[5] = -U
        J[6] = V; J[7] = U; J[8] = -th[2]


cdef class PinnKernel:
    cdef public tuple sizes
    cdef public int n_obs, n_col, system_id, n_params
    cdef public list w_off, b_off
    cdef int n_layers, maxw, n_rows
    cdef double Q
    cdef int[::1] _woff, _boff, _sz
    cdef list _acts, _dzs
    cdef double[::1] _ga, _gb, _gout

    def __init__(self, sizes, int n_obs, int n_col, int system_id, consts):
        self.sizes = tuple(int(s) for s in sizes)
        self.n_obs = n_obs
        self.n_col = n_col
        self.system_id = system_id
        self.Q = float(consts[0]) if len(consts) else 0.0
        self.w_off, self.b_off, self.n_params = param_offsets(self.sizes)
        self.n_layers = len(self.sizes) - 1
        self.maxw = max(self.sizes)
        self._woff = np.asarray(self.w_off, dtype=np.intc)
        self._boff = np.asarray(self.b_off, dtype=np.intc)
        self._sz = np.asarray(self.sizes, dtype=np.intc)
        self.n_rows = -1
        self._ensure(n_obs + n_col)

    cdef void _ensure(self, int N):
        if N == self.n_rows:
            return
        cdef int l
        self.n_rows = N
        self._acts = []
        self._dzs = []
        for l in range(self.n_layers + 1):
            self._acts.append(np.zeros((2 * N, self.sizes[l])))
            if 0 < l < self.n_layers:
                self._dzs.append(np.zeros((N, self.sizes[l])))
        self._ga = np.zeros(2 * N * self.maxw)
        self._gb = np.zeros(2 * N * self.maxw)
        self._gout = np.zeros(2 * N * self.sizes[self.n_layers])

    cdef void _forward(self, const double[::1] p, const double[::1] s):
        cdef int N = s.shape[0]
        cdef int l, i, j, fin, fout
        cdef double[:, ::1] A, B, dz
        cdef double z, h
        self._ensure(N)
        A = self._acts[0]
        for i in range(N):
            A[i, 0] = s[i]
            A[N + i, 0] = 1.0
        for l in range(self.n_layers):
            fin = self._sz[l]
            fout = self._sz[l + 1]
            A = self._acts[l]
            B = self._acts[l + 1]
            _gemm(b'T', b'N', fout, 2 * N, fin, <double*>&p[self._woff[l]], fin, &A[0, 0], fin,
                  0.0, &B[0, 0], fout)
            for i in range(N):
                for j in range(fout):
                    B[i, j] += p[self._boff[l] + j]
            if l < self.n_layers - 1:
                dz = self._dzs[l]
                for i in range(N):
                    for j in range(fout):
                        h = tanh(B[i, j])
                        z = B[N + i, j]
                        dz[i, j] = z
                        B[i, j] = h
                        B[N + i, j] = (1.0 - h * h) * z

    cdef void _backward(self, const double[::1] p, double* gout, double[::1] grad):
        cdef int N = self.n_rows
        cdef int l, i, j, fin, fout
        cdef double[:, ::1] A, dz
        cdef double* gz = gout
        cdef double* ga
        cdef double* tmp
        cdef double h, d, gh, gdh, acc
        cdef double* bufa = &self._ga[0]
        cdef double* bufb = &self._gb[0]
        for l in range(self.n_layers - 1, -1, -1):
            fin = self._sz[l]
            fout = self._sz[l + 1]
            A = self._acts[l]
            _gemm(b'N', b'T', fin, fout, 2 * N, &A[0, 0], fin, gz, fout,
                  0.0, &grad[self._woff[l]], fin)
            for j in range(fout):
                acc = 0.0
                for i in range(N):
                    acc += gz[i * fout + j]
                grad[self._boff[l] + j] = acc
            if l > 0:
                ga = bufa
                _gemm(b'N', b'N', fin, 2 * N, fout, <double*>&p[self._woff[l]], fin, gz, fout,
                      0.0, ga, fin)
                dz = self._dzs[l - 1]
                for i in range(N):
                    for j in range(fin):
                        h = A[i, j]
                        d = 1.0 - h * h
                        gh = ga[i * fin + j]
                        gdh = ga[(N + i) * fin + j]
                        ga[i * fin + j] = gh * d - 2.0 * gdh * dz[i, j] * h * d
                        ga[(N + i) * fin + j] = gdh * d
                gz = ga
                tmp = bufa
                bufa = bufb
                bufb = tmp

    def forward(self, params, s):
        cdef double[::1] p = np.ascontiguousarray(params, dtype=float)
        cdef double[::1] sv = np.ascontiguousarray(s, dtype=float)
        self._forward(p, sv)
        out = self._acts[self.n_layers]
        N = sv.shape[0]
        return np.array(out[:N]), np.array(out[N:])

    def loss_grad(self, const double[::1] params, const double[::1] s,
                  const double[:, ::1] x_obs, const double[::1] v, const double[::1] w,
                  const double[:, ::1] theta_pts, const double[::1] mu, const double[::1] beta,
                  const double[::1] sigma, double tscale, double lam, double reg,
                  double[::1] grad, double[:, ::1] gtheta):
        cdef int N = s.shape[0]
        cdef int no = self.n_obs
        cdef int n = self._sz[self.n_layers]
        cdef int m = theta_pts.shape[1]
        cdef int i, q, c, k, row
        cdef double e, data_loss = 0.0, energy = 0.0, r2, coef, acc
        cdef double x[MAXN]
        cdef double f[MAXN]
        cdef double r[MAXN]
        cdef double gr[MAXN]
        cdef double G[MAXN * MAXM]
        cdef double J[MAXN * MAXN]
        cdef double[:, ::1] Y
        cdef double* go
        self._forward(params, s)
        Y = self._acts[self.n_layers]
        go = &self._gout[0]
        memset(go, 0, 2 * N * n * sizeof(double))
        for i in range(no):
            for c in range(n):
                e = mu[c] + beta[c] * s[i] + sigma[c] * Y[i, c] - x_obs[i, c]
                data_loss += v[i] * e * e
                go[i * n + c] = 2.0 * v[i] * e * sigma[c]
        for q in range(self.n_col):
            row = no + q
            for c in range(n):
                x[c] = mu[c] + beta[c] * s[row] + sigma[c] * Y[row, c]
            _system_terms(self.system_id, self.Q, x, <double*>&theta_pts[q, 0], f, G, J, n, m)
            r2 = 0.0
            for c in range(n):
                r[c] = tscale * (beta[c] + sigma[c] * Y[N + row, c]) - f[c]
                r2 += r[c] * r[c]
            energy += w[q] * r2
            coef = 2.0 * lam * w[q]
            for c in range(n):
                gr[c] = coef * r[c]
                go[(N + row) * n + c] = gr[c] * sigma[c] * tscale
            for c in range(n):
                acc = 0.0
                for k in range(n):
                    acc -= J[k * n + c] * gr[k]
                go[row * n + c] = acc * sigma[c]
            for k in range(m):
                acc = 0.0
                for c in range(n):
                    acc -= G[c * m + k] * gr[c]
                gtheta[q, k] = acc
        self._backward(params, go, grad)
        cdef double loss = data_loss + lam * energy
        cdef double pp = 0.0
        if reg > 0.0:
            for i in range(params.shape[0]):
                pp += params[i] * params[i]
                grad[i] += 2.0 * reg * params[i]
            loss += reg * pp
        return loss, data_loss, energy


def adam_update(double[::1] x, const double[::1] g, double[::1] m, double[::1] v, long step,
                double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    for i in range(x.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        x[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
