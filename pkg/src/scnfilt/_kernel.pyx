# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled network run loop.

Mirrors scnfilt._backend.run_network_python operation for operation: all
reductions go through BLAS dgemv on the same buffers numpy would hand to it,
elementwise passes keep the same order, and the module is compiled with
-ffp-contract=off, so the two backends produce bit-identical trajectories.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite
from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()


cdef inline void gemv_c(double* a, int rows, int cols, double* x, double* y) noexcept nogil:
    """y = A x for row-major A (rows x cols)."""
    cdef int m = cols
    cdef int n = rows
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef int inc = 1
    cdef char t = b'T'
    dgemv(&t, &m, &n, &one, a, &m, x, &inc, &zero, y, &inc)


cdef inline void gemv_t(double* a, int rows, int cols, double* x, double* y) noexcept nogil:
    """y = A^T x for row-major A (rows x cols); y has length cols."""
    cdef int m = cols
    cdef int n = rows
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef int inc = 1
    cdef char t = b'N'
    dgemv(&t, &m, &n, &one, a, &m, x, &inc, &zero, y, &inc)


def run_network(double[:, ::1] D, double[:, ::1] Alam, double[:, ::1] B,
                double[:, ::1] C, double[:, ::1] Cpinv, double[:, ::1] Omega_f,
                double[::1] T, double[:, ::1] u_seq, double[:, ::1] z_seq,
                double[:, :, ::1] K_seq, int innov_mode, double delta,
                double lam, double dt, double[::1] r0, double[:, ::1] eta,
                int multi_spike, double divergence_limit):
    cdef int steps = u_seq.shape[0]
    cdef int N = D.shape[1]
    cdef int nx = D.shape[0]
    cdef int nz = C.shape[0]
    cdef int nu = B.shape[1]
    cdef int has_eta = eta.shape[0] > 0
    cdef double nl = -lam
    cdef int k, i, j, a, b, best, nspikes, diverge_step
    cdef double m_i, m_best, peak, s_b

    est_arr = np.empty((steps + 1, nx))
    cdef double[:, ::1] est = est_arr
    cdef int cap = steps * (N if multi_spike else 1) + 1
    ss_arr = np.empty(cap, dtype=np.int64)
    sn_arr = np.empty(cap, dtype=np.int64)
    cdef cnp.int64_t[::1] ss = ss_arr
    cdef cnp.int64_t[::1] sn = sn_arr

    v_arr = np.zeros(N)
    r_arr = np.asarray(r0).copy()
    cdef double[::1] v = v_arr
    cdef double[::1] r = r_arr
    work = [np.empty(nx), np.empty(nz), np.empty(nz), np.empty((nx, nz)),
            np.empty(nx), np.empty(nx), np.empty(nx), np.empty(nx),
            np.empty(N), np.empty(N), np.empty(N)]
    cdef double[::1] xdec = work[0]
    cdef double[::1] zhat = work[1]
    cdef double[::1] innov = work[2]
    cdef double[:, ::1] Kloc = work[3]
    cdef double[::1] corr = work[4]
    cdef double[::1] pred = work[5]
    cdef double[::1] bu = work[6]
    cdef double[::1] w = work[7]
    cdef double[::1] g = work[8]
    cdef double[::1] fired = work[9]
    cdef double[::1] tmpN = work[10]
    cdef double* Kptr

    nspikes = 0
    diverge_step = -1
    gemv_c(&D[0, 0], nx, N, &r[0], &est[0, 0])

    for k in range(steps):
        gemv_c(&D[0, 0], nx, N, &r[0], &xdec[0])
        gemv_c(&C[0, 0], nz, nx, &xdec[0], &zhat[0])
        for b in range(nz):
            innov[b] = z_seq[k, b] - zhat[b]
        if innov_mode:
            for b in range(nz):
                s_b = fabs(innov[b]) / delta
                if s_b > 1.0:
                    s_b = 1.0
                for a in range(nx):
                    Kloc[a, b] = Cpinv[a, b] * s_b
            Kptr = &Kloc[0, 0]
        else:
            Kptr = &K_seq[k, 0, 0]
        gemv_c(Kptr, nx, nz, &innov[0], &corr[0])
        gemv_c(&Alam[0, 0], nx, nx, &xdec[0], &pred[0])
        gemv_c(&B[0, 0], nx, nu, &u_seq[k, 0], &bu[0])
        for a in range(nx):
            w[a] = (pred[a] + bu[a]) + corr[a]
        gemv_t(&D[0, 0], nx, N, &w[0], &g[0])
        for i in range(N):
            v[i] = v[i] + dt * (g[i] + nl * v[i])
        if has_eta:
            for i in range(N):
                v[i] = v[i] + eta[k, i]
        for i in range(N):
            if not isfinite(v[i]):
                diverge_step = k
                break
        if diverge_step >= 0:
            break
        for i in range(N):
            r[i] = r[i] + dt * (nl * r[i])
        if multi_spike:
            for i in range(N):
                fired[i] = 1.0 if v[i] > T[i] else 0.0
            j = 0
            for i in range(N):
                if fired[i] == 1.0:
                    j += 1
            if j > 0:
                gemv_c(&Omega_f[0, 0], N, N, &fired[0], &tmpN[0])
                for i in range(N):
                    v[i] = v[i] + tmpN[i]
                    r[i] = r[i] + fired[i]
                for i in range(N):
                    if fired[i] == 1.0:
                        ss[nspikes] = k
                        sn[nspikes] = i
                        nspikes += 1
        else:
            best = 0
            m_best = v[0] - T[0]
            for i in range(1, N):
                m_i = v[i] - T[i]
                if m_i > m_best:
                    m_best = m_i
                    best = i
            if v[best] > T[best]:
                for i in range(N):
                    v[i] = v[i] + Omega_f[i, best]
                r[best] += 1.0
                ss[nspikes] = k
                sn[nspikes] = best
                nspikes += 1
        gemv_c(&D[0, 0], nx, N, &r[0], &est[k + 1, 0])
        peak = 0.0
        for a in range(nx):
            if fabs(est[k + 1, a]) > peak:
                peak = fabs(est[k + 1, a])
        if not isfinite(peak) or peak > divergence_limit:
            diverge_step = k
            break

    return est_arr, ss_arr[:nspikes].copy(), sn_arr[:nspikes].copy(), diverge_step
