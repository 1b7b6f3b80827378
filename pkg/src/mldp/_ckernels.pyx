# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``; same signatures."""
import numpy as np
from libc.math cimport exp, log, sqrt, isfinite, M_PI

cdef double LOG_2PI = log(2.0 * M_PI)


def covariate_loglik(X, double[:, ::1] mu, double[:, :, ::1] prec_chol, double[::1] log_det):
    cdef double[:, ::1] Xv = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], K = mu.shape[0], P = mu.shape[1]
    cdef Py_ssize_t a, k, i, j
    cdef double zj, quad
    out = np.empty((n, K))
    cdef double[:, ::1] o = out
    cdef double[::1] d = np.empty(P)
    for a in range(n):
        for k in range(K):
            for i in range(P):
                d[i] = Xv[a, i] - mu[k, i]
            quad = 0.0
            for j in range(P):
                zj = 0.0
                for i in range(j, P):
                    zj += prec_chol[k, i, j] * d[i]
                quad += zj * zj
            o[a, k] = -0.5 * (P * LOG_2PI + log_det[k] + quad)
    return out


def joint_loglik(double[::1] x, double y, double[:, ::1] mu, double[:, :, ::1] prec_chol,
                 double[::1] log_det, double[:, ::1] beta, double[::1] sigma_y2):
    cdef Py_ssize_t K = mu.shape[0], P = mu.shape[1]
    cdef Py_ssize_t k, i, j
    cdef double zj, quad, r
    out = np.empty(K)
    cdef double[::1] o = out
    cdef double[::1] d = np.empty(P)
    for k in range(K):
        r = y
        for i in range(P):
            d[i] = x[i] - mu[k, i]
            r -= beta[k, i] * x[i]
        quad = 0.0
        for j in range(P):
            zj = 0.0
            for i in range(j, P):
                zj += prec_chol[k, i, j] * d[i]
            quad += zj * zj
        o[k] = (-0.5 * (P * LOG_2PI + log_det[k] + quad)
                - 0.5 * (LOG_2PI + log(sigma_y2[k]) + r * r / sigma_y2[k]))
    return out


def draw_log_categorical(double[::1] logits, double u):
    cdef Py_ssize_t K = logits.shape[0], k
    cdef double m = -1.0 / 0.0, total = 0.0, target
    for k in range(K):
        if logits[k] > m:
            m = logits[k]
    if not isfinite(m):
        return -1
    cdef double[::1] cum = np.empty(K)
    for k in range(K):
        total += exp(logits[k] - m)
        cum[k] = total
    target = u * total
    for k in range(K):
        if cum[k] > target:
            return k
    return K - 1


def assemble_atoms(double[:, ::1] chi, double[:, ::1] off, double[:, ::1] zmu, double[:, ::1] zb,
                   double[:, ::1] psi_inv_chol, double[:, ::1] V_chol, double[::1] mu,
                   double[::1] beta_mean, double lam, double[::1] sigma_y2):
    cdef Py_ssize_t n = chi.shape[0], P = chi.shape[1]
    cdef Py_ssize_t a, i, j, k, t
    cdef double s, sl = sqrt(lam), sd
    mu_out = np.empty((n, P))
    T_out = np.zeros((n, P, P))
    ld_out = np.empty(n)
    b_out = np.empty((n, P))
    cdef double[:, ::1] mo = mu_out, bo = b_out
    cdef double[:, :, ::1] T = T_out
    cdef double[::1] ld = ld_out
    cdef double[:, ::1] A = np.zeros((P, P))
    cdef double[::1] v = np.empty(P)
    for a in range(n):
        t = 0
        for i in range(P):
            A[i, i] = sqrt(chi[a, i])
            for j in range(i):
                A[i, j] = off[a, t]
                t += 1
        s = 0.0
        for i in range(P):
            for j in range(i + 1):
                sd = 0.0
                for k in range(j, i + 1):
                    sd += psi_inv_chol[i, k] * A[k, j]
                T[a, i, j] = sd
            s += log(T[a, i, i])
        ld[a] = -2.0 * s
        for i in range(P - 1, -1, -1):
            sd = zmu[a, i]
            for k in range(i + 1, P):
                sd -= T[a, k, i] * v[k]
            v[i] = sd / T[a, i, i]
            mo[a, i] = mu[i] + v[i] / sl
        sd = sqrt(sigma_y2[a])
        for i in range(P):
            s = 0.0
            for k in range(i + 1):
                s += V_chol[i, k] * zb[a, k]
            bo[a, i] = beta_mean[i] + sd * s
    return mu_out, T_out, ld_out, b_out
