# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence kernels; same contract as ``_lstm_py``.

The per-step recurrent mat-vec goes through BLAS ``dgemv``.  A C-contiguous
``Wh`` of shape (4H, H) is, in Fortran order, the (H, 4H) matrix ``Wh.T``
with leading dimension H.
"""
import numpy as np
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemv


cdef inline double _sigmoid(double z) nogil:
    cdef double ez
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


def lstm_forward(const double[:, ::1] xproj, const double[:, ::1] Wh):
    cdef int T = xproj.shape[0]
    cdef int G = xproj.shape[1]
    cdef int H = G // 4
    gates_arr = np.empty((T, G))
    c_arr = np.empty((T, H))
    h_arr = np.empty((T, H))
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] h = h_arr
    cdef double[::1] z = np.empty(G)
    cdef double[::1] h_prev = np.zeros(H)
    cdef double[::1] c_prev = np.zeros(H)
    cdef int t, r, k
    cdef int one = 1
    cdef double alpha = 1.0, beta = 1.0
    cdef char trans = b'T'
    with nogil:
        for t in range(T):
            for r in range(G):
                z[r] = xproj[t, r]
            # z += Wh @ h_prev
            dgemv(&trans, &H, &G, &alpha, <double*>&Wh[0, 0], &H, &h_prev[0], &one, &beta, &z[0], &one)
            for r in range(3 * H):
                gates[t, r] = _sigmoid(z[r])
            for r in range(3 * H, G):
                gates[t, r] = tanh(z[r])
            for k in range(H):
                c_prev[k] = gates[t, H + k] * c_prev[k] + gates[t, k] * gates[t, 3 * H + k]
                h_prev[k] = gates[t, 2 * H + k] * tanh(c_prev[k])
                c[t, k] = c_prev[k]
                h[t, k] = h_prev[k]
    return gates_arr, c_arr, h_arr


def lstm_backward(const double[:, ::1] gates, const double[:, ::1] c,
                  const double[:, ::1] Wh, const double[:, ::1] dh_ext):
    cdef int T = gates.shape[0]
    cdef int G = gates.shape[1]
    cdef int H = G // 4
    dz_arr = np.empty((T, G))
    cdef double[:, ::1] dz = dz_arr
    cdef double[::1] dh_next = np.zeros(H)
    cdef double[::1] dc_next = np.zeros(H)
    cdef int t, k
    cdef int one = 1
    cdef double alpha = 1.0, beta = 0.0
    cdef char trans = b'N'
    cdef double i, f, o, g, tc, dh, dc, c_prev
    with nogil:
        for t in range(T - 1, -1, -1):
            for k in range(H):
                i = gates[t, k]
                f = gates[t, H + k]
                o = gates[t, 2 * H + k]
                g = gates[t, 3 * H + k]
                c_prev = c[t - 1, k] if t > 0 else 0.0
                tc = tanh(c[t, k])
                dh = dh_ext[t, k] + dh_next[k]
                dc = dc_next[k] + dh * o * (1.0 - tc * tc)
                dz[t, k] = dc * g * i * (1.0 - i)
                dz[t, H + k] = dc * c_prev * f * (1.0 - f)
                dz[t, 2 * H + k] = dh * tc * o * (1.0 - o)
                dz[t, 3 * H + k] = dc * i * (1.0 - g * g)
                dc_next[k] = dc * f
            # dh_next = Wh.T @ dz[t]
            dgemv(&trans, &H, &G, &alpha, <double*>&Wh[0, 0], &H, &dz[t, 0], &one, &beta, &dh_next[0], &one)
    return dz_arr
