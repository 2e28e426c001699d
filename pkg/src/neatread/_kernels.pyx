# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the fused LSTM gate and softmax cross-entropy kernels.

Signatures and semantics match :mod:`neatread._kernels_py` exactly; the
matrix products stay in numpy so BLAS handles them.
"""
import numpy as np

from libc.math cimport exp, log, tanh


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def lstm_gates_forward(double[:, ::1] z, double[:, ::1] c_prev):
    cdef Py_ssize_t B = z.shape[0]
    cdef Py_ssize_t H = z.shape[1] // 4
    cdef Py_ssize_t b, j
    cdef double ig, fg, gg, og, cc, tc
    if c_prev.shape[0] != B or c_prev.shape[1] != H or z.shape[1] != 4 * H:
        raise ValueError("gate pre-activations and cell state disagree in shape")
    acts_a = np.empty((B, 4 * H), dtype=np.float64)
    c_a = np.empty((B, H), dtype=np.float64)
    h_a = np.empty((B, H), dtype=np.float64)
    tc_a = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] acts = acts_a
    cdef double[:, ::1] c = c_a
    cdef double[:, ::1] h = h_a
    cdef double[:, ::1] tanh_c = tc_a
    with nogil:
        for b in range(B):
            for j in range(H):
                ig = _sigmoid(z[b, j])
                fg = _sigmoid(z[b, H + j])
                gg = tanh(z[b, 2 * H + j])
                og = _sigmoid(z[b, 3 * H + j])
                cc = fg * c_prev[b, j] + ig * gg
                tc = tanh(cc)
                acts[b, j] = ig
                acts[b, H + j] = fg
                acts[b, 2 * H + j] = gg
                acts[b, 3 * H + j] = og
                c[b, j] = cc
                tanh_c[b, j] = tc
                h[b, j] = og * tc
    return h_a, c_a, acts_a, tc_a


def lstm_gates_backward(double[:, ::1] dh, double[:, ::1] dc,
                        double[:, ::1] acts, double[:, ::1] c_prev,
                        double[:, ::1] tanh_c):
    cdef Py_ssize_t B = dh.shape[0]
    cdef Py_ssize_t H = dh.shape[1]
    cdef Py_ssize_t b, j
    cdef double ig, fg, gg, og, tc, dct
    dz_a = np.empty((B, 4 * H), dtype=np.float64)
    dcp_a = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] dz = dz_a
    cdef double[:, ::1] dc_prev = dcp_a
    with nogil:
        for b in range(B):
            for j in range(H):
                ig = acts[b, j]
                fg = acts[b, H + j]
                gg = acts[b, 2 * H + j]
                og = acts[b, 3 * H + j]
                tc = tanh_c[b, j]
                dct = dc[b, j] + dh[b, j] * og * (1.0 - tc * tc)
                dz[b, j] = dct * gg * ig * (1.0 - ig)
                dz[b, H + j] = dct * c_prev[b, j] * fg * (1.0 - fg)
                dz[b, 2 * H + j] = dct * ig * (1.0 - gg * gg)
                dz[b, 3 * H + j] = dh[b, j] * tc * og * (1.0 - og)
                dc_prev[b, j] = dct * fg
    return dz_a, dcp_a


def softmax_xent(double[:, ::1] logits, long[::1] targets):
    cdef Py_ssize_t B = logits.shape[0]
    cdef Py_ssize_t V = logits.shape[1]
    cdef Py_ssize_t b, k
    cdef long t
    cdef double m, s, inv
    if V == 0:
        raise ValueError("empty logits")
    if targets.shape[0] != B:
        raise ValueError("one target per row required")
    for b in range(B):
        if targets[b] < 0 or targets[b] >= V:
            raise ValueError("target %d out of range for %d logits" % (targets[b], V))
    loss_a = np.empty(B, dtype=np.float64)
    grad_a = np.empty((B, V), dtype=np.float64)
    cdef double[::1] loss = loss_a
    cdef double[:, ::1] grad = grad_a
    with nogil:
        for b in range(B):
            m = logits[b, 0]
            for k in range(1, V):
                if logits[b, k] > m:
                    m = logits[b, k]
            s = 0.0
            for k in range(V):
                grad[b, k] = exp(logits[b, k] - m)
                s = s + grad[b, k]
            inv = 1.0 / s
            for k in range(V):
                grad[b, k] = grad[b, k] * inv
            t = targets[b]
            loss[b] = log(s) + m - logits[b, t]
            grad[b, t] = grad[b, t] - 1.0
    return loss_a, grad_a
