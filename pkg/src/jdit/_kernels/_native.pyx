# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the sequential hot kernels.

Signature-compatible with ``jdit._kernels.reference``; the recursions over
frames run as C loops instead of per-step numpy calls.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fmax, log

cnp.import_array()


cdef inline double log_add(double a, double b) nogil:
    cdef double m
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    m = fmax(a, b)
    return m + log(exp(a - m) + exp(b - m))


def forward_attention_forward(
    double[:, :, ::1] w,
    long[::1] t_lengths,
    long[::1] n_lengths,
    double floor,
):
    cdef Py_ssize_t batch = w.shape[0]
    cdef Py_ssize_t t_max = w.shape[1]
    cdef Py_ssize_t n_max = w.shape[2]
    alpha_arr = np.zeros((batch, t_max, n_max), dtype=np.float64)
    norms_arr = np.ones((batch, t_max), dtype=np.float64)
    prev_arr = np.zeros((batch, n_max), dtype=np.float64)
    cdef double[:, :, ::1] alpha = alpha_arr
    cdef double[:, ::1] norms = norms_arr
    cdef double[:, ::1] prev = prev_arr
    cdef Py_ssize_t b, t, n, t_len, n_len
    cdef double u, row_sum, z, add

    with nogil:
        for b in range(batch):
            t_len = t_lengths[b]
            n_len = n_lengths[b]
            prev[b, 0] = 1.0
            for t in range(t_len):
                row_sum = 0.0
                for n in range(n_len):
                    u = prev[b, n] * w[b, t, n]
                    if n > 0:
                        u += prev[b, n - 1] * w[b, t, n]
                    alpha[b, t, n] = u
                    row_sum += u
                add = floor if row_sum < floor else 0.0
                z = row_sum + add * n_len
                norms[b, t] = z
                for n in range(n_len):
                    alpha[b, t, n] = (alpha[b, t, n] + add) / z
                    prev[b, n] = alpha[b, t, n]
    return alpha_arr, norms_arr


def forward_attention_backward(
    double[:, :, ::1] w,
    double[:, :, ::1] alpha,
    double[:, ::1] norms,
    double[:, :, ::1] grad_alpha,
    long[::1] t_lengths,
    long[::1] n_lengths,
):
    cdef Py_ssize_t batch = w.shape[0]
    cdef Py_ssize_t t_max = w.shape[1]
    cdef Py_ssize_t n_max = w.shape[2]
    grad_w_arr = np.zeros((batch, t_max, n_max), dtype=np.float64)
    carried_arr = np.zeros((batch, n_max), dtype=np.float64)
    q_arr = np.zeros((batch, n_max), dtype=np.float64)
    cdef double[:, :, ::1] grad_w = grad_w_arr
    cdef double[:, ::1] carried = carried_arr
    cdef double[:, ::1] q = q_arr
    cdef Py_ssize_t b, t, n, t_len, n_len
    cdef double inner, z, g, prev_n, prev_nm1, m_n, m_np1

    with nogil:
        for b in range(batch):
            t_len = t_lengths[b]
            n_len = n_lengths[b]
            for t in range(t_len - 1, -1, -1):
                z = norms[b, t]
                inner = 0.0
                for n in range(n_len):
                    g = grad_alpha[b, t, n] + carried[b, n]
                    q[b, n] = g
                    inner += g * alpha[b, t, n]
                for n in range(n_len):
                    q[b, n] = (q[b, n] - inner) / z
                for n in range(n_len):
                    if t == 0:
                        prev_n = 1.0 if n == 0 else 0.0
                        prev_nm1 = 1.0 if n == 1 else 0.0
                    else:
                        prev_n = alpha[b, t - 1, n]
                        prev_nm1 = alpha[b, t - 1, n - 1] if n > 0 else 0.0
                    grad_w[b, t, n] = q[b, n] * (prev_n + prev_nm1)
                for n in range(n_len):
                    m_n = q[b, n] * w[b, t, n]
                    m_np1 = q[b, n + 1] * w[b, t, n + 1] if n + 1 < n_len else 0.0
                    carried[b, n] = m_n + m_np1
    return grad_w_arr


def ctc_forward(double[:, ::1] log_probs, long[::1] labels, long blank):
    cdef Py_ssize_t t_len = log_probs.shape[0]
    cdef Py_ssize_t l_len = labels.shape[0]
    cdef Py_ssize_t s_len = 2 * l_len + 1
    ext_arr = np.full(s_len, blank, dtype=np.int64)
    ext_arr[1::2] = np.asarray(labels)
    log_alpha_arr = np.full((t_len, s_len), -np.inf, dtype=np.float64)
    cdef long[::1] ext = ext_arr
    cdef double[:, ::1] log_alpha = log_alpha_arr
    cdef Py_ssize_t t, s
    cdef double acc, log_p

    with nogil:
        log_alpha[0, 0] = log_probs[0, ext[0]]
        if s_len > 1:
            log_alpha[0, 1] = log_probs[0, ext[1]]
        for t in range(1, t_len):
            for s in range(s_len):
                acc = log_alpha[t - 1, s]
                if s >= 1:
                    acc = log_add(acc, log_alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    acc = log_add(acc, log_alpha[t - 1, s - 2])
                log_alpha[t, s] = acc + log_probs[t, ext[s]]
        log_p = log_alpha[t_len - 1, s_len - 1]
        if s_len > 1:
            log_p = log_add(log_p, log_alpha[t_len - 1, s_len - 2])
    return float(-log_p), log_alpha_arr


def ctc_backward(
    double[:, ::1] log_probs,
    long[::1] labels,
    long blank,
    double[:, ::1] log_alpha,
    double loss,
):
    cdef Py_ssize_t t_len = log_probs.shape[0]
    cdef Py_ssize_t n_classes = log_probs.shape[1]
    cdef Py_ssize_t l_len = labels.shape[0]
    cdef Py_ssize_t s_len = 2 * l_len + 1
    ext_arr = np.full(s_len, blank, dtype=np.int64)
    ext_arr[1::2] = np.asarray(labels)
    log_beta_arr = np.full((t_len, s_len), -np.inf, dtype=np.float64)
    grad_arr = np.zeros((t_len, n_classes), dtype=np.float64)
    cdef long[::1] ext = ext_arr
    cdef double[:, ::1] log_beta = log_beta_arr
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t t, s
    cdef double acc, log_p, occ

    with nogil:
        log_p = -loss
        log_beta[t_len - 1, s_len - 1] = 0.0
        if s_len > 1:
            log_beta[t_len - 1, s_len - 2] = 0.0
        for t in range(t_len - 2, -1, -1):
            for s in range(s_len - 1, -1, -1):
                acc = log_beta[t + 1, s] + log_probs[t + 1, ext[s]]
                if s + 1 < s_len:
                    acc = log_add(acc, log_beta[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
                if s + 2 < s_len and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    acc = log_add(acc, log_beta[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
                log_beta[t, s] = acc
        for t in range(t_len):
            for s in range(s_len):
                if log_alpha[t, s] == -INFINITY or log_beta[t, s] == -INFINITY:
                    continue
                occ = exp(log_alpha[t, s] + log_beta[t, s] - log_p)
                grad[t, ext[s]] -= occ
    return grad_arr
