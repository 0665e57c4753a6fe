# cython: language_level=3
"""Compiled hot loops: cascaded biquad filtering and TDPSD extraction."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, log, fabs

cnp.import_array()

BACKEND = "cython"


def sosfilt_inplace(const double[:, ::1] sos, double[:, ::1] x, double[:, :, ::1] zi):
    """Filter ``x`` (channels, samples) in place through second-order sections.

    Transposed direct form II, matching ``scipy.signal.sosfilt``. ``zi`` has
    shape (sections, channels, 2) and is updated so the next call continues
    the stream.
    """
    cdef Py_ssize_t n_sec = sos.shape[0]
    cdef Py_ssize_t n_ch = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    cdef Py_ssize_t c, i, s
    cdef double xi, yi, b0, b1, b2, a1, a2
    if zi.shape[0] != n_sec or zi.shape[1] != n_ch or zi.shape[2] != 2:
        raise ValueError("filter state shape does not match sections/channels")
    for c in range(n_ch):
        for i in range(n):
            xi = x[c, i]
            for s in range(n_sec):
                b0 = sos[s, 0]
                b1 = sos[s, 1]
                b2 = sos[s, 2]
                a1 = sos[s, 4]
                a2 = sos[s, 5]
                yi = b0 * xi + zi[s, c, 0]
                zi[s, c, 0] = b1 * xi - a1 * yi + zi[s, c, 1]
                zi[s, c, 1] = b2 * xi - a2 * yi
                xi = yi
            x[c, i] = xi


cdef inline double _clog(double v, double eps) nogil:
    if v < eps:
        v = eps
    return log(v)


def tdpsd_batch(const double[:, :, ::1] windows, double lam=0.1, double eps=1e-10):
    """TDPSD features for a (batch, channels, samples) block -> (batch, 6, channels)."""
    cdef Py_ssize_t nb = windows.shape[0]
    cdef Py_ssize_t nc = windows.shape[1]
    cdef Py_ssize_t n = windows.shape[2]
    out_arr = np.empty((nb, 6, nc), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i
    cdef double s0, s2, s4, a1, a2, d1, d2, prev_d1, m0, m2, m4, p2, p4
    for b in range(nb):
        for c in range(nc):
            s0 = 0.0
            s2 = 0.0
            s4 = 0.0
            a1 = 0.0
            a2 = 0.0
            prev_d1 = 0.0
            for i in range(n):
                s0 += windows[b, c, i] * windows[b, c, i]
                if i >= 1:
                    d1 = windows[b, c, i] - windows[b, c, i - 1]
                    s2 += d1 * d1
                    a1 += fabs(d1)
                    if i >= 2:
                        d2 = d1 - prev_d1
                        s4 += d2 * d2
                        a2 += fabs(d2)
                    prev_d1 = d1
            m0 = pow(sqrt(s0), lam) / lam
            m2 = pow(sqrt(s2), lam) / lam
            m4 = pow(sqrt(s4), lam) / lam
            p2 = m0 - m2
            if p2 < eps:
                p2 = eps
            p4 = m0 - m4
            if p4 < eps:
                p4 = eps
            out[b, 0, c] = _clog(m0, eps)
            out[b, 1, c] = log(p2)
            out[b, 2, c] = log(p4)
            out[b, 3, c] = _clog(m0 / sqrt(p2 * p4), eps)
            p2 = m0 * m4
            if p2 < eps:
                p2 = eps
            out[b, 4, c] = _clog(m2 / sqrt(p2), eps)
            p4 = a2
            if p4 < eps:
                p4 = eps
            out[b, 5, c] = _clog(a1 / p4, eps)
    return out_arr
