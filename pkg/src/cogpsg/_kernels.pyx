# cython: language_level=3
"""Compiled sequential kernels (see ``_kernels_py`` for the reference fallback)."""
import numpy as np

from libc.math cimport sqrt


def threshold_peaks(const long long[:] cand_idx, const double[:] cand_val,
                    long long refractory, double spki, double npki,
                    double searchback=1.66):
    cdef Py_ssize_t n = cand_idx.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[:] acc = out
    cdef double rr_buf[8]
    cdef int n_rr = 0, head = 0
    cdef double rr_sum = 0.0, rr_avg, thr1, thr2, bestv, v
    cdef long long last_qrs = -1, idx, rr
    cdef Py_ssize_t last_pos = -1, i, j, best

    thr1 = npki + 0.25 * (spki - npki)
    for i in range(n):
        idx = cand_idx[i]
        v = cand_val[i]
        if last_qrs >= 0 and idx - last_qrs < refractory:
            npki = 0.125 * v + 0.875 * npki
        elif v > thr1:
            acc[i] = 1
            if last_qrs >= 0:
                rr = idx - last_qrs
                if n_rr == 8:
                    rr_sum -= rr_buf[head]
                else:
                    n_rr += 1
                rr_buf[head] = rr
                rr_sum += rr
                head = (head + 1) % 8
            last_qrs = idx
            last_pos = i
            spki = 0.125 * v + 0.875 * spki
        else:
            npki = 0.125 * v + 0.875 * npki
            if n_rr > 0:
                rr_avg = rr_sum / n_rr
                if idx - last_qrs > searchback * rr_avg:
                    thr2 = 0.5 * thr1
                    best = -1
                    bestv = thr2
                    for j in range(last_pos + 1, i + 1):
                        if (acc[j] == 0 and cand_idx[j] - last_qrs >= refractory
                                and cand_val[j] > bestv):
                            best = j
                            bestv = cand_val[j]
                    if best >= 0:
                        acc[best] = 1
                        rr = cand_idx[best] - last_qrs
                        if n_rr == 8:
                            rr_sum -= rr_buf[head]
                        else:
                            n_rr += 1
                        rr_buf[head] = rr
                        rr_sum += rr
                        head = (head + 1) % 8
                        last_qrs = cand_idx[best]
                        last_pos = best
                        spki = 0.25 * bestv + 0.75 * spki
        thr1 = npki + 0.25 * (spki - npki)
    return out


def epoch_stats(const double[:] x, Py_ssize_t epoch_len):
    cdef Py_ssize_t n_epochs = x.shape[0] // epoch_len
    ptp_arr = np.zeros(n_epochs, dtype=np.float64)
    std_arr = np.zeros(n_epochs, dtype=np.float64)
    cdef double[:] ptp = ptp_arr
    cdef double[:] sd = std_arr
    cdef Py_ssize_t e, k, off
    cdef double lo, hi, s, m, d, acc, v
    for e in range(n_epochs):
        off = e * epoch_len
        lo = x[off]
        hi = x[off]
        s = 0.0
        for k in range(epoch_len):
            v = x[off + k]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
            s += v
        m = s / epoch_len
        acc = 0.0
        for k in range(epoch_len):
            d = x[off + k] - m
            acc += d * d
        ptp[e] = hi - lo
        sd[e] = sqrt(acc / epoch_len)
    return ptp_arr, std_arr
