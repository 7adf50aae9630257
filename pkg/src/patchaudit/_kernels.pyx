# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled metric kernels.

Mirrors ``_kernels_py`` exactly: all intermediates are integers, so the
two backends return bit-identical values.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport NAN
from libc.stdlib cimport free, malloc, qsort

ctypedef fused pix_t:
    cnp.uint8_t
    cnp.uint16_t


def confusion_counts(const unsigned char[::1] truth,
                     const unsigned char[::1] pred,
                     idx=None):
    """Return (tp, fp, tn, fn), optionally resampled through int64 indices."""
    cdef Py_ssize_t i, n
    cdef long long tp = 0, fp = 0, fn = 0
    cdef unsigned char t, p
    cdef const long long[::1] iv
    if idx is None:
        n = truth.shape[0]
        with nogil:
            for i in range(n):
                t = truth[i]
                p = pred[i]
                if t:
                    if p:
                        tp += 1
                    else:
                        fn += 1
                elif p:
                    fp += 1
    else:
        iv = idx
        n = iv.shape[0]
        with nogil:
            for i in range(n):
                t = truth[iv[i]]
                p = pred[iv[i]]
                if t:
                    if p:
                        tp += 1
                    else:
                        fn += 1
                elif p:
                    fp += 1
    return int(tp), int(fp), int(n - tp - fp - fn), int(fn)


cdef struct ScoreLabel:
    double s
    unsigned char t


cdef int _cmp_score(const void* a, const void* b) noexcept nogil:
    cdef double sa = (<const ScoreLabel*> a).s
    cdef double sb = (<const ScoreLabel*> b).s
    if sa < sb:
        return -1
    if sa > sb:
        return 1
    return 0


def rank_auc(const unsigned char[::1] truth,
             const double[::1] score,
             idx=None):
    """Mann-Whitney AUC with midrank tie handling; nan if one class absent."""
    cdef Py_ssize_t i, n
    cdef const long long[::1] iv
    cdef ScoreLabel* buf
    cdef long long n_pos = 0, ranksum2 = 0
    cdef Py_ssize_t run_start
    cdef long long pos_in_run
    cdef double out

    if idx is None:
        n = truth.shape[0]
    else:
        iv = idx
        n = iv.shape[0]
    if n == 0:
        return float("nan")
    buf = <ScoreLabel*> malloc(n * sizeof(ScoreLabel))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            if idx is None:
                for i in range(n):
                    buf[i].s = score[i]
                    buf[i].t = truth[i]
            else:
                for i in range(n):
                    buf[i].s = score[iv[i]]
                    buf[i].t = truth[iv[i]]
            for i in range(n):
                if buf[i].t:
                    n_pos += 1
            if n_pos == 0 or n_pos == n:
                out = NAN
            else:
                qsort(buf, n, sizeof(ScoreLabel), _cmp_score)
                run_start = 0
                pos_in_run = 0
                for i in range(n):
                    if buf[i].s != buf[run_start].s:
                        # run [run_start, i): twice its midrank is start+i+1
                        ranksum2 += pos_in_run * (run_start + i + 1)
                        run_start = i
                        pos_in_run = 0
                    if buf[i].t:
                        pos_in_run += 1
                ranksum2 += pos_in_run * (run_start + n + 1)
                out = (ranksum2 - n_pos * (n_pos + 1)) / <double> (2 * n_pos * (n - n_pos))
    finally:
        free(buf)
    return float(out)


def box_downsample(pix_t[:, ::1] src, Py_ssize_t out_h, Py_ssize_t out_w):
    """Exact integer box-average downsample, rounding half up."""
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t w = src.shape[1]
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise ValueError("box_downsample only shrinks images")
    if pix_t is cnp.uint8_t:
        dtype = np.uint8
    else:
        dtype = np.uint16
    out_arr = np.empty((out_h, out_w), dtype=dtype)
    cdef pix_t[:, ::1] out = out_arr
    cdef long long denom = <long long> h * w
    cdef Py_ssize_t j, i, r, c, r0, r1, c0, c1
    cdef long long acc, wv, wh, lo, hi
    with nogil:
        for j in range(out_h):
            r0 = (j * h) // out_h
            r1 = ((j + 1) * h + out_h - 1) // out_h
            for i in range(out_w):
                c0 = (i * w) // out_w
                c1 = ((i + 1) * w + out_w - 1) // out_w
                acc = 0
                for r in range(r0, r1):
                    lo = j * h if j * h > r * out_h else r * out_h
                    hi = (j + 1) * h if (j + 1) * h < (r + 1) * out_h else (r + 1) * out_h
                    wv = hi - lo
                    if wv <= 0:
                        continue
                    for c in range(c0, c1):
                        lo = i * w if i * w > c * out_w else c * out_w
                        hi = (i + 1) * w if (i + 1) * w < (c + 1) * out_w else (c + 1) * out_w
                        wh = hi - lo
                        if wh > 0:
                            acc += wv * wh * <long long> src[r, c]
                out[j, i] = <pix_t> ((2 * acc + denom) // (2 * denom))
    return out_arr
