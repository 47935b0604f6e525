# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; see petalsearch._kernels_py for the reference versions."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def pool_anchors(const double[:, :, ::1] fmap,
                 const long long[:, ::1] anchors,
                 const int[::1] dy,
                 const int[::1] dx,
                 const long long[::1] seg_start,
                 const long long[::1] seg_len):
    """Mean of in-bounds samples per (anchor, segment, channel).

    ``fmap`` is laid out (H, W, C). Returns an array of shape (K, n_seg, C).
    """
    cdef Py_ssize_t h = fmap.shape[0], w = fmap.shape[1], c = fmap.shape[2]
    cdef Py_ssize_t k_n = anchors.shape[0], n_seg = seg_start.shape[0]
    out_arr = np.zeros((k_n, n_seg, c), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t k, s, t, ch, y, x, t0, t1
    cdef long long ay, ax
    cdef long n
    cdef double inv
    with nogil:
        for k in range(k_n):
            ay = anchors[k, 0]
            ax = anchors[k, 1]
            for s in range(n_seg):
                t0 = seg_start[s]
                t1 = t0 + seg_len[s]
                n = 0
                for t in range(t0, t1):
                    y = ay + dy[t]
                    x = ax + dx[t]
                    if y < 0 or y >= h or x < 0 or x >= w:
                        continue
                    n += 1
                    for ch in range(c):
                        out[k, s, ch] += fmap[y, x, ch]
                if n > 1:
                    inv = 1.0 / n
                    for ch in range(c):
                        out[k, s, ch] *= inv
    return out_arr


def correlate_direct(const double[:, ::1] street, const double[:, :, ::1] sats):
    """Direct circular correlation sum, O(K * N_s * N_g * M)."""
    cdef Py_ssize_t n_g = street.shape[0], m = street.shape[1]
    cdef Py_ssize_t k_n = sats.shape[0], n_s = sats.shape[1]
    out_arr = np.zeros((k_n, n_s), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, wv, a, j, b
    cdef double acc
    with nogil:
        for k in range(k_n):
            for wv in range(n_s):
                acc = 0.0
                for a in range(n_g):
                    b = (a + wv) % n_s
                    for j in range(m):
                        acc = acc + street[a, j] * sats[k, b, j]
                out[k, wv] = acc
    return out_arr
