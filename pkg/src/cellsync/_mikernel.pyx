# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled all-pairs MI kernel (OpenMP over pairs).

Same contract as :func:`cellsync._mikernel_py.pair_mi_batch`. Each pair is
an independent work unit writing only its own output slot, so results do
not depend on the thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport parallel, prange
from libc.math cimport NAN, log
from libc.stdlib cimport free, malloc

cnp.import_array()


cdef inline void _rank_codes(const double* vals, const Py_ssize_t* idx, Py_ssize_t n,
                             Py_ssize_t nb, Py_ssize_t* order, Py_ssize_t* out) noexcept nogil:
    # stable insertion sort of positions by value; n is at most one day of slots
    cdef Py_ssize_t k, m, key
    cdef double v
    for k in range(n):
        order[k] = k
    for k in range(1, n):
        key = order[k]
        v = vals[idx[key]]
        m = k - 1
        while m >= 0 and vals[idx[order[m]]] > v:
            order[m + 1] = order[m]
            m -= 1
        order[m + 1] = key
    for k in range(n):
        out[order[k]] = k * nb // n


cdef inline double _mi_table(const Py_ssize_t* table, Py_ssize_t* px, Py_ssize_t* py,
                             Py_ssize_t nb, Py_ssize_t n, const double* clogc,
                             bint miller_madow) noexcept nogil:
    cdef Py_ssize_t a, b, t
    cdef Py_ssize_t mx = 0, my = 0, mxy = 0
    cdef double sx = 0.0, sy = 0.0, diag = 0.0, off = 0.0, mi
    for a in range(nb):
        px[a] = 0
        py[a] = 0
    for a in range(nb):
        for b in range(nb):
            t = table[a * nb + b]
            px[a] += t
            py[b] += t
            if t > 0:
                mxy += 1
    for a in range(nb):
        sx += clogc[px[a]]
        if px[a] > 0:
            mx += 1
    for a in range(nb):
        sy += clogc[py[a]]
        if py[a] > 0:
            my += 1
    for a in range(nb):
        diag += clogc[table[a * nb + a]]
        for b in range(a + 1, nb):
            off += clogc[table[a * nb + b]] + clogc[table[b * nb + a]]
    mi = log(<double>n) - ((sx + sy) - (off + diag)) / n
    if mi < 0.0:
        mi = 0.0
    if miller_madow:
        mi += (mx + my - mxy - 1) / (2.0 * n)
    return mi


def pair_mi_batch(const double[:, :, ::1] z, const unsigned char[:, :, ::1] valid,
                  const Py_ssize_t[:, :, ::1] codes, const unsigned char[:, ::1] complete,
                  const Py_ssize_t[:, ::1] pairs, Py_ssize_t n_bins, bint miller_madow,
                  Py_ssize_t min_valid, int n_threads=1):
    cdef Py_ssize_t n_days = z.shape[1], n_slots = z.shape[2]
    cdef Py_ssize_t n_pairs = pairs.shape[0]
    cdef Py_ssize_t need = min_valid if min_valid > n_bins else n_bins
    cdef Py_ssize_t nb = n_bins
    cdef double[::1] clogc = np.arange(n_slots + 1, dtype=np.float64) * np.log(
        np.maximum(np.arange(n_slots + 1, dtype=np.float64), 1.0))
    mi_out = np.empty(n_pairs, dtype=np.float64)
    nd_out = np.zeros(n_pairs, dtype=np.intp)
    cdef double[::1] mi_v = mi_out
    cdef Py_ssize_t[::1] nd_v = nd_out

    cdef Py_ssize_t p, i, j, d, s, n, used, k
    cdef double acc
    cdef Py_ssize_t* table
    cdef Py_ssize_t* px
    cdef Py_ssize_t* py
    cdef Py_ssize_t* idx
    cdef Py_ssize_t* order
    cdef Py_ssize_t* cx
    cdef Py_ssize_t* cy
    cdef const double* zi
    cdef const double* zj

    if n_threads < 1:
        n_threads = 1

    with nogil, parallel(num_threads=n_threads):
        table = <Py_ssize_t*> malloc(nb * nb * sizeof(Py_ssize_t))
        px = <Py_ssize_t*> malloc(nb * sizeof(Py_ssize_t))
        py = <Py_ssize_t*> malloc(nb * sizeof(Py_ssize_t))
        idx = <Py_ssize_t*> malloc(n_slots * sizeof(Py_ssize_t))
        order = <Py_ssize_t*> malloc(n_slots * sizeof(Py_ssize_t))
        cx = <Py_ssize_t*> malloc(n_slots * sizeof(Py_ssize_t))
        cy = <Py_ssize_t*> malloc(n_slots * sizeof(Py_ssize_t))
        for p in prange(n_pairs, schedule="static"):
            i = pairs[p, 0]
            j = pairs[p, 1]
            acc = 0.0
            used = 0
            for d in range(n_days):
                for k in range(nb * nb):
                    table[k] = 0
                if complete[i, d] and complete[j, d]:
                    if n_slots < need:
                        continue
                    n = n_slots
                    for s in range(n_slots):
                        table[codes[i, d, s] * nb + codes[j, d, s]] += 1
                else:
                    n = 0
                    for s in range(n_slots):
                        if valid[i, d, s] and valid[j, d, s]:
                            idx[n] = s
                            n = n + 1
                    if n < need:
                        continue
                    zi = &z[i, d, 0]
                    zj = &z[j, d, 0]
                    _rank_codes(zi, idx, n, nb, order, cx)
                    _rank_codes(zj, idx, n, nb, order, cy)
                    for s in range(n):
                        table[cx[s] * nb + cy[s]] += 1
                acc = acc + _mi_table(table, px, py, nb, n, &clogc[0], miller_madow)
                used = used + 1
            if used > 0:
                mi_v[p] = acc / used
            else:
                mi_v[p] = NAN
            nd_v[p] = used
        free(table)
        free(px)
        free(py)
        free(idx)
        free(order)
        free(cx)
        free(cy)
    return mi_out, nd_out
