# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled neighbor-statistics kernels.

Same contract as the NumPy fallback module: brute-force max-norm distances
with unit distance for mismatched discrete coordinates, per-point k-th
neighbor radii, and zero-distance tie counts.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _row_dist(const double* ci, const double* cj, Py_ssize_t dc,
                             const long* di, const long* dj, Py_ssize_t dd) noexcept nogil:
    cdef double best = 0.0
    cdef double diff
    cdef Py_ssize_t a
    for a in range(dc):
        diff = ci[a] - cj[a]
        if diff < 0:
            diff = -diff
        if diff > best:
            best = diff
    for a in range(dd):
        if di[a] != dj[a]:
            if best < 1.0:
                best = 1.0
            break
    return best


cdef inline void _k_smallest_insert(double* heap, int k, double value) noexcept nogil:
    # keep the k smallest values seen so far; heap[0] is the current largest
    cdef int pos, child
    cdef double tmp
    if value >= heap[0]:
        return
    heap[0] = value
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= k:
            break
        if child + 1 < k and heap[child + 1] > heap[child]:
            child += 1
        if heap[child] <= heap[pos]:
            break
        tmp = heap[pos]
        heap[pos] = heap[child]
        heap[child] = tmp
        pos = child


def mi_counts(const double[:, ::1] xc, const long[:, ::1] xd,
              const double[:, ::1] yc, const long[:, ::1] yd, int k):
    cdef Py_ssize_t n = max(xc.shape[0], xd.shape[0])
    cdef Py_ssize_t dxc = xc.shape[1], dxd = xd.shape[1]
    cdef Py_ssize_t dyc = yc.shape[1], dyd = yd.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ktilde = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] nx = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ny = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dxr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dyr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] heap_arr = np.empty(k, dtype=np.float64)
    cdef double* dx = <double*> dxr.data
    cdef double* dy = <double*> dyr.data
    cdef double* heap = <double*> heap_arr.data
    cdef long* kt = <long*> ktilde.data
    cdef long* cx = <long*> nx.data
    cdef long* cy = <long*> ny.data
    # base pointers; zero-column sides use a valid dummy location so that
    # pointer arithmetic with a zero stride stays defined
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fdummy = np.zeros(1, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idummy = np.zeros(1, dtype=np.int64)
    cdef const double* pxc = &xc[0, 0] if dxc > 0 else <double*> fdummy.data
    cdef const long* pxd = &xd[0, 0] if dxd > 0 else <long*> idummy.data
    cdef const double* pyc = &yc[0, 0] if dyc > 0 else <double*> fdummy.data
    cdef const long* pyd = &yd[0, 0] if dyd > 0 else <long*> idummy.data
    cdef Py_ssize_t i, j
    cdef int a
    cdef double dj, rho, dxj, dyj
    cdef long tie_j, tie_x, tie_y, lt_x, lt_y

    with nogil:
        for i in range(n):
            for a in range(k):
                heap[a] = 1e308
            tie_j = 0
            tie_x = 0
            tie_y = 0
            for j in range(n):
                if j == i:
                    dx[j] = 1e308
                    dy[j] = 1e308
                    continue
                dxj = _row_dist(pxc + i * dxc, pxc + j * dxc, dxc,
                                pxd + i * dxd, pxd + j * dxd, dxd)
                dyj = _row_dist(pyc + i * dyc, pyc + j * dyc, dyc,
                                pyd + i * dyd, pyd + j * dyd, dyd)
                dx[j] = dxj
                dy[j] = dyj
                dj = dxj if dxj > dyj else dyj
                _k_smallest_insert(heap, k, dj)
                if dj == 0.0:
                    tie_j += 1
                if dxj == 0.0:
                    tie_x += 1
                if dyj == 0.0:
                    tie_y += 1
            rho = heap[0]
            if rho == 0.0:
                kt[i] = tie_j
                cx[i] = tie_x
                cy[i] = tie_y
            else:
                kt[i] = k
                lt_x = 0
                lt_y = 0
                for j in range(n):
                    if dx[j] < rho:
                        lt_x += 1
                    if dy[j] < rho:
                        lt_y += 1
                cx[i] = lt_x
                cy[i] = lt_y
    return ktilde, nx, ny


def knn_radius_stats(const double[:, ::1] c, const long[:, ::1] d, int k):
    cdef Py_ssize_t n = max(c.shape[0], d.shape[0])
    cdef Py_ssize_t dc = c.shape[1], dd = d.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rho = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ties = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] heap_arr = np.empty(k, dtype=np.float64)
    cdef double* heap = <double*> heap_arr.data
    cdef double* rr = <double*> rho.data
    cdef long* tt = <long*> ties.data
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fdummy = np.zeros(1, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idummy = np.zeros(1, dtype=np.int64)
    cdef const double* pc = &c[0, 0] if dc > 0 else <double*> fdummy.data
    cdef const long* pd = &d[0, 0] if dd > 0 else <long*> idummy.data
    cdef Py_ssize_t i, j
    cdef int a
    cdef double dj
    cdef long tie

    with nogil:
        for i in range(n):
            for a in range(k):
                heap[a] = 1e308
            tie = 0
            for j in range(n):
                if j == i:
                    continue
                dj = _row_dist(pc + i * dc, pc + j * dc, dc,
                               pd + i * dd, pd + j * dd, dd)
                _k_smallest_insert(heap, k, dj)
                if dj == 0.0:
                    tie += 1
            rr[i] = heap[0]
            tt[i] = tie
    return rho, ties
