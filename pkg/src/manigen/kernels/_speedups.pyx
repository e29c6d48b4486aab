# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures and semantics as kernels._py; the
Dijkstra core releases the GIL so graph.all_pairs_geodesic can fan sources
out over threads."""

from libc.stdlib cimport calloc, free, malloc, realloc
from libc.math cimport INFINITY

import numpy as np


# ---------------------------------------------------------------------------
# Dijkstra over CSR


cdef void _dijkstra_core(const int[::1] indptr, const int[::1] indices,
                         const double[::1] weights, int source,
                         double[::1] out, double* hd, int* hn,
                         unsigned char* done) noexcept nogil:
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t hs = 0, pos, parent, child, e
    cdef int u, v, tn
    cdef double d, nd, td

    for pos in range(n):
        out[pos] = INFINITY
        done[pos] = 0
    out[source] = 0.0

    hd[0] = 0.0
    hn[0] = source
    hs = 1
    while hs > 0:
        d = hd[0]
        u = hn[0]
        # pop: move last entry to the root and sift down, ordering by
        # (distance, node) so ties resolve by node index like heapq tuples
        hs -= 1
        if hs > 0:
            td = hd[hs]
            tn = hn[hs]
            pos = 0
            while True:
                child = 2 * pos + 1
                if child >= hs:
                    break
                if child + 1 < hs and (
                    hd[child + 1] < hd[child]
                    or (hd[child + 1] == hd[child] and hn[child + 1] < hn[child])
                ):
                    child += 1
                if hd[child] < td or (hd[child] == td and hn[child] < tn):
                    hd[pos] = hd[child]
                    hn[pos] = hn[child]
                    pos = child
                else:
                    break
            hd[pos] = td
            hn[pos] = tn
        if done[u]:
            continue
        done[u] = 1
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            nd = d + weights[e]
            if nd < out[v]:
                out[v] = nd
                # push (nd, v): sift up
                pos = hs
                hs += 1
                while pos > 0:
                    parent = (pos - 1) // 2
                    if nd < hd[parent] or (nd == hd[parent] and v < hn[parent]):
                        hd[pos] = hd[parent]
                        hn[pos] = hn[parent]
                        pos = parent
                    else:
                        break
                hd[pos] = nd
                hn[pos] = v


def dijkstra_csr(indptr, indices, weights, source, out):
    """Single-source shortest paths over a CSR adjacency, writing distances
    into ``out``. Unreachable nodes keep +inf."""
    cdef const int[::1] ip = np.ascontiguousarray(indptr, dtype=np.int32)
    cdef const int[::1] ix = np.ascontiguousarray(indices, dtype=np.int32)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] dist = out
    cdef Py_ssize_t n = ip.shape[0] - 1
    cdef Py_ssize_t m = ix.shape[0]
    cdef int src = source
    if dist.shape[0] != n:
        raise ValueError(f"out has length {dist.shape[0]}, expected {n}")
    if src < 0 or src >= n:
        raise ValueError(f"source {src} out of range for {n} nodes")

    # capacity m + 2: one initial push plus at most one per improving edge
    cdef double* hd = <double*> malloc((m + 2) * sizeof(double))
    cdef int* hn = <int*> malloc((m + 2) * sizeof(int))
    cdef unsigned char* done = <unsigned char*> calloc(n if n > 0 else 1, 1)
    if hd == NULL or hn == NULL or done == NULL:
        free(hd)
        free(hn)
        free(done)
        raise MemoryError("dijkstra_csr scratch allocation failed")
    try:
        with nogil:
            _dijkstra_core(ip, ix, w, src, dist, hd, hn, done)
    finally:
        free(hd)
        free(hn)
        free(done)


# ---------------------------------------------------------------------------
# Barnes-Hut force kernel
#
# Node pool as struct-of-arrays; child slots are a fixed 8 = 1 << 3 wide,
# covering the d <= 3 regime the tree is meant for (larger d delegates to
# the pure fallback, whose cost is exponential in d anyway).


cdef struct Pool:
    double* center   # size * d
    double* comsum   # size * d
    double* half     # size
    int* count       # size
    int* child       # size * 8, -1 when empty
    unsigned char* isleaf
    int size
    int cap
    int d


cdef int _pool_grow(Pool* P) noexcept nogil:
    cdef int cap = P.cap * 2
    cdef double* cd
    cdef int* ci
    cdef unsigned char* cb
    cd = <double*> realloc(P.center, cap * P.d * sizeof(double))
    if cd == NULL:
        return -1
    P.center = cd
    cd = <double*> realloc(P.comsum, cap * P.d * sizeof(double))
    if cd == NULL:
        return -1
    P.comsum = cd
    cd = <double*> realloc(P.half, cap * sizeof(double))
    if cd == NULL:
        return -1
    P.half = cd
    ci = <int*> realloc(P.count, cap * sizeof(int))
    if ci == NULL:
        return -1
    P.count = ci
    ci = <int*> realloc(P.child, cap * 8 * sizeof(int))
    if ci == NULL:
        return -1
    P.child = ci
    cb = <unsigned char*> realloc(P.isleaf, cap)
    if cb == NULL:
        return -1
    P.isleaf = cb
    P.cap = cap
    return 0


cdef int _build_cell(Pool* P, const double[:, ::1] Y, int* idx, int* tmp,
                     int lo, int hi, double* center, double half) noexcept nogil:
    """Recursive tree build over idx[lo:hi]; returns the node id, -1 on
    allocation failure. Partition is a stable counting sort by quadrant so
    child point order matches the pure-Python build."""
    cdef int d = P.d
    cdef int nchild = 1 << d
    cdef int node, axis, ii, i, q, first, c
    cdef int cnt[8]
    cdef int fill[8]
    cdef double ccenter[3]
    cdef double chalf
    cdef bint allsame

    if P.size == P.cap and _pool_grow(P) != 0:
        return -1
    node = P.size
    P.size += 1

    P.half[node] = half
    P.count[node] = hi - lo
    P.isleaf[node] = 0
    for axis in range(d):
        P.center[node * d + axis] = center[axis]
        P.comsum[node * d + axis] = 0.0
    for ii in range(lo, hi):
        i = idx[ii]
        for axis in range(d):
            P.comsum[node * d + axis] += Y[i, axis]
    for q in range(8):
        P.child[node * 8 + q] = -1

    first = idx[lo]
    allsame = True
    for ii in range(lo + 1, hi):
        i = idx[ii]
        for axis in range(d):
            if Y[i, axis] != Y[first, axis]:
                allsame = False
                break
        if not allsame:
            break
    if allsame:
        # single location (possibly duplicated points): exact leaf
        P.isleaf[node] = 1
        return node

    for q in range(nchild):
        cnt[q] = 0
    for ii in range(lo, hi):
        i = idx[ii]
        q = 0
        for axis in range(d):
            if Y[i, axis] > center[axis]:
                q |= 1 << axis
        cnt[q] += 1
    fill[0] = lo
    for q in range(1, nchild):
        fill[q] = fill[q - 1] + cnt[q - 1]
    for ii in range(lo, hi):
        i = idx[ii]
        q = 0
        for axis in range(d):
            if Y[i, axis] > center[axis]:
                q |= 1 << axis
        tmp[fill[q]] = i
        fill[q] += 1
    for ii in range(lo, hi):
        idx[ii] = tmp[ii]

    chalf = half / 2.0
    ii = lo
    for q in range(nchild):
        if cnt[q] == 0:
            continue
        for axis in range(d):
            if (q >> axis) & 1:
                ccenter[axis] = center[axis] + chalf
            else:
                ccenter[axis] = center[axis] - chalf
        c = _build_cell(P, Y, idx, tmp, ii, ii + cnt[q], ccenter, chalf)
        if c < 0:
            return -1
        P.child[node * 8 + q] = c
        ii += cnt[q]
    return node


cdef double _traverse(Pool* P, const double* y, double theta2, double* rep,
                      int* stack) noexcept nogil:
    """Accumulate the repulsive numerator for point ``y``; returns this
    point's contribution to the normalizer Z (self term included)."""
    cdef int d = P.d
    cdef Py_ssize_t sp = 1
    cdef int node, axis, q, c
    cdef double z = 0.0
    cdef double comv[3]
    cdef double dist2, dv, size, w, cw, cww

    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        for axis in range(d):
            comv[axis] = P.comsum[node * d + axis] / P.count[node]
        dist2 = 0.0
        for axis in range(d):
            dv = y[axis] - comv[axis]
            dist2 += dv * dv
        size = 2.0 * P.half[node]
        if P.isleaf[node] or size * size < theta2 * dist2:
            w = 1.0 / (1.0 + dist2)
            cw = P.count[node] * w
            z += cw
            cww = cw * w
            for axis in range(d):
                rep[axis] += cww * (y[axis] - comv[axis])
        else:
            # push ascending so LIFO pops visit children in the same
            # (descending) order as the pure-Python stack
            for q in range(1 << d):
                c = P.child[node * 8 + q]
                if c >= 0:
                    stack[sp] = c
                    sp += 1
    return z


def bh_forces(Y, indptr, indices, pvals, theta, attr_out, rep_out):
    """Barnes-Hut approximation of the t-SNE force terms.

    Attractive term is exact over the sparse P support; the repulsive term
    uses the tree with opening criterion cell_size/distance < theta. Returns
    the normalizer Z = sum of all pairwise Student-t weights (i != j).
    theta = 0 opens every cell down to the leaves, reproducing the exact sums.
    """
    Yc = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t n = Yc.shape[0]
    cdef int d = Yc.shape[1]
    if d > 3:
        from . import _py

        return _py.bh_forces(Yc, indptr, indices, pvals, theta, attr_out, rep_out)

    cdef const double[:, ::1] Yv = Yc
    cdef const int[::1] ip = np.ascontiguousarray(indptr, dtype=np.int32)
    cdef const int[::1] ix = np.ascontiguousarray(indices, dtype=np.int32)
    cdef const double[::1] pv = np.ascontiguousarray(pvals, dtype=np.float64)
    cdef double[:, ::1] attr = attr_out
    cdef double[:, ::1] rep = rep_out
    cdef double th = theta
    cdef Py_ssize_t i, e
    cdef int axis, j, rc
    cdef double dist2, dv, w, pw, lo_c, hi_c, extent, half, z_total
    cdef double diffv[3]
    cdef double center[3]

    attr_out[:] = 0.0
    rep_out[:] = 0.0
    if n <= 1:
        return 0.0

    cdef Pool P
    P.d = d
    P.size = 0
    P.cap = <int> (2 * n + 16)
    P.center = <double*> malloc(P.cap * d * sizeof(double))
    P.comsum = <double*> malloc(P.cap * d * sizeof(double))
    P.half = <double*> malloc(P.cap * sizeof(double))
    P.count = <int*> malloc(P.cap * sizeof(int))
    P.child = <int*> malloc(P.cap * 8 * sizeof(int))
    P.isleaf = <unsigned char*> malloc(P.cap)
    cdef int* idx = <int*> malloc(n * sizeof(int))
    cdef int* tmp = <int*> malloc(n * sizeof(int))
    cdef int* stack = NULL
    if (P.center == NULL or P.comsum == NULL or P.half == NULL
            or P.count == NULL or P.child == NULL or P.isleaf == NULL
            or idx == NULL or tmp == NULL):
        _bh_free(&P, idx, tmp, stack)
        raise MemoryError("bh_forces scratch allocation failed")

    try:
        with nogil:
            for i in range(n):
                for e in range(ip[i], ip[i + 1]):
                    j = ix[e]
                    dist2 = 0.0
                    for axis in range(d):
                        dv = Yv[i, axis] - Yv[j, axis]
                        diffv[axis] = dv
                        dist2 += dv * dv
                    w = 1.0 / (1.0 + dist2)
                    pw = pv[e] * w
                    for axis in range(d):
                        attr[i, axis] += pw * diffv[axis]

            extent = 0.0
            for axis in range(d):
                lo_c = Yv[0, axis]
                hi_c = Yv[0, axis]
                for i in range(1, n):
                    if Yv[i, axis] < lo_c:
                        lo_c = Yv[i, axis]
                    if Yv[i, axis] > hi_c:
                        hi_c = Yv[i, axis]
                center[axis] = (lo_c + hi_c) / 2.0
                if hi_c - lo_c > extent:
                    extent = hi_c - lo_c
            half = extent / 2.0 + 1e-9
            for i in range(n):
                idx[i] = <int> i
            rc = _build_cell(&P, Yv, idx, tmp, 0, <int> n, center, half)
        if rc < 0:
            raise MemoryError("bh_forces tree allocation failed")
        stack = <int*> malloc(P.size * sizeof(int))
        if stack == NULL:
            raise MemoryError("bh_forces stack allocation failed")
        with nogil:
            z_total = 0.0
            for i in range(n):
                z_total += _traverse(&P, &Yv[i, 0], th * th, &rep[i, 0], stack)
        return z_total - n
    finally:
        _bh_free(&P, idx, tmp, stack)


cdef void _bh_free(Pool* P, int* idx, int* tmp, int* stack):
    free(P.center)
    free(P.comsum)
    free(P.half)
    free(P.count)
    free(P.child)
    free(P.isleaf)
    free(idx)
    free(tmp)
    free(stack)
