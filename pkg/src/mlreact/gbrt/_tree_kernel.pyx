# cython: language_level=3
"""Compiled exact-split regression tree builder.

Mirrors ``_tree_py`` operation for operation so both kernels produce
bit-identical trees.  The heavy loop runs without the GIL.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.math cimport INFINITY

cnp.import_array()


cdef inline void _partition(int[:, ::1] order, int p, Py_ssize_t start, Py_ssize_t end,
                            const unsigned char* go_left, int* buf) noexcept nogil:
    cdef Py_ssize_t f, i, nl, nr, s
    for f in range(p):
        nl = start
        nr = 0
        for i in range(start, end):
            s = order[f, i]
            if go_left[s]:
                order[f, nl] = s
                nl += 1
            else:
                buf[nr] = s
                nr += 1
        for i in range(nr):
            order[f, nl + i] = buf[i]


def build_tree(const double[:, ::1] X, const double[::1] y, int[:, ::1] order,
               int max_depth, int min_samples_leaf):
    """Grow one tree.

    ``order[f]`` must hold the row indices sorted by ``(X[:, f], y)``; it is
    partitioned in place.  Returns ``(feature, threshold, left, right,
    n_samples, value, leaf_of)`` where ``leaf_of[i]`` is the leaf holding row
    ``i``.  Leaf values are target means summed left to right along
    ``order[0]``, a canonical order, so they do not depend on row order.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef int p = <int>X.shape[1]
    cdef Py_ssize_t cap = 1
    cdef int k
    for k in range(max_depth + 1):
        cap *= 2
        if cap > 2 * n:
            break
    cap = min(cap - 1, 2 * n - 1)
    if cap < 1:
        cap = 1

    feature_a = np.full(cap, -1, dtype=np.int32)
    threshold_a = np.zeros(cap, dtype=np.float64)
    left_a = np.full(cap, -1, dtype=np.int32)
    right_a = np.full(cap, -1, dtype=np.int32)
    nsamp_a = np.zeros(cap, dtype=np.int64)
    value_a = np.zeros(cap, dtype=np.float64)
    leaf_of_a = np.zeros(n, dtype=np.int32)

    cdef int[::1] feature = feature_a
    cdef double[::1] threshold = threshold_a
    cdef int[::1] left = left_a
    cdef int[::1] right = right_a
    cdef long long[::1] nsamp = nsamp_a
    cdef double[::1] value = value_a
    cdef int[::1] leaf_of = leaf_of_a

    cdef Py_ssize_t* st_start = <Py_ssize_t*>malloc(cap * sizeof(Py_ssize_t))
    cdef Py_ssize_t* st_end = <Py_ssize_t*>malloc(cap * sizeof(Py_ssize_t))
    cdef int* st_depth = <int*>malloc(cap * sizeof(int))
    cdef int* st_node = <int*>malloc(cap * sizeof(int))
    cdef int* buf = <int*>malloc((n + 1) * sizeof(int))
    cdef unsigned char* go_left = <unsigned char*>malloc((n + 1) * sizeof(unsigned char))
    if not (st_start and st_end and st_depth and st_node and buf and go_left):
        free(st_start); free(st_end); free(st_depth); free(st_node); free(buf); free(go_left)
        raise MemoryError()

    cdef int top = 0
    cdef int n_nodes = 1
    cdef Py_ssize_t start, end, i, m, nl, nr, best_i
    cdef int depth, node, f, best_f
    cdef double total, sl, sr, gain, impr, best_impr, sumsq, yv, y0, thr, a, b, floor, cut
    cdef bint pure
    cdef double* ibuf = <double*>malloc((p * n + 1) * sizeof(double))
    if not ibuf:
        free(st_start); free(st_end); free(st_depth); free(st_node); free(buf); free(go_left)
        raise MemoryError()

    with nogil:
        st_start[0] = 0
        st_end[0] = n
        st_depth[0] = 0
        st_node[0] = 0
        top = 1
        while top > 0:
            top -= 1
            start = st_start[top]
            end = st_end[top]
            depth = st_depth[top]
            node = st_node[top]
            m = end - start
            nsamp[node] = m

            best_f = -1
            best_i = -1
            best_impr = 0.0
            if depth < max_depth and m >= 2 * min_samples_leaf:
                y0 = y[order[0, start]]
                pure = True
                sumsq = 0.0
                for i in range(start, end):
                    yv = y[order[0, i]]
                    sumsq = sumsq + yv * yv
                    if yv != y0:
                        pure = False
                if not pure:
                    # pass 1: every candidate's improvement and the maximum
                    best_impr = -INFINITY
                    for f in range(p):
                        total = 0.0
                        for i in range(start, end):
                            total = total + y[order[f, i]]
                        sl = 0.0
                        for i in range(start, end - 1):
                            sl = sl + y[order[f, i]]
                            nl = i - start + 1
                            nr = m - nl
                            ibuf[f * n + i - start] = -INFINITY
                            if nl < min_samples_leaf or nr < min_samples_leaf:
                                continue
                            if not (X[order[f, i], f] < X[order[f, i + 1], f]):
                                continue
                            sr = total - sl
                            gain = sl * sl / <double>nl + sr * sr / <double>nr
                            impr = gain - total * total / <double>m
                            ibuf[f * n + i - start] = impr
                            if impr > best_impr:
                                best_impr = impr
                    # pass 2: lowest (feature, threshold) within rounding of the best
                    floor = 1e-13 * sumsq
                    if best_impr > floor:
                        cut = best_impr - 1e-12 * sumsq
                        for f in range(p):
                            for i in range(start, end - 1):
                                impr = ibuf[f * n + i - start]
                                if impr >= cut and impr > floor:
                                    best_f = f
                                    best_i = i
                                    break
                            if best_f >= 0:
                                break

            if best_f < 0:
                total = 0.0
                for i in range(start, end):
                    leaf_of[order[0, i]] = node
                    total = total + y[order[0, i]]
                value[node] = total / <double>m
                continue

            a = X[order[best_f, best_i], best_f]
            b = X[order[best_f, best_i + 1], best_f]
            thr = 0.5 * a + 0.5 * b
            if not (thr > a):
                thr = b
            feature[node] = best_f
            threshold[node] = thr
            for i in range(start, end):
                go_left[order[best_f, i]] = (i <= best_i)
            _partition(order, p, start, end, go_left, buf)

            nl = best_i - start + 1
            left[node] = n_nodes
            right[node] = n_nodes + 1
            # right pushed first so the left subtree is grown first
            st_start[top] = start + nl
            st_end[top] = end
            st_depth[top] = depth + 1
            st_node[top] = n_nodes + 1
            top += 1
            st_start[top] = start
            st_end[top] = start + nl
            st_depth[top] = depth + 1
            st_node[top] = n_nodes
            top += 1
            n_nodes += 2

    free(st_start); free(st_end); free(st_depth); free(st_node); free(buf); free(go_left); free(ibuf)
    return (feature_a[:n_nodes].copy(), threshold_a[:n_nodes].copy(), left_a[:n_nodes].copy(),
            right_a[:n_nodes].copy(), nsamp_a[:n_nodes].copy(), value_a[:n_nodes].copy(), leaf_of_a)


def apply_tree(const double[:, ::1] X, const int[::1] feature, const double[::1] threshold,
               const int[::1] left, const int[::1] right):
    """Leaf index reached by each row (left iff value < threshold)."""
    cdef Py_ssize_t n = X.shape[0]
    out_a = np.empty(n, dtype=np.int32)
    cdef int[::1] out = out_a
    cdef Py_ssize_t r
    cdef int node
    with nogil:
        for r in range(n):
            node = 0
            while feature[node] >= 0:
                if X[r, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r] = node
    return out_a
