# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def grow_clusters(indptr, indices):
    cdef const cnp.int64_t[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] nbr = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = ptr.shape[0] - 1
    labels_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef cnp.int64_t[::1] queue = np.empty(max(n, 1), dtype=np.int64)
    cdef Py_ssize_t seed, head, tail, i, k, j
    cdef cnp.int64_t current = 0
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        labels[seed] = current
        head = 0
        tail = 0
        queue[tail] = seed
        tail += 1
        while head < tail:
            i = queue[head]
            head += 1
            for k in range(ptr[i], ptr[i + 1]):
                j = nbr[k]
                if labels[j] < 0:
                    labels[j] = current
                    queue[tail] = j
                    tail += 1
        current += 1
    return labels_arr


def iou_matrix(a, b):
    cdef const double[:, ::1] A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef const double[:, ::1] B = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double iw, ih, inter, union, area_a, area_b
    for i in range(n):
        area_a = (A[i, 2] - A[i, 0]) * (A[i, 3] - A[i, 1])
        for j in range(m):
            iw = min(A[i, 2], B[j, 2]) - max(A[i, 0], B[j, 0])
            ih = min(A[i, 3], B[j, 3]) - max(A[i, 1], B[j, 1])
            if iw <= 0 or ih <= 0:
                continue
            inter = iw * ih
            area_b = (B[j, 2] - B[j, 0]) * (B[j, 3] - B[j, 1])
            union = area_a + area_b - inter
            if union > 0:
                out[i, j] = inter / union
    return out_arr


def polyline_distance(points, verts):
    cdef const double[:, ::1] P = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 2))
    cdef const double[:, ::1] V = np.ascontiguousarray(np.asarray(verts, dtype=np.float64).reshape(-1, 2))
    cdef Py_ssize_t k = P.shape[0], s = V.shape[0] - 1, i, j
    out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double ax, ay, dx, dy, len2, t, cx, cy, ex, ey, dist, best
    for i in range(k):
        best = 1e300
        for j in range(s):
            ax = V[j, 0]
            ay = V[j, 1]
            dx = V[j + 1, 0] - ax
            dy = V[j + 1, 1] - ay
            len2 = dx * dx + dy * dy
            t = ((P[i, 0] - ax) * dx + (P[i, 1] - ay) * dy) / len2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            cx = ax + t * dx
            cy = ay + t * dy
            ex = P[i, 0] - cx
            ey = P[i, 1] - cy
            dist = sqrt(ex * ex + ey * ey)
            if dist < best:
                best = dist
        out[i] = best
    return out_arr
