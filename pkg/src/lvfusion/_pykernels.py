"""Pure-Python/numpy versions of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is not built or ``LVFUSION_PURE_PYTHON`` is set.
"""

from collections import deque

import numpy as np


def grow_clusters(indptr, indices):
    """Label connected components of a CSR neighbour graph by queue growth.

    Points are visited in index order; each unvisited point seeds a queue that
    absorbs its neighbours until exhausted. Labels are 0..k-1 in seed order.
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    n = len(indptr) - 1
    labels = np.full(n, -1, dtype=np.int64)
    ptr = indptr.tolist()
    nbr = indices.tolist()
    current = 0
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        labels[seed] = current
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for k in range(ptr[i], ptr[i + 1]):
                j = nbr[k]
                if labels[j] < 0:
                    labels[j] = current
                    queue.append(j)
        current += 1
    return labels


def iou_matrix(a, b):
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(inter > 0) & (union > 0))
    return out


def polyline_distance(points, verts):
    """Distance from each 2-D point to a polyline, segments clamped at ends."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    v = np.asarray(verts, dtype=float).reshape(-1, 2)
    a = v[:-1]
    d = v[1:] - a
    len2 = np.einsum("ij,ij->i", d, d)
    rel = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("kij,ij->ki", rel, d) / len2[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist = np.linalg.norm(p[:, None, :] - closest, axis=2)
    return dist.min(axis=1)
