import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from shapely.geometry import LineString, Point
from shapely.geometry import box as shapely_box

from lvfusion import kernels


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def _random_graph(rng, n, p):
    adj = rng.random((n, n)) < p
    adj = adj | adj.T
    np.fill_diagonal(adj, True)
    m = csr_matrix(adj)
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), m


@pytest.mark.parametrize("seed", range(20))
def test_grow_clusters_matches_connected_components(backend, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 120))
    indptr, indices, m = _random_graph(rng, n, 2.0 / max(n, 1))
    labels = kernels.grow_clusters(indptr, indices)
    k, ref = connected_components(m, directed=False)
    assert labels.max() + 1 == k
    # same partition, and labels numbered in order of first appearance
    pairs = set(zip(labels.tolist(), ref.tolist()))
    assert len(pairs) == k
    first = [int(labels[np.flatnonzero(labels == lab)[0]]) for lab in range(k)]
    assert first == list(range(k))
    assert np.all(np.diff([np.flatnonzero(labels == lab)[0] for lab in range(k)]) > 0)


def test_grow_clusters_empty(backend):
    out = kernels.grow_clusters(np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    assert len(out) == 0


def test_iou_matrix_matches_polygons(backend):
    rng = np.random.default_rng(3)
    xy = rng.uniform(0, 100, size=(14, 2))
    wh = rng.uniform(0, 40, size=(14, 2))
    bx = np.hstack([xy, xy + wh])
    a, b = bx[:6], bx[6:]
    got = kernels.iou_matrix(a, b)
    for i, ra in enumerate(a):
        for j, rb in enumerate(b):
            pa, pb = shapely_box(*ra), shapely_box(*rb)
            u = pa.union(pb).area
            assert got[i, j] == pytest.approx(pa.intersection(pb).area / u if u else 0.0, abs=1e-12)


def test_iou_matrix_shapes(backend):
    assert kernels.iou_matrix(np.zeros((0, 4)), np.zeros((3, 4))).shape == (0, 3)
    assert kernels.iou_matrix(np.zeros((2, 4)), np.zeros((0, 4))).shape == (2, 0)


def test_iou_matrix_zero_boxes_never_overlap(backend):
    out = kernels.iou_matrix([[0, 0, 10, 10]], [[0, 0, 0, 0]])
    assert out[0, 0] == 0.0


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=20),
       st.integers(0, 2**31 - 1))
def test_polyline_distance_matches_shapely(points, seed):
    rng = np.random.default_rng(seed)
    verts = np.cumsum(rng.uniform(-10, 10, size=(int(rng.integers(2, 8)), 2)), axis=0)
    verts = verts[np.r_[True, np.any(np.diff(verts, axis=0) != 0, axis=1)]]
    if len(verts) < 2:
        return
    line = LineString(verts)
    pts = np.asarray(points, dtype=float)
    expected = [line.distance(Point(p)) for p in pts]
    for impl in (kernels._pykernels, getattr(kernels, "_impl")):
        assert impl.polyline_distance(pts, verts) == pytest.approx(expected, abs=1e-9)


def test_polyline_distance_clamps_to_endpoints(backend):
    d = kernels.polyline_distance([[-3.0, 4.0], [13.0, 0.0]], [[0.0, 0.0], [10.0, 0.0]])
    assert d == pytest.approx([5.0, 3.0])


def test_backends_agree_on_read_only_inputs():
    # frozen arrays (as stored on paths) must be accepted
    verts = np.array([[0.0, 0.0], [10.0, 0.0]])
    verts.setflags(write=False)
    pts = np.array([[5.0, 2.0]])
    pts.setflags(write=False)
    assert kernels.polyline_distance(pts, verts) == pytest.approx([2.0])
