"""Compare the compiled and pure-Python kernels on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best time for each backend and the
speed-up. Exits non-zero if the two backends disagree.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np
from scipy.spatial import cKDTree

from lvfusion import _pykernels

try:
    from lvfusion import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng: np.random.Generator) -> dict:
    pts = rng.uniform(0, 20, size=(2000, 3))
    pairs = cKDTree(pts).query_ball_point(pts, 0.8)
    indptr = np.zeros(len(pairs) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(p) for p in pairs])
    indices = np.concatenate([np.asarray(p, dtype=np.int64) for p in pairs])

    def boxes(n):
        xy = rng.uniform(0, 1200, size=(n, 2))
        wh = rng.uniform(5, 200, size=(n, 2))
        return np.hstack([xy, xy + wh])

    verts = np.column_stack([np.linspace(0, 100, 51), 5 * np.sin(np.linspace(0, 3, 51))])
    return {
        "grow_clusters (2000 pts)": ("grow_clusters", (indptr, indices)),
        "iou_matrix (60x60)": ("iou_matrix", (boxes(60), boxes(60))),
        "polyline_distance (500 pts x 50 segs)": ("polyline_distance",
                                                  (rng.uniform(0, 100, size=(500, 2)), verts)),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return 1
    ok = True
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for label, (name, inputs) in _cases(np.random.default_rng(0)).items():
        py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
        ok &= bool(np.allclose(py(*inputs), cy(*inputs)))
        t_py = min(timeit.repeat(lambda: py(*inputs), number=3, repeat=args.repeat)) / 3
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=3, repeat=args.repeat)) / 3
        print(f"{label:40s} {1e3 * t_py:10.3f} {1e3 * t_cy:10.3f} {t_py / t_cy:8.1f}x")
    if not ok:
        print("backends disagree", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
