"""Ego path corridor and closest-in-path-vehicle selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .fusion import FusionRecord
from .geometry import BevBox
from .vision import CAR


@dataclass(frozen=True)
class BevPath:
    """Centerline polyline in the ego BEV frame plus a lane half-width."""

    centerline: np.ndarray
    half_width: float = 1.5

    def __post_init__(self):
        pts = np.asarray(self.centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("centerline needs at least 2 (x, y) points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("centerline must be finite")
        if np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
            raise ValueError("consecutive centerline points must differ")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        pts.setflags(write=False)
        object.__setattr__(self, "centerline", pts)

    @classmethod
    def straight(cls, length: float = 100.0, half_width: float = 1.5) -> "BevPath":
        if not length > 0:
            raise ValueError("length must be positive")
        return cls(np.array([[0.0, 0.0], [length, 0.0]]), half_width)

    @classmethod
    def arc(cls, radius: float, sweep: float = math.pi / 2, n: int = 64,
            half_width: float = 1.5) -> "BevPath":
        """Circular arc starting at the origin heading +x; positive radius
        turns left."""
        th = np.linspace(0.0, sweep, n)
        r = abs(radius)
        pts = np.column_stack([r * np.sin(th), np.sign(radius) * r * (1 - np.cos(th))])
        return cls(pts, half_width)

    @classmethod
    def from_csv(cls, path: str | Path, half_width: float = 1.5) -> "BevPath":
        data = np.genfromtxt(path, delimiter=",", names=True)
        if data.dtype.names is None or not {"x", "y"} <= set(data.dtype.names):
            raise ValueError(f"{path}: path CSV needs an 'x,y' header")
        return cls(np.column_stack([np.atleast_1d(data["x"]), np.atleast_1d(data["y"])]), half_width)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Perpendicular distance of each (x, y) point to the centerline."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return kernels.polyline_distance(pts, self.centerline)

    def transformed(self, rotation: float, translation: Sequence[float] = (0.0, 0.0)) -> "BevPath":
        c, s = math.cos(rotation), math.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        return replace(self, centerline=self.centerline @ rot.T + np.asarray(translation))


def in_path(bev: BevBox | None, path: BevPath) -> bool:
    """True when any footprint corner lies within the lane half-width."""
    if bev is None:
        return False
    return bool(np.any(path.distance(bev.as_array()) <= path.half_width))


def mark_in_path(records: Iterable[FusionRecord], path: BevPath) -> list[FusionRecord]:
    """Fill ``in_path`` on records that carry a footprint."""
    return [r if r.bev is None else replace(r, in_path=in_path(r.bev, path)) for r in records]


def is_vehicle(rec: FusionRecord) -> bool:
    # LiDAR-only objects have no class but still block the lane
    return rec.type_id == CAR or rec.source == "L"


def select_cipv(records: Iterable[FusionRecord], path: BevPath | None = None) -> FusionRecord | None:
    """Closest in-path vehicle, or None.

    With ``path`` given, in-path is evaluated here; otherwise the records'
    own ``in_path`` flags are used.
    """
    best = None
    for r in records:
        if r.distance is None or not is_vehicle(r):
            continue
        inside = in_path(r.bev, path) if path is not None else bool(r.in_path)
        if inside and (best is None or r.distance < best.distance):
            best = r
    return best
