"""Sensor-frame geometry shared by the perception and fusion stages.

Frames
------
LiDAR / ego frame (right-handed, origin at the sensor):
  x forward, y left, z up, meters.
Image frame:
  origin top-left, x to the right, y downward, pixels.

The camera is treated as co-located with the LiDAR. A point is mapped to the
image through its bearing angles only (no intrinsic matrix), so the model is
fully described by the angular resolution per pixel and the principal point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GeometryError(ValueError):
    """Base class for invalid geometric input."""


class PointBehindCamera(GeometryError):
    pass


class OutOfFrustum(GeometryError):
    pass


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise GeometryError(f"non-finite point {self!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class ImageBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box {vals}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise GeometryError(f"box corners out of order {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class BevBox:
    """Footprint of an object in the ego bird's-eye-view frame.

    LiDAR objects carry the 4 footprint corners, vision objects only the two
    bottom corners of their image box.
    """

    corners: tuple[tuple[float, float], ...]

    def __post_init__(self):
        corners = tuple((float(x), float(y)) for x, y in self.corners)
        if len(corners) < 2 or len(corners) > 4:
            raise GeometryError(f"BevBox needs 2-4 corners, got {len(corners)}")
        if not all(math.isfinite(v) for c in corners for v in c):
            raise GeometryError("non-finite BEV corner")
        object.__setattr__(self, "corners", corners)

    @property
    def center(self) -> tuple[float, float]:
        xs = [c[0] for c in self.corners]
        ys = [c[1] for c in self.corners]
        return (sum(xs) / len(xs), sum(ys) / len(ys))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.corners, dtype=float)

    def flat(self) -> list[float]:
        return [v for c in self.corners for v in c]


@dataclass(frozen=True)
class CameraModel:
    h_res: float  # rad / px
    v_res: float  # rad / px
    c_x: float
    c_y: float
    width: int = 1280
    height: int = 720

    def __post_init__(self):
        if not (self.h_res > 0 and self.v_res > 0):
            raise GeometryError("angular resolutions must be positive")
        if not (0 <= self.c_x <= self.width and 0 <= self.c_y <= self.height):
            raise GeometryError("principal point outside the image")

    @classmethod
    def from_fov(cls, fov_h_deg: float = 78.0, fov_v_deg: float | None = None,
                 width: int = 1280, height: int = 720) -> "CameraModel":
        """Uniform angular sampling from a field of view.

        With ``fov_v_deg`` omitted the pixels are square (v_res = h_res).
        """
        h_res = math.radians(fov_h_deg) / width
        v_res = h_res if fov_v_deg is None else math.radians(fov_v_deg) / height
        return cls(h_res=h_res, v_res=v_res, c_x=width / 2.0, c_y=height / 2.0,
                   width=width, height=height)

    @classmethod
    def from_config(cls, cfg: dict) -> "CameraModel":
        base = cls.from_fov()
        width = int(cfg.get("image_width", base.width))
        height = int(cfg.get("image_height", base.height))
        return cls(
            h_res=float(cfg.get("h_res_rad_per_px", base.h_res)),
            v_res=float(cfg.get("v_res_rad_per_px", base.v_res)),
            c_x=float(cfg.get("c_x", width / 2.0)),
            c_y=float(cfg.get("c_y", height / 2.0)),
            width=width,
            height=height,
        )


def iou(a: ImageBox, b: ImageBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def project_point(p: Point3 | Sequence[float], cam: CameraModel) -> tuple[float, float]:
    x, y, z = p.as_tuple() if isinstance(p, Point3) else p
    if x <= 0:
        raise PointBehindCamera(f"point x={x} is not in front of the sensor")
    x_img = cam.c_x + math.atan(-y / x) / cam.h_res
    y_img = cam.c_y - math.atan(z / math.hypot(x, y)) / cam.v_res
    return x_img, y_img


def project_points(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorised :func:`project_point` for an (N, 3) array with x > 0."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError("expected an (N, 3) array")
    if np.any(pts[:, 0] <= 0):
        raise PointBehindCamera("all points must have x > 0")
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    u = cam.c_x + np.arctan(-y / x) / cam.h_res
    v = cam.c_y - np.arctan(z / np.hypot(x, y)) / cam.v_res
    return np.column_stack([u, v])


def image_to_bev(x_img: float, d_star: float, cam: CameraModel) -> tuple[float, float]:
    """Invert the horizontal projection using an externally known range.

    ``d_star`` stands in for the planar range sqrt(x^2 + y^2); the point is
    assumed to lie at z = 0, so the error for elevated points is O(z^2 / d).
    """
    if not d_star > 0:
        raise GeometryError("range must be positive")
    theta = (x_img - cam.c_x) * cam.h_res
    if abs(theta) >= math.pi / 2:
        raise OutOfFrustum(f"bearing {theta:.3f} rad is outside the frontal half-plane")
    x = d_star * math.cos(theta)
    y = -x * math.tan(theta)
    return x, y


def cuboid_corners(center: Sequence[float], size: Sequence[float], yaw: float = 0.0) -> np.ndarray:
    """8 corners of a yawed box; ``center`` is the volumetric center."""
    cx, cy, cz = center
    length, width, height = size
    dx = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * length / 2.0
    dy = np.array([1, -1, -1, 1, 1, -1, -1, 1]) * width / 2.0
    dz = np.array([-1, -1, -1, -1, 1, 1, 1, 1]) * height / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    return np.column_stack([cx + c * dx - s * dy, cy + s * dx + c * dy, cz + dz])


def project_cuboid(corners: Iterable, cam: CameraModel) -> ImageBox:
    pts = np.asarray([c.as_tuple() if isinstance(c, Point3) else c for c in corners], dtype=float)
    visible = pts[pts[:, 0] > 0]
    if len(visible) == 0:
        raise PointBehindCamera("every cuboid corner is behind the sensor")
    uv = project_points(visible, cam)
    x1, y1 = np.clip(uv.min(axis=0), 0.0, [cam.width, cam.height])
    x2, y2 = np.clip(uv.max(axis=0), 0.0, [cam.width, cam.height])
    return ImageBox(float(x1), float(y1), float(x2), float(y2))
