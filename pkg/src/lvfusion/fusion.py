"""Track-level fusion of LiDAR and vision objects by image-space IoU.

Every vision track is a row and every LiDAR track a column of the IoU matrix.
A vision row with no overlap is a vision-only ("V") object. Otherwise it pairs
with its best-overlapping LiDAR column ("VL"); when several rows pick the same
column the strongest overlap keeps it and the others fall back to "V". LiDAR
columns left unpaired become LiDAR-only ("L") objects.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import IO, Iterable, Sequence

import numpy as np

from . import kernels
from .geometry import (BevBox, CameraModel, GeometryError, ImageBox, Point3, image_to_bev,
                       project_cuboid)
from .lidar import LidarTrack, PlaneModel
from .vision import CAR, VisionTrack

SOURCES = ("V", "VL", "L")
MOVING_SPEED = 0.5  # m/s, absolute speed above which an object counts as moving


class MissingDistance(ValueError):
    """A vision track has no usable range estimate."""


@dataclass(frozen=True)
class FusionRecord:
    source: str
    box2d: ImageBox | None
    bev: BevBox | None = None
    closest_point: Point3 | None = None
    distance: float | None = None
    velocity: tuple[float, float, float] | None = None  # relative to ego, m/s
    in_path: bool | None = None
    moving_state: bool | None = None
    type_id: str | None = None
    ttc: float | None = None
    vision_id: int | None = None
    lidar_id: int | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == "VL" and (self.vision_id is None or self.lidar_id is None):
            raise ValueError("a VL record needs both parents")
        if self.distance is not None and not self.distance > 0:
            raise ValueError("distance must be positive")

    @property
    def key(self) -> tuple:
        return (self.source, self.vision_id, self.lidar_id)

    def to_dict(self) -> dict:
        def point(p):
            return None if p is None else list(p.as_tuple())

        return {
            "name": self.source,
            "boundary_box_2d": None if self.box2d is None else self.box2d.as_list(),
            "bird_eye_view": None if self.bev is None else self.bev.flat(),
            "closest_point": point(self.closest_point),
            "distance": self.distance,
            "velocity": None if self.velocity is None else list(self.velocity),
            "in_path": self.in_path,
            "moving_state": self.moving_state,
            "type_id": self.type_id,
            "ttc": self.ttc,
        }


def vision_bev(track: VisionTrack, cam: CameraModel) -> BevBox:
    """Two-corner footprint from the bottom edge of the image box.

    The range used is the regression estimate before binning; the binned
    value is only good to half a bin, which swamps the transform accuracy.
    """
    d = track.raw_distance if track.raw_distance is not None else track.distance
    if d is None or track.distance is None:
        raise MissingDistance(f"vision track {track.id} has no distance")
    box = track.detection.box
    left = image_to_bev(box.x1, d, cam)
    right = image_to_bev(box.x2, d, cam)
    return BevBox((left, right))


def compute_ttc(record: FusionRecord, ego_speed: float = 0.0) -> float | None:
    """Time to collision along x; ``None`` when not closing.

    LiDAR-backed records carry relative velocity; without one the object is
    assumed stationary, so the closing speed is the ego speed.
    """
    if record.distance is None:
        return None
    closing = -record.velocity[0] if record.velocity is not None else ego_speed
    if closing <= 0:
        return None
    return record.distance / closing


def lidar_boxes(tracks: Sequence[LidarTrack], cam: CameraModel,
                plane: PlaneModel | None = None) -> list[ImageBox | None]:
    """Image boxes of LiDAR cuboids, extended down to the ground when known."""
    out = []
    for t in tracks:
        floor = None
        if plane is not None:
            cx, cy, _ = t.centroid
            floor = plane.height_at(cx, cy)
        try:
            out.append(project_cuboid(t.cuboid(floor), cam))
        except GeometryError:
            out.append(None)
    return out


def associate(iou: np.ndarray, vision_ids: Sequence[int], lidar_ids: Sequence[int],
              iou_floor: float = 0.0) -> dict[int, int]:
    """Row -> column pairing from an IoU matrix.

    Entries at or below ``iou_floor`` count as no overlap. Each row picks its
    argmax column (lower LiDAR ID on ties); a column claimed by several rows
    goes to the highest IoU, then the lower vision ID.
    """
    n, m = iou.shape
    if n == 0 or m == 0:
        return {}
    vals = np.where(iou > iou_floor, iou, 0.0)
    col_order = sorted(range(m), key=lambda j: lidar_ids[j])
    claims: dict[int, list[int]] = {}
    for i in range(n):
        row = vals[i, col_order]
        if not np.any(row > 0):
            continue
        j = col_order[int(np.argmax(row))]
        claims.setdefault(j, []).append(i)
    pairs = {}
    for j, rows in claims.items():
        best = min(rows, key=lambda i: (-vals[i, j], vision_ids[i]))
        pairs[best] = j
    return pairs


def fuse(lidar: Sequence[LidarTrack], vision: Sequence[VisionTrack], cam: CameraModel,
         iou_floor: float = 0.0, ego_speed: float = 0.0,
         plane: PlaneModel | None = None) -> list[FusionRecord]:
    """Merge one frame of LiDAR and vision tracks into fusion records.

    Records come out as V (vision order), then VL (vision order), then L
    (LiDAR order). ``in_path`` is left unset; the path stage fills it in.
    """
    lidar = list(lidar)
    vision = list(vision)
    lboxes = lidar_boxes(lidar, cam, plane)
    a = np.array([v.detection.box.as_list() for v in vision], dtype=float).reshape(-1, 4)
    # columns with no visible projection never overlap
    b = np.array([bx.as_list() if bx is not None else [0.0, 0.0, 0.0, 0.0] for bx in lboxes],
                 dtype=float).reshape(-1, 4)
    iou = kernels.iou_matrix(a, b)
    pairs = associate(iou, [v.id for v in vision], [t.id for t in lidar], iou_floor)

    v_recs, vl_recs = [], []
    for i, vt in enumerate(vision):
        if i in pairs:
            lt = lidar[pairs[i]]
            vl_recs.append(_lidar_record("VL", lt, lboxes[pairs[i]], ego_speed,
                                         type_id=vt.detection.cls, vision_id=vt.id))
        else:
            v_recs.append(_vision_record(vt, cam))
    paired_cols = set(pairs.values())
    l_recs = [_lidar_record("L", lt, lboxes[j], ego_speed)
              for j, lt in enumerate(lidar) if j not in paired_cols]
    return v_recs + vl_recs + l_recs


def _vision_record(vt: VisionTrack, cam: CameraModel) -> FusionRecord:
    box = vt.detection.box
    if vt.detection.cls != CAR or vt.distance is None:
        return FusionRecord("V", box, type_id=vt.detection.cls, vision_id=vt.id)
    try:
        bev = vision_bev(vt, cam)
    except GeometryError:
        return FusionRecord("V", box, type_id=vt.detection.cls, vision_id=vt.id)
    cx, cy = bev.center
    return FusionRecord("V", box, bev=bev, closest_point=Point3(cx, cy, 0.0),
                        distance=vt.distance, type_id=vt.detection.cls, vision_id=vt.id)


def _lidar_record(source: str, lt: LidarTrack, box: ImageBox | None, ego_speed: float,
                  type_id: str | None = None, vision_id: int | None = None) -> FusionRecord:
    # a track seen once has no displacement yet, so its velocity is unknown
    vel = tuple(lt.velocity) if lt.age > 1 else None
    moving = None
    if vel is not None:
        vx, vy, vz = vel
        moving = math.sqrt((vx + ego_speed) ** 2 + vy**2 + vz**2) > MOVING_SPEED
    rec = FusionRecord(source, box, bev=lt.bev, closest_point=lt.closest_point,
                       distance=lt.distance, velocity=vel,
                       moving_state=moving, type_id=type_id,
                       vision_id=vision_id, lidar_id=lt.id)
    return rec if vel is None else replace(rec, ttc=compute_ttc(rec, ego_speed))


def write_frames(frames: Iterable[Sequence[FusionRecord]], fh: IO[str]) -> int:
    """One JSON array of records per line; returns the number of lines."""
    n = 0
    for records in frames:
        fh.write(json.dumps([r.to_dict() for r in records], separators=(",", ":")))
        fh.write("\n")
        n += 1
    return n


def read_frames(fh: IO[str]) -> list[list[dict]]:
    return [json.loads(line) for line in fh if line.strip()]
