"""Vision side: box-height range regression, binning, the queue tracker and a
synthetic detector standing in for the neural network."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .geometry import CameraModel, ImageBox, PointBehindCamera, cuboid_corners, project_cuboid

CAR = "car"
CLASSES = (CAR, "pedestrian", "other")


@dataclass(frozen=True)
class Detection:
    cls: str
    confidence: float
    box: ImageBox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class VisionTrack:
    id: int
    detection: Detection
    distance: float | None  # binned; None when unknown or discarded
    last_seen: int
    raw_distance: float | None = None  # regression output before binning

    def __post_init__(self):
        if self.distance is not None and not self.distance > 0:
            raise ValueError("distance must be positive")


@dataclass(frozen=True)
class RegressionModel:
    """Power-law range model d = a * h**b on box height h (pixels)."""

    a: float = 1829.1
    b: float = -1.093
    bin_centers: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    min_distance: float = 5.0
    max_distance: float = 60.0

    def __post_init__(self):
        if not (self.a > 0 and self.b < 0):
            raise ValueError("regression needs a > 0 and b < 0")
        if list(self.bin_centers) != sorted(self.bin_centers):
            raise ValueError("bin centers must be sorted")


def estimate_distance(h_bbox: float, model: RegressionModel = RegressionModel()) -> float:
    if not h_bbox > 0:
        raise ValueError(f"box height must be positive, got {h_bbox}")
    return model.a * h_bbox ** model.b


def bin_distance(d: float, model: RegressionModel = RegressionModel()) -> float | None:
    """Snap a range estimate to the nearest bin center.

    Estimates beyond ``max_distance`` are discarded (None); those below
    ``min_distance`` pass through unchanged. Exact midpoints go to the lower
    center.
    """
    if d > model.max_distance:
        return None
    if d < model.min_distance:
        return d
    centers = model.bin_centers
    best = centers[0]
    for c in centers[1:]:
        if abs(d - c) < abs(d - best):
            best = c
    return best


def fit_regression(heights: Sequence[float], distances: Sequence[float],
                   base: RegressionModel = RegressionModel()) -> RegressionModel:
    """Least-squares power regression in log-log space."""
    h = np.log(np.asarray(heights, dtype=float))
    d = np.log(np.asarray(distances, dtype=float))
    b, log_a = np.polyfit(h, d, 1)
    return replace(base, a=float(math.exp(log_a)), b=float(b))


@dataclass
class TrackerState:
    dist_th: float = 20.0
    depth: int = 10
    queue: deque = field(default_factory=deque)
    next_id: int = 1
    frame: int = 0

    def __post_init__(self):
        self.queue = deque(self.queue, maxlen=self.depth)


def _center_distance(a: ImageBox, b: ImageBox) -> float:
    ax, ay = a.center
    bx, by = b.center
    return math.hypot(ax - bx, ay - by)


def _candidates(state: TrackerState) -> list[VisionTrack]:
    """Most recent entry per live ID across the queue, by ascending ID."""
    latest: dict[int, VisionTrack] = {}
    for frame in state.queue:
        for t in frame:
            latest[t.id] = t
    return [latest[k] for k in sorted(latest)]


def track_step(state: TrackerState, detections: Iterable[Detection],
               model: RegressionModel = RegressionModel()) -> tuple[TrackerState, list[VisionTrack]]:
    """Advance the queue tracker by one frame.

    Detections inherit the ID of the first candidate whose box center lies
    within ``dist_th`` pixels; a candidate is claimed at most once per frame.
    Candidates not seen this frame are carried into the output for as long as
    their last real sighting is within the queue depth.
    """
    frame = state.frame
    dets = list(detections)

    def ranged(det: Detection) -> tuple[float | None, float | None]:
        if det.cls != CAR or det.box.height <= 0:
            return None, None
        raw = estimate_distance(det.box.height, model)
        return bin_distance(raw, model), raw

    out: list[VisionTrack] = []
    if not state.queue:
        for det in dets:
            dist, raw = ranged(det)
            out.append(VisionTrack(state.next_id, det, dist, frame, raw))
            state.next_id += 1
    else:
        cands = _candidates(state)
        claimed: set[int] = set()
        for det in dets:
            dist, raw = ranged(det)
            tid = None
            for c in cands:
                if c.id in claimed:
                    continue
                if _center_distance(det.box, c.detection.box) < state.dist_th:
                    tid = c.id
                    break
            if tid is None:
                tid = state.next_id
                state.next_id += 1
            claimed.add(tid)
            out.append(VisionTrack(tid, det, dist, frame, raw))
        for c in cands:
            if c.id not in claimed and frame - c.last_seen < state.depth:
                out.append(c)

    state.queue.append(out)
    state.frame = frame + 1
    return state, list(out)


@dataclass(frozen=True)
class NoiseParams:
    pixel_sigma: float = 0.3
    flicker_prob: float = 0.0
    max_vision_range_m: float = 60.0
    confidence_floor: float = 0.0

    @classmethod
    def from_config(cls, cfg: dict) -> "NoiseParams":
        base = cls()
        return cls(
            pixel_sigma=float(cfg.get("pixel_sigma", base.pixel_sigma)),
            flicker_prob=float(cfg.get("flicker_prob", base.flicker_prob)),
            max_vision_range_m=float(cfg.get("max_vision_range_m", base.max_vision_range_m)),
            confidence_floor=float(cfg.get("confidence_floor", base.confidence_floor)),
        )


@dataclass(frozen=True)
class TargetPose:
    """A vehicle in the sensor BEV frame: ``x, y`` is the footprint center."""

    x: float
    y: float
    yaw: float = 0.0
    length: float = 4.5
    width: float = 1.8
    height: float = 1.42
    cls: str = CAR

    def corners(self, sensor_height: float) -> np.ndarray:
        z_c = -sensor_height + self.height / 2.0
        return cuboid_corners((self.x, self.y, z_c), (self.length, self.width, self.height), self.yaw)

    def nearest_range(self) -> float:
        # clamp the sensor origin into the footprint, in the target frame
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        lx = -(cy * self.x + sy * self.y)
        ly = -(-sy * self.x + cy * self.y)
        qx = min(max(lx, -self.length / 2), self.length / 2)
        qy = min(max(ly, -self.width / 2), self.width / 2)
        return math.hypot(lx - qx, ly - qy)


def synth_detect(targets: Iterable[TargetPose], cam: CameraModel, noise: NoiseParams = NoiseParams(),
                 rng: np.random.Generator | None = None, sensor_height: float = 0.5,
                 confidence: float = 0.9) -> list[Detection]:
    """Project each target cuboid and perturb it like a flickering detector."""
    rng = rng or np.random.default_rng()
    out = []
    for tgt in targets:
        if tgt.nearest_range() > noise.max_vision_range_m:
            continue
        try:
            box = project_cuboid(tgt.corners(sensor_height), cam)
        except PointBehindCamera:
            continue
        if box.area <= 0:
            continue
        if noise.flicker_prob > 0 and rng.random() < noise.flicker_prob:
            continue
        if noise.pixel_sigma > 0:
            e = rng.normal(0.0, noise.pixel_sigma, size=4)
            x1, y1, x2, y2 = np.add(box.as_list(), e)
            box = ImageBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
        det = Detection(tgt.cls, confidence, box)
        if det.confidence >= noise.confidence_floor:
            out.append(det)
    return out


def calibrate_regression(cam: CameraModel, target_height: float = 1.42, sensor_height: float = 0.5,
                         distances: Sequence[float] = tuple(np.linspace(5.0, 60.0, 56)),
                         base: RegressionModel = RegressionModel()) -> RegressionModel:
    """Fit the power-law range model to noiseless synthetic boxes of a car
    seen head-on, the way the regression is fitted against surveyed ranges."""
    heights = []
    for d in distances:
        tgt = TargetPose(x=d + 2.25, y=0.0, height=target_height)
        heights.append(project_cuboid(tgt.corners(sensor_height), cam).height)
    return fit_regression(heights, distances, base)
