"""Point-mass scenario simulator wiring sensors, fusion, CIPV and ACC.

The ego drives along a route (a world-frame polyline). Sensors sit at the
ego's front bumper, so the longitudinal gap to a vehicle ahead is simply the
range to its rear face. Physics integrates at ``dt``; perception and control
run every ``sensor_period`` with a zero-order hold in between.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from .control import AccConfig, AccController, standoff
from .fusion import FusionRecord, fuse
from .geometry import CameraModel
from .lidar import (BoxObstacle, GpfParams, LidarTracker, ScannerModel, cluster, downsample,
                    ground_plane_fit, scan)
from .path import BevPath, mark_in_path, select_cipv
from .vision import (CAR, NoiseParams, RegressionModel, TargetPose, TrackerState,
                     calibrate_regression, synth_detect, track_step)

CSV_HEADER = ("t", "ego_v", "ego_s", "target_s", "gap", "cipv_source", "cipv_distance",
              "v_desired", "pedal", "accel")
FUSION_MODES = ("fusion", "lidar_only", "vision_only")


# --- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class EgoConfig:
    speed: float = 27.78
    a_max_brake: float = 9.0
    a_max_accel: float = 2.0


@dataclass(frozen=True)
class TargetConfig:
    """``kind="route"``: on the ego route, ``initial_gap`` ahead, with a
    speed profile. ``kind="linear"``: straight-line motion in the world."""

    kind: str = "route"
    initial_gap: float = 100.0
    speed: float = 0.0
    brake_rate: float = 0.0  # m/s^2, positive slows the target
    brake_time: float = 0.0
    lateral_offset: float = 0.0
    x0: float = 0.0
    y0: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    length: float = 4.5
    width: float = 1.8
    height: float = 1.42


@dataclass(frozen=True)
class PathConfig:
    kind: str = "straight"  # straight | arc | csv
    length: float = 100.0  # look-ahead handed to the CIPV stage
    radius: float = 60.0
    sweep_deg: float = 90.0
    file: str | None = None
    half_width: float = 1.5


@dataclass(frozen=True)
class SensorConfig:
    lidar_range: float = 30.0
    sensor_height: float = 0.5
    sensor_period: float = 0.1
    lidar_noise: float = 0.0
    keep_ratio: float = 0.5
    cluster_dist: float = 0.6
    z_weight: float = 0.5
    min_pts: int = 3
    gpf: GpfParams = GpfParams()
    assoc_th: float = 2.0
    max_misses: int = 3
    vision: NoiseParams = NoiseParams()
    regression: str = "fit"  # "fit" to the synthetic camera, or "published" coefficients
    dist_th_px: float = 20.0
    iou_floor: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    dt: float = 0.01
    duration: float = 10.0
    seed: int = 0
    fusion_mode: str = "fusion"
    must_pass: bool = False
    ego: EgoConfig = EgoConfig()
    target: TargetConfig = TargetConfig()
    others: tuple[TargetConfig, ...] = ()  # extra vehicles, perceived but not logged
    path: PathConfig = PathConfig()
    sensors: SensorConfig = SensorConfig()
    camera: CameraModel = CameraModel.from_fov()
    acc: AccConfig = AccConfig()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if not (self.sensors.lidar_range > 0 and self.sensors.vision.max_vision_range_m > 0):
            raise ValueError("sensor ranges must be positive")
        ratio = self.sensors.sensor_period / self.dt
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("sensor_period must be a whole multiple of dt")
        for tc in (self.target, *self.others):
            if tc.kind not in ("route", "linear"):
                raise ValueError("target.kind must be 'route' or 'linear'")
        if self.path.kind not in ("straight", "arc", "csv"):
            raise ValueError("path.kind must be 'straight', 'arc' or 'csv'")

    @property
    def coverage(self) -> float:
        """Longest range at which the active sensors can report the target."""
        vis = min(self.sensors.vision.max_vision_range_m, RegressionModel().max_distance)
        if self.fusion_mode == "lidar_only":
            return self.sensors.lidar_range
        if self.fusion_mode == "vision_only":
            return vis
        return max(vis, self.sensors.lidar_range)


# --- world ------------------------------------------------------------------

class Route:
    """Arc-length parametrised world polyline."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        seg = np.diff(pts, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lens == 0):
            raise ValueError("route has repeated points")
        self.points = pts
        self.cum = np.concatenate([[0.0], np.cumsum(lens)])
        self.heading = np.arctan2(seg[:, 1], seg[:, 0])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def pose(self, s: float) -> tuple[float, float, float]:
        """(x, y, heading) at arc length ``s``; extrapolates past either end."""
        i = int(np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.heading) - 1))
        h = float(self.heading[i])
        ds = s - self.cum[i]
        x0, y0 = self.points[i]
        return float(x0 + ds * math.cos(h)), float(y0 + ds * math.sin(h)), h

    def window(self, s0: float, length: float, step: float = 2.0) -> np.ndarray:
        ss = np.arange(s0, s0 + length + 1e-9, step)
        if len(ss) < 2:
            ss = np.array([s0, s0 + length])
        return np.array([self.pose(s)[:2] for s in ss])


def build_route(cfg: PathConfig) -> Route:
    if cfg.kind == "straight":
        return Route(np.array([[0.0, 0.0], [1.0, 0.0]]))
    if cfg.kind == "arc":
        arc = BevPath.arc(cfg.radius, math.radians(cfg.sweep_deg), n=max(16, int(cfg.sweep_deg) + 1))
        return Route(arc.centerline)
    if cfg.file is None:
        raise ValueError("path.kind='csv' needs path.file")
    return Route(BevPath.from_csv(cfg.file).centerline)


@dataclass
class VehicleState:
    s: float
    v: float
    a: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("vehicle speed must be non-negative")


@dataclass
class World:
    t: float
    ego: VehicleState
    target: VehicleState
    pedal: float = 0.0
    others: tuple[VehicleState, ...] = ()


def ego_accel(pedal: float, ego: EgoConfig) -> float:
    return pedal * (ego.a_max_accel if pedal >= 0 else ego.a_max_brake)


def target_speed_at(tcfg: TargetConfig, t: float, v: float, dt: float) -> float:
    if tcfg.brake_rate > 0 and t >= tcfg.brake_time - 1e-12:
        return max(0.0, v - tcfg.brake_rate * dt)
    return v


def _advance(state: VehicleState, tc: TargetConfig, t: float, dt: float) -> VehicleState:
    v = target_speed_at(tc, t, state.v, dt)
    return VehicleState(state.s + v * dt, v, (v - state.v) / dt)


def step(world: World, dt: float, ego: EgoConfig = EgoConfig(),
         target: TargetConfig = TargetConfig(), others: tuple[TargetConfig, ...] = ()) -> World:
    """Advance every vehicle by ``dt`` with semi-implicit Euler."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if len(others) != len(world.others):
        raise ValueError("one TargetConfig is needed per extra vehicle")
    a_cmd = ego_accel(world.pedal, ego)
    v_e = max(0.0, world.ego.v + a_cmd * dt)
    a_e = (v_e - world.ego.v) / dt
    return World(
        t=world.t + dt,
        ego=VehicleState(world.ego.s + v_e * dt, v_e, a_e),
        target=_advance(world.target, target, world.t, dt),
        pedal=world.pedal,
        others=tuple(_advance(o, tc, world.t, dt) for o, tc in zip(world.others, others)),
    )


# --- log and metrics ---------------------------------------------------------

@dataclass
class SimLog:
    rows: list[tuple] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    frames: list[list[FusionRecord]] = field(default_factory=list)
    # per frame: row logged right after it, and the sources that saw the target
    frame_rows: list[int] = field(default_factory=list)
    target_sources: list[frozenset] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = CSV_HEADER.index(name)
        if name == "cipv_source":
            return np.array([r[i] for r in self.rows], dtype=object)
        return np.array([np.nan if r[i] is None else r[i] for r in self.rows], dtype=float)

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(_fmt(v) for v in r)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return f"{v:.6f}"


@dataclass(frozen=True)
class Metrics:
    avg_decel: float
    required_decel: float | None
    min_gap: float
    final_gap: float
    final_speed: float
    collision: bool
    first_detection: dict
    brake_start: float | None
    brake_end: float | None

    def as_dict(self) -> dict:
        return {
            "avg_decel": self.avg_decel, "required_decel": self.required_decel,
            "min_gap": self.min_gap, "final_gap": self.final_gap,
            "final_speed": self.final_speed, "collision": self.collision,
            "first_detection_V": self.first_detection.get("V"),
            "first_detection_VL": self.first_detection.get("VL"),
            "first_detection_L": self.first_detection.get("L"),
            "brake_start": self.brake_start, "brake_end": self.brake_end,
        }


BRAKE_EPS = 0.1  # m/s^2


def metrics(log: SimLog) -> Metrics:
    """Summary figures for one run.

    ``avg_decel`` is the speed lost over the first braking interval divided by
    its length. The interval runs from the first braking step to the first
    time the lowest speed is reached before the ego accelerates again.
    ``required_decel`` is the constant deceleration that would be needed if
    braking began when the target first came within sensor coverage.
    """
    if not log.rows:
        raise ValueError("metrics of an empty log")
    t = log.column("t")
    v = log.column("ego_v")
    gap = log.column("gap")
    acc = log.column("accel")
    src = log.column("cipv_source")

    braking = np.flatnonzero(acc < -BRAKE_EPS)
    avg = 0.0
    t0 = t1 = None
    if len(braking):
        i0 = int(braking[0])
        v0 = v[i0 - 1] if i0 > 0 else v[i0] - acc[i0] * log.meta.get("dt", 0.0)
        t_start = t[i0 - 1] if i0 > 0 else t[i0] - log.meta.get("dt", 0.0)
        # the interval ends where the ego first accelerates again
        after = np.flatnonzero(acc[i0:] > BRAKE_EPS)
        stop = i0 + int(after[0]) if len(after) else len(v)
        i1 = i0 + int(np.argmin(v[i0:stop]))
        if t[i1] > t_start:
            avg = float((v0 - v[i1]) / (t[i1] - t_start))
        t0, t1 = float(t_start), float(t[i1])

    first = {}
    for s in ("V", "VL", "L"):
        if log.target_sources:
            hit = [r for r, seen in zip(log.frame_rows, log.target_sources) if s in seen]
        else:  # a log without frames: fall back to the CIPV column
            hit = np.flatnonzero(src == s)
        if len(hit):
            first[s] = float(gap[hit[0]])

    return Metrics(
        avg_decel=avg,
        required_decel=_required(log, t, v, gap),
        min_gap=float(np.min(gap)),
        final_gap=float(gap[-1]),
        final_speed=float(v[-1]),
        collision=bool(np.any(gap <= 0)),
        first_detection=first,
        brake_start=t0,
        brake_end=t1,
    )


def _required(log: SimLog, t, v, gap) -> float | None:
    cover = log.meta.get("coverage")
    if cover is None:
        return None
    inside = np.flatnonzero(gap <= cover)
    if not len(inside):
        return None
    k = int(inside[0])
    if k > 0 and gap[k - 1] > cover:
        # interpolate the crossing between integration steps
        w = (gap[k - 1] - cover) / (gap[k - 1] - gap[k])
        v_det = v[k - 1] + w * (v[k] - v[k - 1])
        d_det = cover
    else:
        v_det, d_det = v[k], gap[k]
    v_lead = log.meta.get("target_final_speed", 0.0)
    acc = AccConfig(d_min=log.meta.get("d_min", 10.0), headway=log.meta.get("headway", 1.8))
    margin = d_det - standoff(v_lead, acc)
    if margin <= 0:
        return math.inf
    return float((v_det**2 - v_lead**2) / (2.0 * margin))


# --- the run ------------------------------------------------------------------

class Pipeline:
    """Per-tick perception, fusion and CIPV selection."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        s = cfg.sensors
        self.scanner = ScannerModel(sensor_height=s.sensor_height, noise_sigma=s.lidar_noise)
        self.lidar = LidarTracker(assoc_th=s.assoc_th, max_misses=s.max_misses)
        self.vision = TrackerState(dist_th=s.dist_th_px)
        if s.regression == "published":
            self.model = RegressionModel()
        else:
            self.model = calibrate_regression(cfg.camera, cfg.target.height, s.sensor_height)
        self.use_lidar = cfg.fusion_mode in ("fusion", "lidar_only")
        self.use_vision = cfg.fusion_mode in ("fusion", "vision_only")
        self.plane = None
        self.clouds = []

    def tick(self, t: float, poses: list[tuple[float, float, float]], path: BevPath,
             ego_speed: float, keep_cloud: bool = False) -> tuple[list[FusionRecord], FusionRecord | None]:
        """``poses`` are ego-frame (x, y, yaw) of the target, then the others."""
        cfg, s = self.cfg, self.cfg.sensors
        dims = [cfg.target, *cfg.others]
        lidar_tracks = []
        if self.use_lidar:
            boxes = [BoxObstacle(x, y, yaw, d.length, d.width, d.height)
                     for (x, y, yaw), d in zip(poses, dims)]
            cloud = scan(boxes, self.scanner, s.lidar_range, self.rng, t)
            if keep_cloud:
                self.clouds.append(cloud)
            cloud = downsample(cloud, s.keep_ratio)
            self.plane, _, non_ground = ground_plane_fit(cloud, s.gpf)
            clusters = cluster(non_ground, s.cluster_dist, s.z_weight, s.min_pts)
            tracks = self.lidar.update(clusters, s.sensor_period)
            lidar_tracks = [tr for tr in tracks if tr.misses == 0]
        vision_tracks = []
        if self.use_vision:
            visible = [TargetPose(x, y, yaw, d.length, d.width, d.height, CAR)
                       for (x, y, yaw), d in zip(poses, dims) if x > 0]
            dets = synth_detect(visible, cfg.camera, s.vision, self.rng, s.sensor_height)
            self.vision, vision_tracks = track_step(self.vision, dets, self.model)
        records = fuse(lidar_tracks, vision_tracks, cfg.camera, s.iou_floor, ego_speed, self.plane)
        records = mark_in_path(records, path)
        return records, select_cipv(records)


def _target_world(tc: TargetConfig, route: Route, target: VehicleState, t: float):
    """Footprint center and yaw of a vehicle in the world frame."""
    if tc.kind == "route":
        x, y, h = route.pose(target.s + tc.length / 2.0)
        x -= tc.lateral_offset * math.sin(h)
        y += tc.lateral_offset * math.cos(h)
        return x, y, h
    yaw = math.atan2(tc.vy, tc.vx) if (tc.vx or tc.vy) else 0.0
    return tc.x0 + tc.vx * t, tc.y0 + tc.vy * t, yaw


def _to_ego(pose, ego_pose):
    x, y, yaw = pose
    ex, ey, eh = ego_pose
    c, s = math.cos(eh), math.sin(eh)
    dx, dy = x - ex, y - ey
    return c * dx + s * dy, -s * dx + c * dy, yaw - eh


def attribute_sources(records, poses, gate: float = 5.0, rel_gate: float = 0.1) -> frozenset:
    """Sources of the records that belong to the first vehicle in ``poses``.

    Each record goes to the true vehicle nearest its closest point, if within
    ``gate + rel_gate * range`` (vision ranges are coarse far out).
    """
    seen = set()
    for r in records:
        if r.closest_point is None:
            continue
        px, py = r.closest_point.x, r.closest_point.y
        d = [math.hypot(px - x, py - y) for x, y, _ in poses]
        i = int(np.argmin(d))
        if i == 0 and d[0] <= gate + rel_gate * math.hypot(px, py):
            seen.add(r.source)
    return frozenset(seen)


def _gap(cfg: ScenarioConfig, world: World, rel) -> float:
    if cfg.target.kind == "route":
        return world.target.s - world.ego.s
    tc = cfg.target
    return TargetPose(rel[0], rel[1], rel[2], tc.length, tc.width, tc.height).nearest_range()


def run_scenario(cfg: ScenarioConfig, keep_clouds: bool = False) -> tuple[SimLog, Metrics | None]:
    """Simulate ``cfg``; metrics are None for an empty (zero-duration) run."""
    rng = np.random.default_rng(cfg.seed)
    route = build_route(cfg.path)
    pipe = Pipeline(cfg, rng)
    ctrl = AccController(cfg.acc)
    tc = cfg.target

    world = World(0.0, VehicleState(0.0, cfg.ego.speed), VehicleState(tc.initial_gap, tc.speed),
                  others=tuple(VehicleState(o.initial_gap, o.speed) for o in cfg.others))
    vehicles = (tc, *cfg.others)
    n_steps = int(round(cfg.duration / cfg.dt))
    every = int(round(cfg.sensors.sensor_period / cfg.dt))
    log = SimLog(meta=dict(
        name=cfg.name, dt=cfg.dt, coverage=cfg.coverage, d_min=cfg.acc.d_min,
        headway=cfg.acc.headway, fusion_mode=cfg.fusion_mode, seed=cfg.seed,
    ))

    v_des = cfg.ego.speed
    cipv = None
    for k in range(n_steps):
        if k % every == 0:
            ego_pose = route.pose(world.ego.s)
            states = (world.target, *world.others)
            poses = [_to_ego(_target_world(c, route, st, world.t), ego_pose)
                     for c, st in zip(vehicles, states)]
            pts = route.window(world.ego.s, cfg.path.length)
            local = np.array([_to_ego((x, y, 0.0), ego_pose)[:2] for x, y in pts])
            path = BevPath(local, cfg.path.half_width)
            records, cipv = pipe.tick(world.t, poses, path, world.ego.v, keep_clouds)
            log.frames.append(records)
            log.frame_rows.append(len(log.rows))
            log.target_sources.append(attribute_sources(records, poses))
            v_des, pedal = ctrl.step(records, cipv, world.ego.v, cfg.sensors.sensor_period)
            world.pedal = pedal
        world = step(world, cfg.dt, cfg.ego, tc, cfg.others)
        rel = _to_ego(_target_world(tc, route, world.target, world.t), route.pose(world.ego.s))
        gap = _gap(cfg, world, rel)
        if gap < 0 and tc.kind == "route":
            # a crash: the ego cannot pass through, it is carried behind the target
            world.ego = VehicleState(world.target.s, min(world.ego.v, world.target.v), world.ego.a)
            gap = 0.0
        log.rows.append((
            round(world.t, 9), world.ego.v, world.ego.s,
            world.target.s if tc.kind == "route" else world.ego.s + gap, gap,
            None if cipv is None else cipv.source,
            None if cipv is None else cipv.distance,
            v_des, world.pedal, world.ego.a,
        ))

    log.meta["target_final_speed"] = world.target.v if tc.kind == "route" else 0.0
    log.meta["clouds"] = pipe.clouds if keep_clouds else None
    if not log.rows:
        return log, None
    return log, metrics(log)
