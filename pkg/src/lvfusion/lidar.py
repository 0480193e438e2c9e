"""LiDAR object pipeline: downsampling, ground removal, clustering, tracking.

Also holds the synthetic 16-channel scanner used by the simulator and the CSV
dump/replay helpers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .geometry import BevBox, Point3, cuboid_corners


class DegenerateSeedError(ValueError):
    """Seed points do not span a plane."""


@dataclass
class PointCloud:
    points: np.ndarray
    frame_time: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be an (N, 3) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask_or_idx) -> "PointCloud":
        return PointCloud(self.points[mask_or_idx], self.frame_time)


@dataclass(frozen=True)
class PlaneModel:
    n1: float
    n2: float
    n3: float
    n4: float

    def __post_init__(self):
        norm = math.sqrt(self.n1**2 + self.n2**2 + self.n3**2)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length, got {norm}")

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.n1, self.n2, self.n3])

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance of each point to the plane."""
        return np.asarray(points, dtype=float) @ self.normal + self.n4

    def height_at(self, x: float, y: float) -> float:
        return -(self.n1 * x + self.n2 * y + self.n4) / self.n3


@dataclass(frozen=True)
class GpfParams:
    n_iter: int = 3
    n_lpr: int = 20
    th_seeds: float = 0.4
    th_dist: float = 0.2
    num_segments: int = 3

    def __post_init__(self):
        if min(self.n_iter, self.n_lpr, self.num_segments) < 1:
            raise ValueError("GPF counts must be positive")
        if not (self.th_seeds > 0 and self.th_dist > 0):
            raise ValueError("GPF thresholds must be positive")


def downsample(cloud: PointCloud, keep_ratio: float) -> PointCloud:
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must be in (0, 1]")
    n = len(cloud)
    k = math.ceil(n * keep_ratio)
    if k >= n:
        return PointCloud(cloud.points.copy(), cloud.frame_time)
    idx = (np.arange(k) * n) // k
    return cloud.subset(idx)


def _fit_plane(seeds: np.ndarray) -> PlaneModel:
    if len(seeds) < 3:
        raise DegenerateSeedError(f"need at least 3 seed points, got {len(seeds)}")
    mean = seeds.mean(axis=0)
    centered = seeds - mean
    cov = centered.T @ centered
    _, s, vt = np.linalg.svd(cov)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateSeedError("seed points are collinear or coincident")
    normal = vt[2]
    if normal[2] < 0:
        normal = -normal
    normal = normal / np.linalg.norm(normal)
    n4 = -float(normal @ mean)
    return PlaneModel(float(normal[0]), float(normal[1]), float(normal[2]), n4)


def _segment_ground(points: np.ndarray, params: GpfParams) -> np.ndarray:
    """Ground mask for one segment (lowest-point-representative seeding)."""
    z = points[:, 2]
    lowest = np.sort(z)[: params.n_lpr]
    lpr = lowest.mean()
    seeds = points[z < lpr + params.th_seeds]
    ground = np.zeros(len(points), dtype=bool)
    for _ in range(params.n_iter):
        plane = _fit_plane(seeds)
        ground = np.abs(plane.distance(points)) < params.th_dist
        seeds = points[ground]
    return ground


def ground_plane_fit(cloud: PointCloud, params: GpfParams = GpfParams()):
    """Split a cloud into ground and obstacles.

    The cloud is cut into ``num_segments`` equal-count slabs along x (the
    driving direction); each slab is fitted independently. The returned plane
    is the least-covariance fit over every ground point.

    Returns ``(plane, ground, non_ground)``.
    """
    pts = cloud.points
    n = len(pts)
    if n < params.n_lpr:
        raise ValueError(f"cloud has {n} points, fewer than n_lpr={params.n_lpr}")
    segments = max(1, min(params.num_segments, n // params.n_lpr))
    order = np.argsort(pts[:, 0], kind="stable")
    mask = np.zeros(n, dtype=bool)
    for idx in np.array_split(order, segments):
        mask[idx] = _segment_ground(pts[idx], params)
    plane = _fit_plane(pts[mask])
    return plane, cloud.subset(mask), cloud.subset(~mask)


def cluster_indices(points: np.ndarray, dist_th: float, z_weight: float = 1.0,
                    min_pts: int = 1) -> list[np.ndarray]:
    """Index sets of Euclidean clusters under a z-weighted metric.

    Two points are neighbours when sqrt(dx^2 + dy^2 + (z_weight*dz)^2) is
    strictly below ``dist_th``. Clusters are ordered by their lowest index.
    """
    if not dist_th > 0:
        raise ValueError("dist_th must be positive")
    if not 0 < z_weight <= 1:
        raise ValueError("z_weight must be in (0, 1]")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return []
    scaled = pts * np.array([1.0, 1.0, z_weight])
    tree = cKDTree(scaled)
    # query_ball_point is inclusive; shrink by one ulp for a strict bound
    radius = np.nextafter(dist_th, 0.0)
    neigh = tree.query_ball_point(scaled, r=radius)
    lengths = np.fromiter((len(nb) for nb in neigh), dtype=np.int64, count=len(neigh))
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    indices = np.fromiter((j for nb in neigh for j in nb), dtype=np.int64, count=int(indptr[-1]))
    labels = kernels.grow_clusters(indptr, indices)
    out = []
    for lab in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == lab)
        if len(idx) >= min_pts:
            out.append(idx)
    return out


def cluster(non_ground: PointCloud, dist_th: float, z_weight: float = 1.0,
            min_pts: int = 1) -> list[np.ndarray]:
    """Clusters of ``non_ground`` as (k, 3) point arrays."""
    return [non_ground.points[idx] for idx in
            cluster_indices(non_ground.points, dist_th, z_weight, min_pts)]


@dataclass
class LidarTrack:
    id: int
    extent: tuple[float, float, float]
    closest_point: Point3
    velocity: tuple[float, float, float]
    bev: BevBox
    centroid: tuple[float, float, float]
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]]
    n_points: int
    age: int = 1
    misses: int = 0

    @property
    def distance(self) -> float:
        return math.hypot(self.closest_point.x, self.closest_point.y)

    def cuboid(self, floor_z: float | None = None) -> np.ndarray:
        """8 cuboid corners; ``floor_z`` extends the box down to the ground."""
        lo, hi = self.bounds
        z_lo = lo[2] if floor_z is None else min(lo[2], floor_z)
        center = ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (z_lo + hi[2]) / 2)
        size = (hi[0] - lo[0], hi[1] - lo[1], hi[2] - z_lo)
        return cuboid_corners(center, size)


def _describe(points: np.ndarray) -> dict:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    cp = points[np.argmin(np.einsum("ij,ij->i", points, points))]
    bev = BevBox(((lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])))
    return dict(
        extent=tuple(float(v) for v in hi - lo),
        closest_point=Point3(*(float(v) for v in cp)),
        bev=bev,
        centroid=tuple(float(v) for v in points.mean(axis=0)),
        bounds=(tuple(float(v) for v in lo), tuple(float(v) for v in hi)),
        n_points=len(points),
    )


class LidarTracker:
    """Nearest-neighbour track manager with a point-count similarity gate.

    Each frame, tracks are predicted forward with their velocity, then paired
    greedily with clusters in ascending centroid-distance order (ties go to the
    lower track ID). A pair is admissible when the distance is below
    ``assoc_th`` and the point-count ratio lies in ``count_ratio``.
    """

    def __init__(self, assoc_th: float = 2.0, max_misses: int = 3,
                 count_ratio: tuple[float, float] = (0.5, 2.0), velocity_gain: float = 0.5):
        self.assoc_th = assoc_th
        self.max_misses = max_misses
        self.count_ratio = count_ratio
        self.velocity_gain = velocity_gain
        self.tracks: list[LidarTrack] = []
        self._next_id = 1

    def update(self, clusters: Sequence[np.ndarray], dt: float) -> list[LidarTrack]:
        if not dt > 0:
            raise ValueError("dt must be positive")
        descs = [_describe(np.asarray(c, dtype=float)) for c in clusters if len(c)]
        lo_ratio, hi_ratio = self.count_ratio
        pairs = []
        for t in self.tracks:
            pred = np.add(t.centroid, np.multiply(t.velocity, dt))
            for j, d in enumerate(descs):
                dist = float(np.linalg.norm(np.subtract(d["centroid"], pred)))
                ratio = d["n_points"] / t.n_points
                if dist < self.assoc_th and lo_ratio <= ratio <= hi_ratio:
                    pairs.append((dist, t.id, j, t))
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))

        used_tracks: set[int] = set()
        used_clusters: set[int] = set()
        out: list[LidarTrack] = []
        for _, tid, j, t in pairs:
            if tid in used_tracks or j in used_clusters:
                continue
            used_tracks.add(tid)
            used_clusters.add(j)
            d = descs[j]
            raw = tuple((c - p) / dt for c, p in zip(d["centroid"], t.centroid))
            if t.age == 1:
                vel = raw
            else:
                g = self.velocity_gain
                vel = tuple(v + g * (r - v) for v, r in zip(t.velocity, raw))
            out.append(LidarTrack(id=tid, velocity=vel, age=t.age + 1, misses=0, **d))

        for t in self.tracks:
            if t.id in used_tracks:
                continue
            misses = t.misses + 1
            if misses > self.max_misses:
                continue
            # coast on the last velocity so a re-acquired cluster still gates
            shift = np.multiply(t.velocity, dt)
            lo, hi = t.bounds
            out.append(replace(
                t,
                misses=misses,
                age=t.age + 1,
                centroid=tuple(np.add(t.centroid, shift).tolist()),
                bounds=(tuple(np.add(lo, shift).tolist()), tuple(np.add(hi, shift).tolist())),
            ))

        for j, d in enumerate(descs):
            if j in used_clusters:
                continue
            out.append(LidarTrack(id=self._next_id, velocity=(0.0, 0.0, 0.0), **d))
            self._next_id += 1

        out.sort(key=lambda t: t.id)
        self.tracks = out
        return list(out)


def update_tracks(tracks: list[LidarTrack], clusters: Sequence[np.ndarray], dt: float,
                  assoc_th: float, max_misses: int, next_id: int | None = None):
    """Functional wrapper over :class:`LidarTracker` for one frame.

    Returns ``(tracks, next_id)``; pass ``next_id`` back in so identifiers are
    never reused.
    """
    tr = LidarTracker(assoc_th=assoc_th, max_misses=max_misses)
    tr.tracks = list(tracks)
    if next_id is None:
        next_id = max((t.id for t in tracks), default=0) + 1
    tr._next_id = next_id
    out = tr.update(clusters, dt)
    return out, tr._next_id


# --- synthetic scanner -----------------------------------------------------

VLP16_ELEVATIONS_DEG = tuple(range(-15, 16, 2))


@dataclass(frozen=True)
class ScannerModel:
    """Spinning 16-channel scanner restricted to the frontal half-plane."""

    elevations_deg: tuple[float, ...] = VLP16_ELEVATIONS_DEG
    azimuth_res_deg: float = 0.2
    azimuth_fov_deg: float = 180.0
    sensor_height: float = 0.5
    max_range: float = 100.0
    noise_sigma: float = 0.0

    def ray_directions(self) -> np.ndarray:
        half = self.azimuth_fov_deg / 2.0
        n_az = int(round(self.azimuth_fov_deg / self.azimuth_res_deg)) + 1
        az = np.radians(np.linspace(-half, half, n_az))
        el = np.radians(np.asarray(self.elevations_deg, dtype=float))
        ee, aa = np.meshgrid(el, az, indexing="ij")
        return np.column_stack([
            (np.cos(ee) * np.cos(aa)).ravel(),
            (np.cos(ee) * np.sin(aa)).ravel(),
            np.sin(ee).ravel(),
        ])


@dataclass(frozen=True)
class BoxObstacle:
    """Upright box resting on the ground, in the sensor frame."""

    x: float  # footprint center
    y: float
    yaw: float
    length: float = 4.5
    width: float = 1.8
    height: float = 1.42


def _ray_box_hits(dirs: np.ndarray, box: BoxObstacle, z_floor: float) -> np.ndarray:
    """Slab-method ray/box intersection; returns hit range (inf when missed)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    # rays start at the origin; express them in the box frame
    ox = -(c * box.x + s * box.y)
    oy = -(-s * box.x + c * box.y)
    oz = -(z_floor + box.height / 2.0)
    dx = c * dirs[:, 0] + s * dirs[:, 1]
    dy = -s * dirs[:, 0] + c * dirs[:, 1]
    dz = dirs[:, 2]
    half = np.array([box.length / 2.0, box.width / 2.0, box.height / 2.0])
    t_near = np.full(len(dirs), -np.inf)
    t_far = np.full(len(dirs), np.inf)
    hit = np.ones(len(dirs), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for o, d, h in ((ox, dx, half[0]), (oy, dy, half[1]), (oz, dz, half[2])):
            parallel = np.abs(d) < 1e-15
            hit &= ~(parallel & (np.abs(o) > h))
            t1 = (-h - o) / d
            t2 = (h - o) / d
            lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
            hi = np.where(parallel, np.inf, np.maximum(t1, t2))
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
    hit &= (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def scan(obstacles: Iterable[BoxObstacle], scanner: ScannerModel = ScannerModel(),
         obstacle_range: float | None = None, rng: np.random.Generator | None = None,
         frame_time: float = 0.0) -> PointCloud:
    """Ray-cast a frame against a flat ground plus box obstacles.

    ``obstacle_range`` models the effective detection limit: obstacle returns
    farther than this are dropped, ground returns are kept up to
    ``scanner.max_range``.
    """
    dirs = scanner.ray_directions()
    z_floor = -scanner.sensor_height
    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[:, 2] < 0, z_floor / dirs[:, 2], np.inf)
    t_ground = np.where(t_ground <= scanner.max_range, t_ground, np.inf)
    best = t_ground.copy()
    obs_limit = scanner.max_range if obstacle_range is None else min(obstacle_range, scanner.max_range)
    for box in obstacles:
        t_box = _ray_box_hits(dirs, box, z_floor)
        t_box = np.where(t_box <= obs_limit, t_box, np.inf)
        best = np.minimum(best, t_box)
    keep = np.isfinite(best)
    pts = dirs[keep] * best[keep, None]
    if scanner.noise_sigma > 0:
        rng = rng or np.random.default_rng()
        pts = pts + rng.normal(0.0, scanner.noise_sigma, size=pts.shape)
    return PointCloud(pts, frame_time)


# --- CSV dump / replay -----------------------------------------------------

def dump_cloud(cloud: PointCloud, directory: str | Path, frame_index: int) -> Path:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    out = path / f"frame_{frame_index:06d}.csv"
    np.savetxt(out, cloud.points, fmt="%.6f", delimiter=",", header="x,y,z", comments="")
    return out


def load_cloud(path: str | Path, frame_time: float = 0.0) -> PointCloud:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return PointCloud(data.reshape(-1, 3), frame_time)


def replay_clouds(directory: str | Path, period: float = 0.1):
    """Yield ``(frame_index, cloud)`` for every dumped frame, in index order."""
    frames = []
    for p in Path(directory).glob("frame_*.csv"):
        m = re.fullmatch(r"frame_(\d+)\.csv", p.name)
        if m:
            frames.append((int(m.group(1)), p))
    for idx, p in sorted(frames):
        yield idx, load_cloud(p, idx * period)
