"""Command line: run scenarios, sweep a parameter, play demos, replay clouds.

Exit codes: 0 success, 1 configuration error, 2 a must-pass scenario failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .fusion import write_frames
from .lidar import (GpfParams, LidarTracker, cluster, downsample, dump_cloud, ground_plane_fit,
                    replay_clouds)
from .scenarios import DEMOS, ConfigError, build_config, demo_raw, load_raw, parse_value, set_dotted
from .sim import ScenarioConfig, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2
METRIC_FIELDS = ("avg_decel", "required_decel", "min_gap", "final_gap", "final_speed", "collision",
                 "first_detection_V", "first_detection_VL", "first_detection_L")


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def _apply(raw: dict, overrides: dict) -> dict:
    for k, v in overrides.items():
        raw = set_dotted(raw, k, v)
    return raw


def _execute(cfg: ScenarioConfig, out: str | None, frames: str | None, clouds: str | None) -> int:
    log, m = run_scenario(cfg, keep_clouds=clouds is not None)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            log.write_csv(fh)
    if frames:
        Path(frames).parent.mkdir(parents=True, exist_ok=True)
        with open(frames, "w") as fh:
            write_frames(log.frames, fh)
    if clouds:
        for i, cloud in enumerate(log.meta["clouds"]):
            dump_cloud(cloud, clouds, i)
    summary = {"name": cfg.name, "fusion_mode": cfg.fusion_mode, "seed": cfg.seed}
    summary.update(m.as_dict() if m is not None else {})
    print(json.dumps(summary))
    if cfg.must_pass and m is not None and m.collision:
        print(f"{cfg.name}: collision in a must-pass scenario", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_run(args) -> int:
    raw = _apply(load_raw(args.scenario), _overrides(args.set))
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = build_config(raw, Path(args.scenario).parent)
    return _execute(cfg, args.out, args.frames, args.dump_clouds)


def cmd_demo(args) -> int:
    raw = _apply(demo_raw(args.name), _overrides(args.set))
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = build_config(raw)
    out = args.out if args.out is not None else f"{args.name}.csv"
    return _execute(cfg, out, args.frames, args.dump_clouds)


def _sweep_one(job: tuple[ScenarioConfig, object]) -> dict:
    cfg, value = job
    log, m = run_scenario(cfg)
    row = {"value": value}
    row.update({k: v for k, v in (m.as_dict() if m else {}).items() if k in METRIC_FIELDS})
    return row


def cmd_sweep(args) -> int:
    base = _apply(load_raw(args.scenario), _overrides(args.set))
    values = [parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    param = args.param
    # each value gets its own config and so its own RNG stream
    jobs = [(build_config(set_dotted(base, param, v), Path(args.scenario).parent), v)
            for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=("param", "value") + METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({"param": param, **r})
    finally:
        if fh is not sys.stdout:
            fh.close()
    failed = [r["value"] for r, (cfg, _) in zip(rows, jobs) if cfg.must_pass and r.get("collision")]
    if failed:
        print(f"collision for {param} = {failed}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_replay(args) -> int:
    """Ground fit, cluster and track dumped clouds; one JSON line per frame."""
    src = Path(args.clouds)
    if not src.is_dir():
        raise ConfigError(f"no such directory: {src}")
    tracker = LidarTracker(assoc_th=args.assoc_th)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for idx, cloud in replay_clouds(src, args.period):
            cloud = downsample(cloud, args.keep_ratio)
            plane, _, non_ground = ground_plane_fit(cloud, GpfParams())
            tracks = tracker.update(cluster(non_ground, args.cluster_dist, args.z_weight, 3),
                                    args.period)
            out.write(json.dumps({
                "frame": idx,
                "plane": [plane.n1, plane.n2, plane.n3, plane.n4],
                "tracks": [{"id": t.id, "distance": t.distance, "velocity": list(t.velocity),
                            "n_points": t.n_points, "misses": t.misses} for t in tracks],
            }) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; 2 is reserved for failed runs
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lvfusion", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def outputs(sp):
        sp.add_argument("--frames", help="write fusion records as JSON lines")
        sp.add_argument("--dump-clouds", metavar="DIR", help="write raw point clouds as CSV")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a scenario key, e.g. sensors.lidar_range_m=35")

    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True, help="CSV log path")
    outputs(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario once per parameter value")
    s.add_argument("--scenario", required=True)
    s.add_argument("--param", required=True, help="dotted key, e.g. sensors.lidar_range_m")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", help="metrics CSV (default stdout)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("demo", help="run a built-in scenario")
    d.add_argument("name", choices=DEMOS)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", help="CSV log path (default <name>.csv)")
    outputs(d)
    d.set_defaults(func=cmd_demo)

    rp = sub.add_parser("replay", help="track dumped point clouds")
    rp.add_argument("--clouds", required=True, help="directory of frame_*.csv files")
    rp.add_argument("--out")
    rp.add_argument("--period", type=float, default=0.1)
    rp.add_argument("--keep-ratio", type=float, default=0.5)
    rp.add_argument("--cluster-dist", type=float, default=0.6)
    rp.add_argument("--z-weight", type=float, default=0.5)
    rp.add_argument("--assoc-th", type=float, default=2.0)
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
