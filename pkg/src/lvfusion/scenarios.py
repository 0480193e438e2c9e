"""Scenario files: TOML loading, validation, dotted overrides and demos.

A scenario is a TOML document. Top-level keys: ``name``, ``dt``,
``duration``, ``seed``, ``fusion_mode``, ``must_pass``, ``iou_floor``.
Tables: ``[ego]``, ``[target]``, ``[path]``, ``[sensors]``, ``[vision]``,
``[camera]``, ``[gpf]`` and ``[acc]``, plus an optional ``[[others]]`` array of
extra vehicles using the ``[target]`` keys. Unknown keys are rejected so typos
fail loudly.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import AccConfig
from .geometry import CameraModel, GeometryError
from .lidar import GpfParams
from .sim import EgoConfig, PathConfig, ScenarioConfig, SensorConfig, TargetConfig
from .vision import NoiseParams

DEMOS = ("ccrs", "ccrm", "ccrb", "cipv-straight", "cipv-curve", "cipv-cross")


class ConfigError(ValueError):
    """The scenario file is missing, malformed or inconsistent."""


_TOP = {"name": str, "dt": float, "duration": float, "seed": int, "fusion_mode": str,
        "must_pass": bool, "iou_floor": float}
_TABLES = ("ego", "target", "path", "sensors", "vision", "camera", "gpf", "acc")

# file key -> dataclass field
_EGO = {"speed_mps": "speed", "a_max_brake": "a_max_brake", "a_max_accel": "a_max_accel"}
_TARGET = {
    "kind": "kind", "initial_gap_m": "initial_gap", "speed_mps": "speed",
    "brake_rate": "brake_rate", "brake_time_s": "brake_time",
    "lateral_offset_m": "lateral_offset", "x0_m": "x0", "y0_m": "y0", "vx_mps": "vx",
    "vy_mps": "vy", "length_m": "length", "width_m": "width", "height_m": "height",
}
_PATH = {"source": "kind", "length_m": "length", "radius_m": "radius",
         "sweep_deg": "sweep_deg", "half_width_m": "half_width"}
_SENSORS = {
    "lidar_range_m": "lidar_range", "sensor_height_m": "sensor_height",
    "sensor_period_s": "sensor_period", "lidar_noise_m": "lidar_noise",
    "keep_ratio": "keep_ratio", "cluster_dist_m": "cluster_dist", "z_weight": "z_weight",
    "min_pts": "min_pts", "assoc_th_m": "assoc_th", "max_misses": "max_misses",
    "regression": "regression", "dist_th_px": "dist_th_px",
}
_CAMERA = ("h_res_rad_per_px", "v_res_rad_per_px", "c_x", "c_y", "image_width", "image_height")
_VISION = ("pixel_sigma", "flicker_prob", "max_vision_range_m", "confidence_floor")


def _check_keys(table: str, got: dict, allowed) -> None:
    unknown = set(got) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{table}]: {', '.join(sorted(unknown))}")


def _mapped(table: str, raw: dict, mapping: dict, cls, base=None):
    _check_keys(table, raw, mapping)
    base = base if base is not None else cls()
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(cls)}
    kw = {}
    for k, v in raw.items():
        name = mapping[k]
        want = kinds[name]
        try:
            kw[name] = v if want in (str, type(None)) else want(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{table}] {k}: {exc}") from None
    return replace(base, **kw)


def _path_config(raw: dict, base_dir: Path | None) -> PathConfig:
    _check_keys("path", raw, _PATH)
    raw = dict(raw)
    source = str(raw.pop("source", "straight"))
    cfg = _mapped("path", raw, _PATH, PathConfig)
    if source in ("straight", "arc"):
        return replace(cfg, kind=source)
    p = Path(source)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    if not p.is_file():
        raise ConfigError(f"[path] source: no such file {p}")
    return replace(cfg, kind="csv", file=str(p))


def build_config(raw: dict, base_dir: str | Path | None = None) -> ScenarioConfig:
    """Turn a parsed TOML mapping into a validated :class:`ScenarioConfig`."""
    base_dir = Path(base_dir) if base_dir is not None else None
    _check_keys("top level", raw, list(_TOP) + list(_TABLES) + ["others"])
    for t in _TABLES:
        if t in raw and not isinstance(raw[t], dict):
            raise ConfigError(f"[{t}] must be a table")
    others_raw = raw.get("others", [])
    if not isinstance(others_raw, list) or not all(isinstance(o, dict) for o in others_raw):
        raise ConfigError("[[others]] must be an array of tables")
    try:
        top = {k: _TOP[k](raw[k]) for k in _TOP if k in raw}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"top level: {exc}") from None
    iou_floor = top.pop("iou_floor", 0.0)

    try:
        _check_keys("vision", raw.get("vision", {}), _VISION)
        _check_keys("camera", raw.get("camera", {}), _CAMERA)
        vision = NoiseParams.from_config(raw.get("vision", {}))
        camera = CameraModel.from_config(raw.get("camera", {}))
        gpf = _mapped("gpf", raw.get("gpf", {}), {f.name: f.name for f in fields(GpfParams)},
                      GpfParams)
        sensors = _mapped("sensors", raw.get("sensors", {}), _SENSORS, SensorConfig)
        sensors = replace(sensors, vision=vision, gpf=gpf, iou_floor=iou_floor)
        if sensors.regression not in ("fit", "published"):
            raise ConfigError("[sensors] regression must be 'fit' or 'published'")
        cfg = ScenarioConfig(
            **top,
            ego=_mapped("ego", raw.get("ego", {}), _EGO, EgoConfig),
            target=_mapped("target", raw.get("target", {}), _TARGET, TargetConfig),
            others=tuple(_mapped("others", o, _TARGET, TargetConfig) for o in others_raw),
            path=_path_config(raw.get("path", {}), base_dir),
            sensors=sensors,
            camera=camera,
            acc=AccConfig.from_config(raw.get("acc", {})),
        )
    except ConfigError:
        raise
    except (GeometryError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_raw(path: str | Path) -> dict:
    p = Path(path)
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def load_scenario(path: str | Path, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    raw = load_raw(path)
    for k, v in (overrides or {}).items():
        raw = set_dotted(raw, k, v)
    return build_config(raw, Path(path).parent)


def set_dotted(raw: dict, key: str, value: Any) -> dict:
    """Copy of ``raw`` with ``a.b.c`` set to ``value``."""
    parts = key.split(".")
    if not all(parts):
        raise ConfigError(f"bad parameter name {key!r}")
    out = copy.deepcopy(raw)
    node = out
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {p} is not a table")
    node[parts[-1]] = value
    return out


def parse_value(text: str) -> Any:
    """Interpret a command-line value as a TOML scalar, falling back to a string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def demo_raw(name: str) -> dict:
    if name not in DEMOS:
        raise ConfigError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    text = resources.files("lvfusion").joinpath("demos", f"{name}.toml").read_text()
    return tomllib.loads(text)


def load_demo(name: str, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    raw = demo_raw(name)
    for k, v in (overrides or {}).items():
        raw = set_dotted(raw, k, v)
    return build_config(raw, Path(str(resources.files("lvfusion").joinpath("demos"))))


__all__ = ["ConfigError", "DEMOS", "build_config", "demo_raw", "load_demo", "load_raw",
           "load_scenario", "parse_value", "set_dotted"]
