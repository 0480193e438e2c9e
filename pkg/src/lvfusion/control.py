"""Longitudinal ACC: a distance-ratio speed law plus a PID speed loop.

The desired speed scales the current speed by how much of the safety margin
is left::

    v_des = v * (d - d_min) / (d_desired - d_min)

``d_desired`` is a safety distance that depends on speed: a time headway on
the lead's speed plus the distance needed to shed the speed difference at the
planned deceleration. The plan is latched when a CIPV is first acquired at
the gentlest rate that still ends at the standoff distance, so braking starts
as soon as a vehicle is seen and follows a constant-deceleration profile.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .fusion import FusionRecord


@dataclass(frozen=True)
class AccConfig:
    d_min: float = 10.0
    headway: float = 1.8
    ttc_threshold: float = 3.0
    v_set: float = 27.78
    kp: float = 0.55
    ki: float = 0.05
    kd: float = 0.0
    integrator_clamp: float = 2.0
    pedal_scale: float = 1.0
    plan_decel_min: float = 1.0  # gentler plans wait until this rate is needed
    plan_decel_max: float = 9.0
    default_decel: float = 3.0  # used when no plan has been latched

    def __post_init__(self):
        if not self.d_min > 0:
            raise ValueError("d_min must be positive")
        if self.headway < 0:
            raise ValueError("headway must be non-negative")
        if not self.ttc_threshold > 0:
            raise ValueError("ttc_threshold must be positive")
        if not self.v_set >= 0:
            raise ValueError("v_set must be non-negative")
        if self.integrator_clamp < 0:
            raise ValueError("integrator_clamp must be non-negative")
        if not 0 < self.plan_decel_min <= self.plan_decel_max:
            raise ValueError("need 0 < plan_decel_min <= plan_decel_max")
        if not self.default_decel > 0:
            raise ValueError("default_decel must be positive")

    @classmethod
    def from_config(cls, cfg: dict) -> "AccConfig":
        keys = {
            "d_min_m": "d_min", "headway_s": "headway", "ttc_threshold_s": "ttc_threshold",
            "v_set_mps": "v_set", "kp": "kp", "ki": "ki", "kd": "kd",
            "integrator_clamp": "integrator_clamp", "pedal_scale": "pedal_scale",
            "plan_decel_min": "plan_decel_min", "plan_decel_max": "plan_decel_max",
            "default_decel": "default_decel",
        }
        unknown = set(cfg) - set(keys)
        if unknown:
            raise ValueError(f"unknown [acc] keys: {sorted(unknown)}")
        return cls(**{keys[k]: float(v) for k, v in cfg.items()})


@dataclass(frozen=True)
class ControllerState:
    integrator: float = 0.0
    prev_error: float | None = None


def scaled_velocity(v_current: float, d_current: float, d_min: float, d_desired: float) -> float:
    """The distance-ratio law on its own, unclamped."""
    span = d_desired - d_min
    if span <= 0:
        return 0.0 if d_current <= d_min else v_current
    return v_current * (d_current - d_min) / span


def lead_speed(cipv: FusionRecord, v_current: float) -> float:
    """Absolute lead speed; vision-only objects are taken as stationary."""
    if cipv.velocity is None:
        return 0.0
    return max(0.0, v_current + cipv.velocity[0])


def standoff(v_lead: float, cfg: AccConfig) -> float:
    return cfg.d_min + cfg.headway * v_lead


def desired_distance(v_current: float, v_lead: float, decel: float, cfg: AccConfig) -> float:
    closing = max(v_current**2 - v_lead**2, 0.0)
    return standoff(v_lead, cfg) + closing / (2.0 * decel)


def required_decel(v_current: float, v_lead: float, distance: float, cfg: AccConfig) -> float:
    """Constant deceleration that sheds the speed difference exactly at the
    standoff distance; ``inf`` when already inside it."""
    margin = distance - standoff(v_lead, cfg)
    closing = max(v_current**2 - v_lead**2, 0.0)
    if closing == 0.0:
        return 0.0
    if margin <= 0:
        return math.inf
    return closing / (2.0 * margin)


def desired_velocity(records: Iterable[FusionRecord], cipv: FusionRecord | None, v_current: float,
                     cfg: AccConfig, plan_decel: float | None = None,
                     v_lead: float | None = None) -> float:
    """Speed set-point for one control tick, in [0, v_set].

    ``v_lead`` overrides the lead speed read from the record (vision-only
    records carry none).
    """
    if v_current < 0:
        raise ValueError("v_current must be non-negative")
    if cipv is not None and cipv.distance is not None:
        decel = plan_decel if plan_decel is not None else cfg.default_decel
        if v_lead is None:
            v_lead = lead_speed(cipv, v_current)
        d = cipv.distance
        d_des = desired_distance(v_current, v_lead, decel, cfg)
        if d <= d_des:
            v = scaled_velocity(v_current, d, cfg.d_min, d_des)
        else:
            # outside the safety distance: never brake, and close in no faster
            # than the speed whose safety distance is the current gap
            margin = max(d - standoff(v_lead, cfg), 0.0)
            v = max(v_current, math.sqrt(v_lead**2 + 2.0 * decel * margin))
        return min(max(v, 0.0), cfg.v_set)

    ttcs = [r.ttc for r in records if r.ttc is not None]
    if ttcs and min(ttcs) < cfg.ttc_threshold:
        v = v_current * min(ttcs) / cfg.ttc_threshold
        return min(max(v, 0.0), cfg.v_set)
    return cfg.v_set


def pid_step(state: ControllerState, v_desired: float, v_current: float, dt: float,
             cfg: AccConfig) -> tuple[ControllerState, float]:
    """One PID update. Returns the new state and a pedal in [-1, 1]
    (positive accelerates, negative brakes)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    err = v_desired - v_current
    lim = cfg.integrator_clamp
    # clamp before use so stale error cannot kick the car later
    integ = min(max(state.integrator + err * dt, -lim), lim)
    deriv = 0.0 if state.prev_error is None else (err - state.prev_error) / dt
    u = cfg.kp * err + cfg.ki * integ + cfg.kd * deriv
    pedal = min(max(cfg.pedal_scale * u, -1.0), 1.0)
    return ControllerState(integ, err), pedal


class AccController:
    """Stateful wrapper: PID state, the latched braking plan, a range
    estimate and a lead-speed estimate for the CIPV.

    When a CIPV is acquired the controller latches the constant deceleration
    that sheds the speed difference by the standoff distance and ramps a
    speed ceiling down at that rate until it meets the lead speed. The
    distance-ratio law stays active underneath as a safety bound.

    Vision-only ranges are snapped to coarse bins, so the controller keeps a
    dead-reckoned range (propagated by the closing speed) and only pulls it
    back inside the reported bin when the two disagree. LiDAR-backed ranges
    are used as measured. Vision-only leads carry no velocity; their speed is
    the least-squares slope of their absolute position (ego odometry plus
    the unbinned range) over a short window.
    """

    def __init__(self, cfg: AccConfig, lost_ticks: int = 3, vision_bin_half_width: float = 5.0,
                 lead_window: int = 10, lead_min_samples: int = 5):
        self.cfg = cfg
        self.lost_ticks = lost_ticks
        self.bin_half = vision_bin_half_width
        self.lead_window = lead_window
        self.lead_min_samples = lead_min_samples
        self.reset()

    def reset(self) -> None:
        self.state = ControllerState()
        self.plan_decel: float | None = None
        self.plan_speed: float | None = None
        self._plan_key = None
        self._plan_origin = None
        self._lost = 0
        self.range_estimate: float | None = None
        self._range_key = None
        self.lead_estimate: float | None = None
        self._lead_key = None
        self._lead_hist: deque = deque(maxlen=self.lead_window)
        self._time = 0.0
        self._odometer = 0.0

    def _update_lead(self, cipv: FusionRecord | None, v: float) -> float | None:
        if cipv is None or cipv.distance is None:
            self._lead_hist.clear()
            self._lead_key = None
            self.lead_estimate = None
            return None
        if cipv.source != "V":
            self._lead_hist.clear()
            self._lead_key = cipv.key
            self.lead_estimate = lead_speed(cipv, v)
            return self.lead_estimate
        if cipv.key != self._lead_key:
            self._lead_hist.clear()
            self._lead_key = cipv.key
        p = cipv.closest_point
        rng = math.hypot(p.x, p.y) if p is not None else cipv.distance
        self._lead_hist.append((self._time, self._odometer + rng))
        if len(self._lead_hist) < self.lead_min_samples:
            self.lead_estimate = 0.0  # unknown yet: assume stationary
        else:
            t, x = np.array(self._lead_hist).T
            self.lead_estimate = max(0.0, float(np.polyfit(t - t[0], x, 1)[0]))
        return self.lead_estimate

    def _update_range(self, cipv: FusionRecord | None, v: float, v_lead: float | None,
                      dt: float) -> FusionRecord | None:
        if cipv is None or cipv.distance is None:
            self.range_estimate = None
            self._range_key = None
            return cipv
        meas = cipv.distance
        if cipv.source != "V" or cipv.key != self._range_key or self.range_estimate is None:
            est = meas
        else:
            est = self.range_estimate - (v - (v_lead or 0.0)) * dt
            est = min(max(est, meas - self.bin_half), meas + self.bin_half)
        self.range_estimate = max(est, 1e-6)
        self._range_key = cipv.key
        return replace(cipv, distance=self.range_estimate)

    def _update_plan(self, cipv: FusionRecord | None, v: float, v_lead: float | None,
                     dt: float) -> None:
        if cipv is None or cipv.distance is None:
            self._lost += 1
            if self._lost > self.lost_ticks:
                self.plan_decel = self.plan_speed = None
                self._plan_key = self._plan_origin = None
            return
        self._lost = 0
        cfg = self.cfg
        if cipv.key != self._plan_key or self.plan_decel is None:
            need = required_decel(v, v_lead, cipv.distance, cfg)
            need = min(max(need, cfg.plan_decel_min), cfg.plan_decel_max)
            # a new view of the lead may only tighten the plan
            if self.plan_decel is None or need > self.plan_decel:
                self.plan_decel = need
                # the ceiling aims at the end of the coming period, like the range
                self.plan_speed = max(v - need * dt, v_lead)
                self._plan_origin = (self._time, v, cipv.distance, len(self._lead_hist) > 0)
            self._plan_key = cipv.key
            return
        t0, v0, d0, provisional = self._plan_origin
        if provisional and len(self._lead_hist) >= self.lead_min_samples:
            # the lead speed is now known: redo the plan from where it started
            need = required_decel(v0, v_lead, d0, cfg)
            self.plan_decel = min(max(need, cfg.plan_decel_min), cfg.plan_decel_max)
            self._plan_origin = (t0, v0, d0, False)
        if self.plan_speed is not None:
            ramp = v0 - self.plan_decel * (self._time + dt - t0)
            if ramp <= v_lead and v <= v_lead + 0.1:
                self.plan_speed = None  # done; the distance law takes over
            else:
                self.plan_speed = max(ramp, v_lead)

    def _ahead(self, cipv: FusionRecord | None, v: float, v_lead: float | None,
               dt: float) -> FusionRecord | None:
        # the command holds for one period, so aim at the range expected then
        if cipv is None or cipv.distance is None:
            return cipv
        closing = max(v - (v_lead or 0.0), 0.0)
        return replace(cipv, distance=max(cipv.distance - closing * dt, 1e-6))

    def step(self, records: Iterable[FusionRecord], cipv: FusionRecord | None, v: float,
             dt: float) -> tuple[float, float]:
        records = list(records)
        v_lead = self._update_lead(cipv, v)
        cipv = self._update_range(cipv, v, v_lead, dt)
        self._update_plan(cipv, v, v_lead, dt)
        v_des = desired_velocity(records, self._ahead(cipv, v, v_lead, dt), v, self.cfg,
                                 self.plan_decel, v_lead)
        if self.plan_speed is not None and cipv is not None:
            v_des = min(v_des, self.plan_speed)
        self.state, pedal = pid_step(self.state, v_des, v, dt, self.cfg)
        self._time += dt
        self._odometer += v * dt
        return v_des, pedal


__all__ = [
    "AccConfig", "AccController", "ControllerState", "desired_distance", "desired_velocity",
    "lead_speed", "pid_step", "required_decel", "scaled_velocity", "standoff",
]
