import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvfusion.control import (AccConfig, AccController, ControllerState, desired_distance,
                              desired_velocity, lead_speed, pid_step, required_decel,
                              scaled_velocity, standoff)
from lvfusion.fusion import FusionRecord
from lvfusion.geometry import Point3

CFG = AccConfig()


def lead(distance, rel_vx=None, source="VL"):
    ids = dict(vision_id=1, lidar_id=1) if source == "VL" else dict(vision_id=1)
    vel = None if rel_vx is None else (rel_vx, 0.0, 0.0)
    return FusionRecord(source, None, distance=distance, velocity=vel, type_id="car", **ids)


# --- speed law ---------------------------------------------------------------------------

def test_ratio_law_example():
    # [DERIVED] 20 * (30 - 10) / (40 - 10)
    assert scaled_velocity(20, 30, 10, 40) == pytest.approx(13.333, abs=1e-3)


def test_zero_at_minimum_distance():
    assert scaled_velocity(20, 10, 10, 40) == 0.0
    assert desired_velocity([], lead(10.0, -20.0), 20.0, CFG) == 0.0


def test_degenerate_span():
    assert scaled_velocity(20, 5, 10, 10) == 0.0
    assert scaled_velocity(20, 15, 10, 10) == 20.0


def test_standoff_and_desired_distance():
    assert standoff(10.0, CFG) == pytest.approx(28.0)
    # [DERIVED] 10 + (27.78^2) / (2 * 7.717)
    assert desired_distance(27.78, 0.0, 7.717, CFG) == pytest.approx(60.0, abs=0.01)


def test_required_decel_examples():
    # [PAPER] CCRs with a 60 m detection range: 7.72 m/s^2
    assert required_decel(27.78, 0.0, 60.0, CFG) == pytest.approx(7.717, abs=0.01)
    assert required_decel(10.0, 10.0, 50.0, CFG) == 0.0
    assert required_decel(20.0, 0.0, 5.0, CFG) == math.inf


def test_lead_speed_from_relative_velocity():
    assert lead_speed(lead(30.0, -5.0), 20.0) == 15.0
    assert lead_speed(lead(30.0, -25.0), 20.0) == 0.0
    assert lead_speed(lead(30.0, source="V"), 20.0) == 0.0


def test_continuity_at_safety_distance():
    v, plan = 20.0, 4.0
    d_des = desired_distance(v, 0.0, plan, CFG)
    below = desired_velocity([], lead(d_des - 1e-6, -v), v, CFG, plan)
    above = desired_velocity([], lead(d_des + 1e-6, -v), v, CFG, plan)
    assert below == pytest.approx(v, abs=1e-4) and above == pytest.approx(v, abs=1e-4)


def test_no_cipv_cruises_at_set_speed():
    assert desired_velocity([], None, 15.0, CFG) == CFG.v_set


def test_ttc_branch_scales_speed():
    rec = FusionRecord("L", None, distance=15.0, velocity=(-10.0, 0, 0), ttc=1.5, lidar_id=1)
    assert desired_velocity([rec], None, 20.0, CFG) == pytest.approx(10.0)


def test_ttc_above_threshold_ignored():
    rec = FusionRecord("L", None, distance=50.0, velocity=(-10.0, 0, 0), ttc=5.0, lidar_id=1)
    assert desired_velocity([rec], None, 20.0, CFG) == CFG.v_set


def test_negative_speed_rejected():
    with pytest.raises(ValueError):
        desired_velocity([], None, -1.0, CFG)


@settings(max_examples=500)
@given(st.floats(0, 40), st.floats(0.5, 150), st.floats(0.5, 150), st.floats(-40, 10),
       st.floats(1, 9))
def test_speed_law_monotone_in_distance(v, d1, d2, rel, plan):
    d1, d2 = sorted((d1, d2))
    a = desired_velocity([], lead(d1, rel), v, CFG, plan)
    b = desired_velocity([], lead(d2, rel), v, CFG, plan)
    assert a <= b + 1e-9


@given(st.floats(0, 40), st.floats(0.1, 200), st.floats(-40, 10), st.floats(1, 9))
def test_speed_law_bounded(v, d, rel, plan):
    out = desired_velocity([], lead(d, rel), v, CFG, plan)
    assert 0.0 <= out <= CFG.v_set


# --- pid ---------------------------------------------------------------------------------------

def test_pid_proportional_example():
    cfg = AccConfig(kp=0.5, ki=0.0, kd=0.0)
    state, pedal = pid_step(ControllerState(), 12.0, 10.0, 0.1, cfg)
    assert pedal == pytest.approx(1.0)
    state, pedal = pid_step(ControllerState(), 10.0, 12.0, 0.1, cfg)
    assert pedal == pytest.approx(-1.0)
    _, pedal = pid_step(ControllerState(), 10.0, 10.5, 0.1, cfg)
    assert pedal == pytest.approx(-0.25)


def test_pid_integral_and_derivative():
    cfg = AccConfig(kp=0.0, ki=1.0, kd=0.1)
    s, p = pid_step(ControllerState(), 1.0, 0.0, 0.1, cfg)
    assert (s.integrator, p) == pytest.approx((0.1, 0.1))  # no derivative on the first step
    s, p = pid_step(s, 1.5, 0.0, 0.1, cfg)
    # [DERIVED] integ 0.25, deriv (1.5 - 1.0) / 0.1 = 5
    assert p == pytest.approx(0.25 + 0.5)


def test_pid_rejects_bad_dt():
    with pytest.raises(ValueError):
        pid_step(ControllerState(), 1.0, 0.0, 0.0, CFG)


@given(st.floats(-50, 50), st.floats(0, 50), st.floats(-10, 10))
def test_pedal_bounded(v_des, v, integ):
    _, pedal = pid_step(ControllerState(integrator=integ), v_des, v, 0.1, CFG)
    assert -1.0 <= pedal <= 1.0


def test_anti_windup_after_long_saturation():
    state = ControllerState()
    for _ in range(600):  # 60 s stuck at 0 m/s asking for 30
        state, pedal = pid_step(state, 30.0, 0.0, 0.1, CFG)
        assert abs(state.integrator) <= CFG.integrator_clamp
    assert pedal == 1.0
    # overshoot of 0.5 m/s must brake on the very next tick
    state, pedal = pid_step(state, 30.0, 30.5, 0.1, CFG)
    assert pedal < 0


def test_config_from_keys():
    cfg = AccConfig.from_config({"d_min_m": 8, "headway_s": 2, "ttc_threshold_s": 2.5,
                                 "v_set_mps": 25, "kp": 1, "ki": 0, "kd": 0,
                                 "integrator_clamp": 3})
    assert (cfg.d_min, cfg.headway, cfg.ttc_threshold, cfg.v_set) == (8, 2, 2.5, 25)
    with pytest.raises(ValueError):
        AccConfig.from_config({"bogus": 1})
    with pytest.raises(ValueError):
        AccConfig(d_min=0)


# --- controller -----------------------------------------------------------------------------

def test_plan_latched_on_acquisition_and_brakes():
    ctl = AccController(CFG)
    v_des, pedal = ctl.step([], lead(60.0, -27.78), 27.78, 0.1)
    assert ctl.plan_decel == pytest.approx(required_decel(27.78, 0.0, 60.0, CFG))
    assert v_des < 27.78 and pedal < 0


def test_plan_clamped():
    ctl = AccController(CFG)
    ctl.step([], lead(200.0, -5.0), 5.0, 0.1)
    assert ctl.plan_decel == CFG.plan_decel_min
    ctl.reset()
    ctl.step([], lead(12.0, -30.0), 30.0, 0.1)
    assert ctl.plan_decel == CFG.plan_decel_max


def test_plan_only_tightens_on_new_view():
    ctl = AccController(CFG)
    ctl.step([], lead(60.0, -20.0), 20.0, 0.1)
    first = ctl.plan_decel
    gentler = FusionRecord("VL", None, distance=80.0, velocity=(-20.0, 0, 0), vision_id=2, lidar_id=2)
    ctl.step([], gentler, 20.0, 0.1)
    assert ctl.plan_decel == first


def test_plan_cleared_after_lost_ticks():
    ctl = AccController(CFG, lost_ticks=3)
    ctl.step([], lead(60.0, -20.0), 20.0, 0.1)
    for _ in range(3):
        ctl.step([], None, 20.0, 0.1)
    assert ctl.plan_decel is not None
    ctl.step([], None, 20.0, 0.1)
    assert ctl.plan_decel is None


def v_lead_at(raw_range, binned=40.0):
    return FusionRecord("V", None, closest_point=Point3(raw_range, 0.0, 0.0), distance=binned,
                        type_id="car", vision_id=1)


def test_vision_range_is_dead_reckoned_within_bin():
    # stationary lead: the raw range shrinks 1 m per tick, the bin stays at 40
    ctl = AccController(CFG)
    ctl.step([], v_lead_at(40.0), 10.0, 0.1)
    assert ctl.range_estimate == 40.0
    ctl.step([], v_lead_at(39.0), 10.0, 0.1)
    assert ctl.range_estimate == pytest.approx(39.0)
    for k in range(10):
        ctl.step([], v_lead_at(38.0 - k), 10.0, 0.1)
    assert ctl.range_estimate == pytest.approx(35.0)  # clamped to the bin edge


@pytest.mark.parametrize("lead_v", [0.0, 5.56, 12.0])
def test_vision_lead_speed_from_position_slope(lead_v):
    ctl = AccController(CFG)
    v, gap = 13.89, 55.0
    for _ in range(8):
        ctl.step([], v_lead_at(gap, 50.0), v, 0.1)
        gap += (lead_v - v) * 0.1
    assert ctl.lead_estimate == pytest.approx(lead_v, abs=1e-6)


def test_plan_redone_once_lead_speed_known():
    # CCRm-like: the first plan assumes a stationary lead, then is corrected
    ctl = AccController(CFG)
    v, gap, dt = 13.89, 60.0, 0.1
    ctl.step([], v_lead_at(gap, 60.0), v, dt)
    assert ctl.plan_decel == pytest.approx(required_decel(v, 0.0, 60.0, CFG))
    for _ in range(6):
        gap += (5.56 - v) * dt
        ctl.step([], v_lead_at(gap, 60.0), v, dt)
    assert ctl.plan_decel == pytest.approx(required_decel(13.89, 5.56, 60.0, CFG), rel=1e-6)


def test_speed_ceiling_ramps_at_plan_rate():
    ctl = AccController(CFG)
    ctl.step([], lead(60.0, -27.78), 27.78, 0.1)
    start = ctl.plan_speed
    for _ in range(5):
        ctl.step([], lead(60.0, -27.78), 27.78, 0.1)
    assert start - ctl.plan_speed == pytest.approx(5 * 0.1 * ctl.plan_decel)


def test_lidar_range_used_as_measured():
    ctl = AccController(CFG)
    ctl.step([], lead(40.0, -10.0), 10.0, 0.1)
    ctl.step([], lead(40.0, -10.0), 10.0, 0.1)
    assert ctl.range_estimate == 40.0


def test_closed_loop_stops_behind_stationary_lead():
    # point-mass loop: brake authority 9 m/s^2, accel 2 m/s^2
    ctl = AccController(CFG)
    v, gap, dt = 27.78, 60.0, 0.1
    for _ in range(200):
        _, pedal = ctl.step([], lead(gap, -v), v, dt)
        a = 9.0 * pedal if pedal < 0 else 2.0 * pedal
        v = max(v + a * dt, 0.0)
        gap -= v * dt
    assert v == pytest.approx(0.0, abs=0.05)
    assert 9.0 <= gap <= 11.0
