import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvfusion.geometry import CameraModel, ImageBox, project_cuboid
from lvfusion.vision import (Detection, NoiseParams, RegressionModel, TargetPose, TrackerState,
                             bin_distance, calibrate_regression, estimate_distance, fit_regression,
                             synth_detect, track_step)

CAM = CameraModel.from_fov()


def det(x1, y1, x2, y2, cls="car"):
    return Detection(cls, 0.9, ImageBox(x1, y1, x2, y2))


# --- regression ---------------------------------------------------------------------

@pytest.mark.parametrize("h, d", [(100, 11.92), (30, 44.44)])
def test_published_regression_examples(h, d):
    # [PAPER] d = 1829.1 * h^-1.093
    assert estimate_distance(h) == pytest.approx(d, abs=0.01)


@given(st.floats(1, 500))
def test_doubling_height_scales_distance(h):
    ratio = estimate_distance(2 * h) / estimate_distance(h)
    assert ratio == pytest.approx(2 ** -1.093)


def test_regression_is_monotone_decreasing():
    d = [estimate_distance(h) for h in range(5, 400, 5)]
    assert all(a > b for a, b in zip(d, d[1:]))


def test_regression_rejects_bad_input():
    with pytest.raises(ValueError):
        estimate_distance(0)
    with pytest.raises(ValueError):
        RegressionModel(a=1.0, b=0.5)
    with pytest.raises(ValueError):
        RegressionModel(bin_centers=(20.0, 10.0))


def test_fit_regression_recovers_power_law():
    h = np.linspace(10, 300, 40)
    model = fit_regression(h, 500.0 * h ** -1.2)
    assert (model.a, model.b) == pytest.approx((500.0, -1.2))


def test_calibrated_model_inverts_synthetic_camera():
    model = calibrate_regression(CAM)
    for d in (10.0, 25.0, 45.0):
        box = project_cuboid(TargetPose(d + 2.25, 0.0).corners(0.5), CAM)
        assert estimate_distance(box.height, model) == pytest.approx(d, rel=0.02)


# --- binning ----------------------------------------------------------------------------

@pytest.mark.parametrize("d, expected", [(44.44, 40.0), (61.0, None), (10.0, 10.0),
                                         (57.0, 60.0), (60.0, 60.0), (3.0, 3.0), (5.0, 10.0)])
def test_bin_examples(d, expected):
    assert bin_distance(d) == expected


def test_bin_ties_go_to_lower_center():
    assert bin_distance(25.0) == 20.0
    assert bin_distance(55.0) == 50.0


@given(st.floats(5, 60))
def test_binned_within_half_bin(d):
    assert abs(bin_distance(d) - d) <= 5.0 + 1e-9


# --- queue tracker ---------------------------------------------------------------------

def test_first_detection_gets_id_one():
    state, out = track_step(TrackerState(), [det(600, 300, 680, 380)])
    assert [t.id for t in out] == [1]
    assert out[0].distance == bin_distance(estimate_distance(80))


def test_shifted_box_keeps_id():
    state, _ = track_step(TrackerState(), [det(600, 300, 680, 380)])
    state, out = track_step(state, [det(603, 300, 683, 380)])
    assert [t.id for t in out] == [1] and out[0].last_seen == 1


def test_distant_box_gets_new_id():
    state, _ = track_step(TrackerState(), [det(600, 300, 680, 380)])
    state, out = track_step(state, [det(900, 300, 980, 380)])
    fresh = [t for t in out if t.last_seen == 1]
    assert [t.id for t in fresh] == [2]


def test_dropped_detection_is_carried_then_expires():
    state, _ = track_step(TrackerState(depth=3), [det(600, 300, 680, 380)])
    for k in range(2):
        state, out = track_step(state, [])
        assert [(t.id, t.last_seen) for t in out] == [(1, 0)]
    state, out = track_step(state, [])
    assert out == []


def test_reacquired_after_gap_keeps_id():
    state, _ = track_step(TrackerState(), [det(600, 300, 680, 380)])
    for _ in range(4):
        state, _ = track_step(state, [])
    state, out = track_step(state, [det(605, 301, 685, 381)])
    assert [t.id for t in out] == [1]


def test_candidate_claimed_once_per_frame():
    state, _ = track_step(TrackerState(), [det(600, 300, 680, 380)])
    state, out = track_step(state, [det(601, 300, 681, 380), det(602, 300, 682, 380)])
    assert sorted(t.id for t in out) == [1, 2]


def test_non_car_has_no_distance():
    _, out = track_step(TrackerState(), [det(600, 300, 680, 380, cls="pedestrian")])
    assert out[0].distance is None and out[0].raw_distance is None


def test_far_car_distance_discarded():
    # [DERIVED] a 10 px box gives ~149 m, beyond the last bin
    _, out = track_step(TrackerState(), [det(600, 300, 610, 310)])
    assert out[0].distance is None and out[0].raw_distance > 60


# --- synthetic detector ---------------------------------------------------------------

def test_zero_noise_matches_projection():
    tgt = TargetPose(20.0, 1.0, 0.1)
    (d,) = synth_detect([tgt], CAM, NoiseParams(pixel_sigma=0.0))
    assert d.box == project_cuboid(tgt.corners(0.5), CAM)


def test_full_flicker_drops_everything():
    out = synth_detect([TargetPose(20.0, 0.0)] * 5, CAM, NoiseParams(flicker_prob=1.0),
                       np.random.default_rng(0))
    assert out == []


def test_range_limit_and_behind_camera():
    noise = NoiseParams(pixel_sigma=0.0, max_vision_range_m=60.0)
    assert synth_detect([TargetPose(70.0, 0.0)], CAM, noise) == []
    assert synth_detect([TargetPose(-20.0, 0.0)], CAM, noise) == []


def test_confidence_floor_filters():
    assert synth_detect([TargetPose(20, 0)], CAM, NoiseParams(confidence_floor=0.95),
                        np.random.default_rng(0)) == []


def test_noise_is_seeded():
    a = synth_detect([TargetPose(20, 0)], CAM, rng=np.random.default_rng(3))
    b = synth_detect([TargetPose(20, 0)], CAM, rng=np.random.default_rng(3))
    assert a == b


def test_noise_params_from_config():
    p = NoiseParams.from_config({"pixel_sigma": 1.5, "flicker_prob": 0.2})
    assert (p.pixel_sigma, p.flicker_prob, p.max_vision_range_m) == (1.5, 0.2, 60.0)


def test_nearest_range_of_head_on_target():
    assert TargetPose(22.25, 0.0).nearest_range() == pytest.approx(20.0)
    assert TargetPose(20.0, 3.0).nearest_range() == pytest.approx(math.hypot(17.75, 2.1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_flicker_keeps_single_id(seed):
    rng = np.random.default_rng(seed)
    state = TrackerState()
    ids = set()
    for k in range(60):
        dets = synth_detect([TargetPose(30.0 - 0.1 * k, 0.0)], CAM,
                            NoiseParams(flicker_prob=0.3), rng)
        state, out = track_step(state, dets)
        ids.update(t.id for t in out)
    assert ids <= {1}
