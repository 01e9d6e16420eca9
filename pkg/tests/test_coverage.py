import math

import numpy as np
import pytest

from fwmission import fixtures
from fwmission.coverage import (
    SweepPlanError,
    heading_of_line,
    plan_sweep,
    sweep_to_path,
)
from fwmission.dubins import VehicleLimits, wrap_angle
from fwmission.fisher import CameraIntrinsics, make_viewpoint, seed_landmarks, visible_mask
from fwmission.planner import validate_path
from fwmission.terrain import DistanceBand

BAND = DistanceBand(50.0, 120.0)
LIMITS = VehicleLimits()


def _rect(w, h, x0, y0):
    return [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]


@pytest.fixture(scope="module")
def flat():
    # Room for a 390 x 295 ROI plus 300 m of margin for turnarounds.
    return fixtures.flat_dem(110, 100, 10.0)


def test_reference_rectangle_line_count(flat):
    roi = _rect(390.0, 295.0, 350.0, 350.0)
    plan = plan_sweep(roi, direction=0.0, spacing=45.0, dem=flat, band=BAND, limits=LIMITS)
    assert len(plan.lines) == math.floor(295.0 / 45.0) + 1 == 7


def test_flat_altitude_is_band_midpoint(flat):
    roi = _rect(390.0, 295.0, 350.0, 350.0)
    plan = plan_sweep(roi, 0.0, 45.0, flat, BAND, LIMITS)
    for knots in plan.altitude_knots:
        for _, alt in knots:
            assert alt == pytest.approx(85.0)


def test_boustrophedon_alternation(flat):
    roi = _rect(390.0, 295.0, 350.0, 350.0)
    plan = plan_sweep(roi, 0.0, 45.0, flat, BAND, LIMITS)
    for k in range(len(plan.lines) - 1):
        d = wrap_angle(heading_of_line(plan, k + 1) - heading_of_line(plan, k))
        assert abs(abs(d) - math.pi) < 1e-9


def test_segment_count_and_validity(flat):
    roi = _rect(390.0, 295.0, 350.0, 350.0)
    plan = plan_sweep(roi, 0.0, 45.0, flat, BAND, LIMITS)
    path = sweep_to_path(plan)
    assert len(plan.turnarounds) == 6
    assert len(path) >= 13
    report = validate_path(path, flat, BAND, LIMITS)
    assert report.ok, report.violations[:3]


def test_ridge_profile_slope_limited():
    # 40 m ridge: steeper than the climb limit locally, but the slope-limited
    # run-up still fits inside the 120 m ceiling over the flat approach.
    dem = fixtures.ridge_dem(120, 70, 10.0, ridge_height=40.0, ridge_half_width=120.0)
    roi = _rect(500.0, 200.0, 350.0, 250.0)
    plan = plan_sweep(roi, 0.0, 50.0, dem, BAND, LIMITS)
    for knots in plan.altitude_knots:
        ss = np.array([s for s, _ in knots])
        zz = np.array([z for _, z in knots])
        grads = np.abs(np.diff(zz) / np.diff(ss))
        assert np.all(grads <= math.tan(LIMITS.gamma_max) + 1e-9)
    report = validate_path(sweep_to_path(plan), dem, BAND, LIMITS)
    assert report.ok


def test_narrow_roi_single_center_line(flat):
    roi = _rect(300.0, 30.0, 400.0, 450.0)
    plan = plan_sweep(roi, 0.0, 45.0, flat, BAND, LIMITS)
    assert len(plan.lines) == 1
    (a, b) = plan.lines[0]
    assert a[1] == pytest.approx(465.0)  # vertical center of the ROI


def test_rotated_direction_lines_follow_heading(flat):
    roi = _rect(300.0, 250.0, 380.0, 380.0)
    direction = math.radians(30.0)
    plan = plan_sweep(roi, direction, 60.0, flat, BAND, LIMITS)
    h0 = heading_of_line(plan, 0)
    assert min(abs(wrap_angle(h0 - direction)), abs(wrap_angle(h0 - direction - math.pi))) < 1e-6


def test_sensor_footprint_covers_all_landmarks(flat):
    # Footprint width 2 * 85 * tan(30 deg) = 98 m > 45 m spacing.
    roi = _rect(390.0, 295.0, 350.0, 350.0)
    plan = plan_sweep(roi, 0.0, 45.0, flat, BAND, LIMITS)
    lmap = seed_landmarks(flat, roi, spacing=15.0)
    cam = CameraIntrinsics()
    seen = np.zeros(len(lmap), dtype=bool)
    for seg in sweep_to_path(plan):
        n = max(2, int(seg.arc_length // 20.0) + 1)
        for s in np.linspace(0, seg.arc_length, n):
            st = seg.state_at(s)
            vp = make_viewpoint((st.x, st.y, st.z), st.theta, st.gamma, cam,
                                mount_pitch_down=math.radians(90.0))
            seen |= visible_mask(vp, lmap.positions, lmap.normals, flat)
    assert seen.all()


def test_infeasible_rois_raise(flat):
    with pytest.raises(SweepPlanError):
        plan_sweep([(0, 0), (10, 0)], 0.0, 45.0, flat, BAND, LIMITS)
    with pytest.raises(ValueError):
        plan_sweep(_rect(100, 100, 400, 400), 0.0, -5.0, flat, BAND, LIMITS)
