import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwmission import fixtures
from fwmission.fisher import (
    CameraIntrinsics,
    FisherAccumulator,
    LandmarkMap,
    Viewpoint,
    coverage_fraction,
    landmarks_csv,
    make_viewpoint,
    map_quality,
    seed_landmarks,
    uncertainty_csv,
    view_information,
    view_utility,
    views_csv,
    visible,
    visible_mask,
)

CAM = CameraIntrinsics()
EPS = 1e-6
SIGMA = 0.002


def _rect(w, h, x0=0.0, y0=0.0):
    return [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]


def _nadir(x, y, z, t=0.0):
    return make_viewpoint((x, y, z), heading=0.0, gamma=0.0, intrinsics=CAM,
                          mount_pitch_down=math.radians(90.0), t=t)


def _single_landmark_map(x=0.0, y=0.0, z=0.0):
    return LandmarkMap(np.array([[x, y, z]]), np.array([[0.0, 0.0, 1.0]]),
                       prior_info=EPS, sigma_bearing=SIGMA)


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def test_seed_counts_on_reference_rectangle():
    dem = fixtures.flat_dem(60, 50, 10.0)
    lmap = seed_landmarks(dem, _rect(390.0, 295.0, 50.0, 60.0), spacing=15.0)
    assert len(lmap) == 27 * 20
    # Independent membership check: rectangle bounds are inclusive.
    for p in lmap.positions:
        assert 50.0 <= p[0] <= 440.0 and 60.0 <= p[1] <= 355.0


def test_seed_flat_normals_point_up():
    dem = fixtures.flat_dem(40, 40, 10.0)
    lmap = seed_landmarks(dem, _rect(200.0, 150.0, 50.0, 50.0), spacing=20.0)
    assert np.allclose(lmap.normals, [0.0, 0.0, 1.0])


def test_seed_centroid_fallback():
    # Triangle avoiding its own bbox corner: the only lattice point misses it.
    dem = fixtures.flat_dem(40, 40, 10.0)
    tri = [(104.0, 100.0), (108.0, 106.0), (100.0, 106.0)]
    lmap = seed_landmarks(dem, tri, spacing=50.0)
    assert len(lmap) == 1
    assert lmap.positions[0, :2] == pytest.approx([104.0, 104.0])


def test_seed_rejects_degenerate_polygon():
    dem = fixtures.flat_dem(40, 40, 10.0)
    with pytest.raises(ValueError):
        seed_landmarks(dem, [(0, 0), (10, 0)], spacing=5.0)


# ---------------------------------------------------------------------------
# Visibility
# ---------------------------------------------------------------------------


def test_nadir_view_sees_landmark_below():
    dem = fixtures.flat_dem(40, 40, 10.0)
    lmap = _single_landmark_map(200.0, 200.0, 0.0)
    vp = _nadir(200.0, 200.0, 100.0)
    assert visible_mask(vp, lmap.positions, lmap.normals, dem)[0]


def test_landmark_behind_camera_invisible():
    dem = fixtures.flat_dem(40, 40, 10.0)
    lmap = _single_landmark_map(100.0, 200.0, 0.0)
    vp = make_viewpoint((200.0, 200.0, 80.0), heading=0.0, gamma=0.0, intrinsics=CAM)
    assert not visible_mask(vp, lmap.positions, lmap.normals, dem)[0]


def _fine_ray_oracle(dem, origin, target, step=0.5):
    """Independent occlusion check with the same self-occlusion exclusion."""
    origin = np.asarray(origin, float)
    target = np.asarray(target, float)
    d = float(np.linalg.norm(target - origin))
    s = step
    while s < d - 5.0:  # same one-coarse-step exclusion near the landmark
        p = origin + (target - origin) * (s / d)
        fx = (p[0] - dem.origin_x) / dem.cellsize
        fy = (p[1] - dem.origin_y) / dem.cellsize
        if 0 <= fx <= dem.ncols - 1 and 0 <= fy <= dem.nrows - 1:
            ix = min(int(fx), dem.ncols - 2)
            iy = min(int(fy), dem.nrows - 2)
            tx, ty = fx - ix, fy - iy
            h = dem.heights
            hh = (h[iy, ix] * (1 - tx) * (1 - ty) + h[iy, ix + 1] * tx * (1 - ty)
                  + h[iy + 1, ix] * (1 - tx) * ty + h[iy + 1, ix + 1] * tx * ty)
            if p[2] < hh:
                return True
        s += step
    return False


def test_ridge_occlusion_matches_fine_oracle():
    from fwmission.fisher import _ray_blocked

    dem = fixtures.ridge_dem(60, 40, 10.0)  # crest at x = 295
    origin = np.array([80.0, 200.0, 90.0])
    # Clearly-free and clearly-blocked targets on both sides of the crest.
    for x, z_off in ((180.0, 2.0), (240.0, 2.0), (330.0, 2.0), (380.0, 2.0), (450.0, 2.0)):
        h = float(dem.heights[20, int(x // 10)])
        target = np.array([[x, 200.0, h + z_off]])
        dist = np.array([float(np.linalg.norm(target[0] - origin))])
        got = bool(_ray_blocked(dem, origin, target, dist)[0])
        want = _fine_ray_oracle(dem, origin, target[0])
        assert got == want, f"x={x}: coarse={got} fine={want}"


def test_far_side_of_ridge_blocked_while_in_range():
    dem = fixtures.ridge_dem(60, 40, 10.0)
    cam = CameraIntrinsics(max_range=600.0)
    vp = Viewpoint((80.0, 200.0, 90.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), cam)
    lm_pos = np.array([[430.0, 200.0, 0.0]])
    lm_n = np.array([[0.0, 0.0, 1.0]])
    assert np.linalg.norm(lm_pos[0] - np.array(vp.position)) < cam.max_range
    assert not visible_mask(vp, lm_pos, lm_n, dem)[0]
    assert _fine_ray_oracle(dem, vp.position, lm_pos[0])


def test_incidence_limit_rejects_grazing_views():
    dem = fixtures.flat_dem(60, 40, 10.0)
    lmap = _single_landmark_map(400.0, 200.0, 0.0)
    vp = Viewpoint((160.0, 200.0, 12.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                   CameraIntrinsics(max_range=400.0))
    # Grazing angle: incidence from vertical ~ 87 degrees > 70 limit.
    assert not visible_mask(vp, lmap.positions, lmap.normals, dem)[0]


# ---------------------------------------------------------------------------
# Information model
# ---------------------------------------------------------------------------


def test_information_inverse_square_scaling():
    lmap = _single_landmark_map()
    lm = lmap.landmarks[0]
    near = _nadir(0.0, 0.0, 50.0)
    far = _nadir(0.0, 0.0, 100.0)
    i_near = view_information(near, lm, SIGMA)
    i_far = view_information(far, lm, SIGMA)
    assert np.allclose(i_far, i_near / 4.0)


def test_single_view_information_is_rank_two_projector():
    lm = _single_landmark_map().landmarks[0]
    vp = _nadir(0.0, 0.0, 100.0)
    info = view_information(vp, lm, SIGMA)
    w = np.linalg.eigvalsh(info)
    c = 1.0 / (SIGMA**2 * 100.0**2)
    assert w[0] == pytest.approx(0.0, abs=1e-9 * c)
    assert w[1] == pytest.approx(c, rel=1e-9)
    assert w[2] == pytest.approx(c, rel=1e-9)


def test_two_orthogonal_views_eigenvalues():
    lm = _single_landmark_map().landmarks[0]
    vp1 = _nadir(0.0, 0.0, 100.0)  # bearing -z
    vp2 = Viewpoint((100.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 0.0, 1.0), CAM)
    total = view_information(vp1, lm, SIGMA) + view_information(vp2, lm, SIGMA)
    w = np.sort(np.linalg.eigvalsh(total))
    c = 1.0 / (SIGMA**2 * 1e4)
    assert np.allclose(w, [c, c, 2 * c], rtol=1e-9)


def test_view_information_rotation_invariant():
    rng = np.random.default_rng(5)
    from scipy.spatial.transform import Rotation

    for _ in range(10):
        rot = Rotation.random(random_state=rng).as_matrix()
        p_lm = rng.uniform(-50, 50, 3)
        p_vp = p_lm + rng.uniform(30, 120) * _unit(rng.normal(size=3))
        lm = type("L", (), {"position": p_lm, "normal": np.array([0, 0, 1.0])})
        vp = _vp_at(p_vp, p_lm)
        info = view_information(vp, lm, SIGMA)
        lm_r = type("L", (), {"position": rot @ p_lm, "normal": rot @ np.array([0, 0, 1.0])})
        vp_r = _vp_at(rot @ p_vp, rot @ p_lm)
        info_r = view_information(vp_r, lm_r, SIGMA)
        assert np.allclose(info_r, rot @ info @ rot.T, atol=1e-9 * np.abs(info).max())


def _unit(v):
    return v / np.linalg.norm(v)


def _vp_at(pos, look_at):
    b = _unit(np.asarray(look_at) - np.asarray(pos))
    u = np.array([0.0, 0.0, 1.0]) - b * b[2]
    u = _unit(u) if np.linalg.norm(u) > 1e-9 else np.array([1.0, 0.0, 0.0])
    return Viewpoint(tuple(pos), tuple(b), tuple(u), CAM)


# ---------------------------------------------------------------------------
# Map quality and utility
# ---------------------------------------------------------------------------


def test_quality_prior_only():
    dem = fixtures.flat_dem(40, 40, 10.0)
    lmap = seed_landmarks(dem, _rect(150, 150, 100, 100), spacing=50.0)
    assert map_quality(lmap, [], dem) == pytest.approx(3.0 / EPS)


def test_quality_two_orthogonal_views_closed_form():
    dem = fixtures.flat_dem(60, 40, 10.0)
    lmap = _single_landmark_map(300.0, 200.0, 0.0)
    # A horizontal view of a flat-ground landmark sits at exactly 90 degrees
    # incidence, so the closed-form check relaxes the incidence gate.
    cam = CameraIntrinsics(incidence_limit=math.radians(91.0))
    vp1 = Viewpoint((300.0, 200.0, 100.0), (0.0, 0.0, -1.0), (1.0, 0.0, 0.0), cam)
    vp2 = Viewpoint((400.0, 200.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 0.0, 1.0), cam)
    c = 1.0 / (SIGMA**2 * 1e4)
    want = 2.0 / (EPS + c) + 1.0 / (EPS + 2 * c)
    got = map_quality(lmap, [vp1, vp2], dem)
    assert got == pytest.approx(want, rel=1e-9)


def test_quality_never_increases_with_views():
    dem = fixtures.flat_dem(60, 40, 10.0)
    lmap = seed_landmarks(dem, _rect(200, 150, 150, 100), spacing=40.0)
    rng = np.random.default_rng(0)
    views = []
    q_prev = map_quality(lmap, views, dem)
    for i in range(6):
        views.append(_nadir(rng.uniform(150, 400), rng.uniform(100, 250), 90.0, t=i))
        q = map_quality(lmap, views, dem)
        assert q <= q_prev + 1e-12
        q_prev = q


def test_utility_identities():
    dem = fixtures.flat_dem(60, 40, 10.0)
    lmap = seed_landmarks(dem, _rect(200, 150, 150, 100), spacing=40.0)
    v = [_nadir(250.0, 200.0, 90.0, t=0), _nadir(300.0, 180.0, 90.0, t=1)]
    assert view_utility(lmap, v, [], dem) == 0.0
    assert view_utility(lmap, v, [v[0]], dem) == pytest.approx(0.0, abs=1e-15)


def test_utility_equals_recomputed_difference():
    dem = fixtures.flat_dem(60, 40, 10.0)
    lmap = seed_landmarks(dem, _rect(220, 160, 140, 90), spacing=35.0)
    rng = np.random.default_rng(9)
    v = [_nadir(rng.uniform(150, 350), rng.uniform(100, 240), 95.0, t=i) for i in range(3)]
    vp = [_nadir(rng.uniform(150, 350), rng.uniform(100, 240), 95.0, t=10 + i) for i in range(2)]
    got = view_utility(lmap, v, vp, dem)
    want = map_quality(lmap, v, dem) - map_quality(lmap, list(v) + list(vp), dem)
    assert got == pytest.approx(want, rel=1e-9)
    assert got >= 0.0


@given(
    n_views=st.integers(0, 4),
    n_new=st.integers(0, 3),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=40, deadline=None)
def test_monotonicity_property(n_views, n_new, seed):
    dem = fixtures.flat_dem(40, 30, 10.0)
    lmap = seed_landmarks(dem, _rect(150, 120, 100, 80), spacing=60.0)
    rng = np.random.default_rng(seed)
    mk = lambda i: _nadir(rng.uniform(100, 250), rng.uniform(80, 200), rng.uniform(60, 115), t=i)
    v = [mk(i) for i in range(n_views)]
    vp = [mk(100 + i) for i in range(n_new)]
    u = view_utility(lmap, v, vp, dem)
    assert u >= -1e-12
    acc = FisherAccumulator(lmap)
    acc.add_views(v + vp, dem)
    # eigvalsh noise scales with the matrix magnitude, not with the prior
    scale = np.abs(acc.info).max()
    assert np.all(np.linalg.eigvalsh(acc.info).min(axis=1) >= EPS - 1e-12 * max(scale, 1.0))


def test_coverage_fraction_counts():
    dem = fixtures.flat_dem(60, 40, 10.0)
    lmap = seed_landmarks(dem, _rect(100, 100, 200, 150), spacing=50.0)
    assert coverage_fraction(lmap, [], dem) == 0.0
    hub = [_nadir(250.0, 200.0, 110.0, t=0), _nadir(250.0, 200.0, 100.0, t=1)]
    # Wide rectangle 100x100 at 100-110 m altitude with 60x40 FOV: every
    # landmark within the overlapping footprint of both views.
    cov = coverage_fraction(lmap, hub, dem, k=2)
    frac_expected = _expected_coverage(lmap, hub, dem)
    assert cov == pytest.approx(frac_expected)


def _expected_coverage(lmap, views, dem, k=2):
    counts = np.zeros(len(lmap), dtype=int)
    for vp in views:
        for i in range(len(lmap)):
            if visible(vp, lmap.landmarks[i], dem):
                counts[i] += 1
    return float((counts >= k).mean())


def test_csv_outputs_shape():
    dem = fixtures.flat_dem(40, 30, 10.0)
    lmap = seed_landmarks(dem, _rect(100, 80, 100, 80), spacing=40.0)
    views = [_nadir(150.0, 120.0, 90.0, t=1.5)]
    acc = FisherAccumulator(lmap)
    acc.add_views(views, dem)
    assert landmarks_csv(lmap).splitlines()[0] == "id,x,y,z,nx,ny,nz"
    assert len(landmarks_csv(lmap).splitlines()) == len(lmap) + 1
    assert views_csv(views).splitlines()[0] == "t,x,y,z,qw,qx,qy,qz"
    assert uncertainty_csv(acc).splitlines()[0] == "landmark_id,crb_trace,num_views"
