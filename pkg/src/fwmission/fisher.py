"""Landmark map uncertainty: Fisher information, CRB map quality, view utility.

Each surface landmark carries a 3x3 Fisher information matrix accumulated
from bearing-only camera views: a view at range d adds
(1 / (sigma_bearing^2 d^2)) * (I - b b^T) with b the unit bearing, which is
rank 2 (no information along the ray). Map quality is the mean trace of the
inverse information (the Cramer-Rao bound on landmark position), so lower is
better, and the utility of new views is the resulting drop in that mean.

The FisherAccumulator keeps per-landmark running sums so missions and tree
search never rebuild information from scratch; all aggregation is
order-independent sums followed by a single inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import shapely
from shapely.geometry import Point, Polygon

from .terrain import DemGrid, terrain_height_batch

OCCLUSION_STEP = 5.0  # m along the viewing ray


@dataclass(frozen=True)
class CameraIntrinsics:
    hfov: float = math.radians(60.0)
    vfov: float = math.radians(40.0)
    max_range: float = 250.0
    incidence_limit: float = math.radians(70.0)

    def __post_init__(self):
        if not (0 < self.hfov < math.pi and 0 < self.vfov < math.pi):
            raise ValueError("FOV must be in (0, pi)")


@dataclass(frozen=True)
class Viewpoint:
    position: tuple[float, float, float]
    boresight: tuple[float, float, float]
    up: tuple[float, float, float]
    intrinsics: CameraIntrinsics
    t: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.boresight)
        u = np.asarray(self.up)
        if abs(np.dot(b, u)) > 1e-6:
            raise ValueError("boresight and up must be orthogonal")

    @property
    def rotation(self) -> np.ndarray:
        """World-from-camera rotation; columns are (right, up, boresight)."""
        b = np.asarray(self.boresight)
        u = np.asarray(self.up)
        r = np.cross(u, b)
        return np.column_stack([r, u, b])


@dataclass
class Landmark:
    position: np.ndarray
    normal: np.ndarray
    info: np.ndarray  # 3x3 symmetric positive definite


@dataclass
class LandmarkMap:
    """Surface landmark lattice plus the measurement-noise model."""

    positions: np.ndarray  # (N, 3)
    normals: np.ndarray    # (N, 3)
    prior_info: float = 1e-6
    sigma_bearing: float = 0.002

    def __post_init__(self):
        if self.prior_info <= 0:
            raise ValueError("prior information must be positive")
        self.positions = np.asarray(self.positions, dtype=float)
        self.normals = np.asarray(self.normals, dtype=float)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def landmarks(self) -> list[Landmark]:
        eye = np.eye(3) * self.prior_info
        return [
            Landmark(self.positions[i].copy(), self.normals[i].copy(), eye.copy())
            for i in range(len(self))
        ]


def make_viewpoint(
    position,
    heading: float,
    gamma: float,
    intrinsics: CameraIntrinsics,
    mount_pitch_down: float = math.radians(30.0),
    t: float = 0.0,
) -> Viewpoint:
    """Camera pose for a body-fixed mount pitched below the flight direction."""
    pitch = gamma - mount_pitch_down
    b = np.array(
        [math.cos(pitch) * math.cos(heading), math.cos(pitch) * math.sin(heading), math.sin(pitch)]
    )
    world_up = np.array([0.0, 0.0, 1.0])
    u = world_up - np.dot(world_up, b) * b
    nu = np.linalg.norm(u)
    if nu < 1e-9:  # nadir: use the horizontal flight direction as camera up
        u = np.array([math.cos(heading), math.sin(heading), 0.0])
    else:
        u = u / nu
    return Viewpoint(tuple(np.asarray(position, float)), tuple(b), tuple(u), intrinsics, t=t)


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def seed_landmarks(
    dem: DemGrid,
    roi: Sequence[tuple[float, float]],
    spacing: float = 15.0,
    prior_info: float = 1e-6,
    sigma_bearing: float = 0.002,
) -> LandmarkMap:
    """Square lattice of surface landmarks inside the ROI polygon.

    The lattice anchors at the polygon's bounding-box corner with boundary
    points included; a polygon smaller than the spacing still yields its
    centroid so the map is never empty.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    poly = Polygon(roi)
    if not poly.is_valid or poly.area <= 0 or len(roi) < 3:
        raise ValueError("ROI must be a simple polygon with nonzero area")
    x0, y0, x1, y1 = poly.bounds
    xs = x0 + spacing * np.arange(int(math.floor((x1 - x0) / spacing)) + 1)
    ys = y0 + spacing * np.arange(int(math.floor((y1 - y0) / spacing)) + 1)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    keep = shapely.covers(poly, shapely.points(pts)).astype(bool)
    pts = pts[keep]
    if pts.shape[0] == 0:
        c = poly.centroid
        pts = np.array([[c.x, c.y]])
    z, ok = terrain_height_batch(dem, pts)
    if not np.all(ok):
        raise ValueError("ROI extends outside the DEM hull")
    normals = _surface_normals(dem, pts)
    positions = np.column_stack([pts, z])
    return LandmarkMap(positions, normals, prior_info=prior_info, sigma_bearing=sigma_bearing)


def _surface_normals(dem: DemGrid, xy: np.ndarray) -> np.ndarray:
    """Upward unit normals from central-difference height gradients."""
    if "grad" not in dem._cache:
        gy, gx = np.gradient(dem.heights, dem.cellsize)
        dem._cache["grad"] = (gx, gy)
    gx, gy = dem._cache["grad"]
    fx = np.clip((xy[:, 0] - dem.origin_x) / dem.cellsize, 0, dem.ncols - 1)
    fy = np.clip((xy[:, 1] - dem.origin_y) / dem.cellsize, 0, dem.nrows - 1)
    ix = np.clip(fx.astype(int), 0, dem.ncols - 2)
    iy = np.clip(fy.astype(int), 0, dem.nrows - 2)
    tx = fx - ix
    ty = fy - iy
    def bil(g):
        return (g[iy, ix] * (1 - tx) * (1 - ty) + g[iy, ix + 1] * tx * (1 - ty)
                + g[iy + 1, ix] * (1 - tx) * ty + g[iy + 1, ix + 1] * tx * ty)
    n = np.column_stack([-bil(gx), -bil(gy), np.ones(len(xy))])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Visibility
# ---------------------------------------------------------------------------


def camera_rotations(headings: np.ndarray, gammas: np.ndarray, mount_pitch_down: float) -> np.ndarray:
    """World-from-camera rotations [V, 3, 3] for body-fixed mounts.

    Columns are (right, up, boresight); the nadir-degenerate up falls back to
    the horizontal flight direction, matching make_viewpoint.
    """
    pitch = np.asarray(gammas, float) - mount_pitch_down
    ct, st_ = np.cos(headings), np.sin(headings)
    cp, sp = np.cos(pitch), np.sin(pitch)
    b = np.stack([cp * ct, cp * st_, sp], axis=1)
    u = np.zeros_like(b)
    u[:, 2] = 1.0
    u -= b * b[:, 2:3]
    nu = np.linalg.norm(u, axis=1)
    degen = nu < 1e-9
    if degen.any():
        u[degen] = np.stack([ct[degen], st_[degen], np.zeros(degen.sum())], axis=1)
        nu = np.linalg.norm(u, axis=1)
    u /= nu[:, None]
    r = np.cross(u, b)
    return np.stack([r, u, b], axis=2)


def batch_visibility(
    pos: np.ndarray,
    rot: np.ndarray,
    intr: CameraIntrinsics,
    lm_pos: np.ndarray,
    lm_norm: np.ndarray,
    dem: DemGrid,
) -> np.ndarray:
    """Visibility matrix [V, N] for V camera poses against N landmarks."""
    delta = lm_pos[None, :, :] - pos[:, None, :]  # (V, N, 3)
    d = np.sqrt(np.einsum("vnj,vnj->vn", delta, delta))
    ok = (d > 1e-6) & (d <= intr.max_range)
    if not ok.any():
        return ok
    cam = np.einsum("vnj,vjk->vnk", delta, rot)
    with np.errstate(invalid="ignore", divide="ignore"):
        ok &= cam[:, :, 2] > 0
        ok &= np.abs(np.arctan2(cam[:, :, 0], cam[:, :, 2])) <= intr.hfov / 2
        ok &= np.abs(np.arctan2(cam[:, :, 1], cam[:, :, 2])) <= intr.vfov / 2
        if ok.any():
            cos_inc = -np.einsum("vnj,nj->vn", delta, lm_norm) / np.where(d > 0, d, 1.0)
            ok &= cos_inc >= math.cos(intr.incidence_limit)
    vi, ni = np.nonzero(ok)
    if vi.size:
        blocked = _ray_blocked(dem, pos[vi], lm_pos[ni], d[vi, ni])
        ok[vi[blocked], ni[blocked]] = False
    return ok


def visible_mask(vp: Viewpoint, positions: np.ndarray, normals: np.ndarray, dem: DemGrid) -> np.ndarray:
    """Visibility of landmarks from one viewpoint."""
    pos = np.asarray(vp.position, float)[None, :]
    rot = vp.rotation[None, :, :]
    return batch_visibility(pos, rot, vp.intrinsics, positions, normals, dem)[0]


def _ray_blocked(dem: DemGrid, origins: np.ndarray, targets: np.ndarray, dist: np.ndarray,
                 step: float = OCCLUSION_STEP) -> np.ndarray:
    """March each ray at `step`; blocked when a sample dips under the terrain.

    `origins` is either one shared origin (3,) or per-ray origins (M, 3).
    Samples within one step of the target are skipped so a landmark does not
    occlude itself with the surface patch it sits on.
    """
    origins = np.asarray(origins, float)
    targets = np.asarray(targets, float)
    m = targets.shape[0]
    if origins.ndim == 1:
        origins = np.broadcast_to(origins, (m, 3))
    blocked = np.zeros(m, dtype=bool)
    n_steps = np.maximum(0, np.floor((dist - step) / step).astype(int))
    total = int(n_steps.sum())
    if total == 0:
        return blocked
    ray_idx = np.repeat(np.arange(m), n_steps)
    ends = np.cumsum(n_steps)
    step_idx = np.arange(total) - np.repeat(ends - n_steps, n_steps) + 1
    tvals = (step_idx * step) / dist[ray_idx]
    pts = origins[ray_idx] + (targets[ray_idx] - origins[ray_idx]) * tvals[:, None]
    h, inside = terrain_height_batch(dem, pts[:, :2])
    under = inside & (pts[:, 2] < h)
    if under.any():
        blocked[np.unique(ray_idx[under])] = True
    return blocked


def visible(vp: Viewpoint, lm: Landmark, dem: DemGrid) -> bool:
    """Single-landmark visibility; see visible_mask for the batched form."""
    return bool(
        visible_mask(vp, lm.position[None, :], lm.normal[None, :], dem)[0]
    )


def view_information(vp: Viewpoint, lm: Landmark, sigma_bearing: float = 0.002) -> np.ndarray:
    """Bearing-only information added by one view of one landmark."""
    delta = lm.position - np.asarray(vp.position)
    d = float(np.linalg.norm(delta))
    if d <= 0:
        raise ValueError("viewpoint coincides with landmark")
    b = delta / d
    return (np.eye(3) - np.outer(b, b)) / (sigma_bearing**2 * d**2)


def _trace_inv_spd(mats: np.ndarray) -> np.ndarray:
    """trace(A^-1) for stacked symmetric positive definite 3x3 matrices."""
    a, b, c = mats[:, 0, 0], mats[:, 0, 1], mats[:, 0, 2]
    d, e, f = mats[:, 1, 1], mats[:, 1, 2], mats[:, 2, 2]
    det = a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
    tr_adj = (d * f - e * e) + (a * f - c * c) + (a * d - b * b)
    return tr_adj / det


class FisherAccumulator:
    """Running per-landmark information and CRB statistics for a view set."""

    def __init__(self, lmap: LandmarkMap):
        self.lmap = lmap
        n = len(lmap)
        self.info = np.tile(np.eye(3) * lmap.prior_info, (n, 1, 1))
        self.view_counts = np.zeros(n, dtype=int)
        self.trace_inv = np.full(n, 3.0 / lmap.prior_info)

    def copy(self) -> "FisherAccumulator":
        out = FisherAccumulator.__new__(FisherAccumulator)
        out.lmap = self.lmap
        out.info = self.info.copy()
        out.view_counts = self.view_counts.copy()
        out.trace_inv = self.trace_inv.copy()
        return out

    def add_views(self, views: Iterable[Viewpoint], dem: DemGrid) -> None:
        touched = np.zeros(len(self.lmap), dtype=bool)
        for vp in views:
            mask = visible_mask(vp, self.lmap.positions, self.lmap.normals, dem)
            if not mask.any():
                continue
            self._accumulate(vp, mask, self.info)
            self.view_counts[mask] += 1
            touched |= mask
        if touched.any():
            self.trace_inv[touched] = _trace_inv_spd(self.info[touched])

    def _accumulate(self, vp: Viewpoint, mask: np.ndarray, info: np.ndarray) -> None:
        delta = self.lmap.positions[mask] - np.asarray(vp.position)
        d = np.linalg.norm(delta, axis=1)
        b = delta / d[:, None]
        scale = 1.0 / (self.lmap.sigma_bearing**2 * d**2)
        outer = b[:, :, None] * b[:, None, :]
        info[mask] += scale[:, None, None] * (np.eye(3)[None] - outer)

    def q_value(self) -> float:
        return float(self.trace_inv.mean())

    def coverage_fraction(self, k: int = 2) -> float:
        return float((self.view_counts >= k).mean())

    def preview_q(self, views: Sequence[Viewpoint], dem: DemGrid) -> float:
        """Q after hypothetically adding `views`, without mutating state."""
        if not views:
            return self.q_value()
        pos = np.array([vp.position for vp in views], float)
        rot = np.stack([vp.rotation for vp in views])
        return self.preview_q_poses(pos, rot, views[0].intrinsics, dem)

    def preview_q_poses(
        self, pos: np.ndarray, rot: np.ndarray, intr: CameraIntrinsics, dem: DemGrid
    ) -> float:
        """Array-based preview: camera poses given as positions and rotations."""
        if pos.shape[0] == 0:
            return self.q_value()
        vis = batch_visibility(pos, rot, intr, self.lmap.positions, self.lmap.normals, dem)
        vi, ni = np.nonzero(vis)
        if vi.size == 0:
            return self.q_value()
        delta = self.lmap.positions[ni] - pos[vi]
        d2 = np.einsum("kj,kj->k", delta, delta)
        b = delta / np.sqrt(d2)[:, None]
        scale = 1.0 / (self.lmap.sigma_bearing**2 * d2)
        add = scale[:, None, None] * (np.eye(3)[None] - b[:, :, None] * b[:, None, :])
        rows, inv = np.unique(ni, return_inverse=True)
        stacked = self.info[rows].copy()
        np.add.at(stacked, inv, add)
        new_tr = _trace_inv_spd(stacked)
        n = len(self.lmap)
        return float((self.trace_inv.sum() - self.trace_inv[rows].sum() + new_tr.sum()) / n)


# ---------------------------------------------------------------------------
# Contract-level pure functions
# ---------------------------------------------------------------------------


def map_quality(lmap: LandmarkMap, views: Sequence[Viewpoint], dem: DemGrid) -> float:
    """Mean trace of the per-landmark CRB for the given view set (m^2)."""
    acc = FisherAccumulator(lmap)
    acc.add_views(views, dem)
    return acc.q_value()


def view_utility(
    lmap: LandmarkMap, v: Sequence[Viewpoint], v_prime: Sequence[Viewpoint], dem: DemGrid
) -> float:
    """Q(v) - Q(v united with v'); nonnegative by information monotonicity.

    Union semantics: candidate views already present in v contribute nothing.
    """
    acc = FisherAccumulator(lmap)
    acc.add_views(v, dem)
    have = set(v)
    new = [vp for vp in v_prime if vp not in have]
    return acc.q_value() - acc.preview_q(new, dem)


def coverage_fraction(
    lmap: LandmarkMap, views: Sequence[Viewpoint], dem: DemGrid, k: int = 2
) -> float:
    """Fraction of landmarks seen by at least k of the given viewpoints."""
    if k < 1:
        raise ValueError("k must be >= 1")
    acc = FisherAccumulator(lmap)
    acc.add_views(views, dem)
    return acc.coverage_fraction(k)


# ---------------------------------------------------------------------------
# CSV logs
# ---------------------------------------------------------------------------


def landmarks_csv(lmap: LandmarkMap) -> str:
    lines = ["id,x,y,z,nx,ny,nz"]
    for i in range(len(lmap)):
        p = lmap.positions[i]
        n = lmap.normals[i]
        lines.append(f"{i},{p[0]:.3f},{p[1]:.3f},{p[2]:.3f},{n[0]:.6f},{n[1]:.6f},{n[2]:.6f}")
    return "\n".join(lines) + "\n"


def views_csv(views: Sequence[Viewpoint]) -> str:
    from scipy.spatial.transform import Rotation

    lines = ["t,x,y,z,qw,qx,qy,qz"]
    for vp in views:
        q = Rotation.from_matrix(vp.rotation).as_quat()  # x, y, z, w
        p = vp.position
        lines.append(
            f"{vp.t:.2f},{p[0]:.3f},{p[1]:.3f},{p[2]:.3f},{q[3]:.6f},{q[0]:.6f},{q[1]:.6f},{q[2]:.6f}"
        )
    return "\n".join(lines) + "\n"


def uncertainty_csv(acc: FisherAccumulator) -> str:
    lines = ["landmark_id,crb_trace,num_views"]
    for i in range(len(acc.lmap)):
        lines.append(f"{i},{acc.trace_inv[i]:.6e},{acc.view_counts[i]}")
    return "\n".join(lines) + "\n"
