"""Independent reference implementations used to check the production code.

Everything here deliberately avoids the package's own geometry kernels:
distances come from dense surface sampling (cKDTree) or a from-scratch
barycentric point-triangle routine, and the ODE integration is plain RK4.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from fwmission.terrain import DemGrid


def rk4_propagate(x, y, z, theta, kappa, gamma, L, n_steps=400):
    """RK4 integration of the airplane kinematics in arc length."""

    def deriv(state):
        _, _, _, th = state
        cg = math.cos(gamma)
        return np.array([cg * math.cos(th), cg * math.sin(th), math.sin(gamma), kappa])

    state = np.array([x, y, z, theta], dtype=float)
    h = L / n_steps
    for _ in range(n_steps):
        k1 = deriv(state)
        k2 = deriv(state + 0.5 * h * k1)
        k3 = deriv(state + 0.5 * h * k2)
        k4 = deriv(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return state


def point_triangle_distance(p, a, b, c) -> float:
    """Scalar point-to-triangle distance via plane projection and edge clamps."""
    p = np.asarray(p, float)
    a, b, c = np.asarray(a, float), np.asarray(b, float), np.asarray(c, float)
    n = np.cross(b - a, c - a)
    nn = np.dot(n, n)
    if nn < 1e-24:  # degenerate: fall back to edges
        return min(_point_segment_distance(p, a, b),
                   _point_segment_distance(p, b, c),
                   _point_segment_distance(p, c, a))
    # Project onto the plane, then test barycentric containment.
    t = np.dot(p - a, n) / nn
    proj = p - t * n
    v0, v1, v2 = b - a, c - a, proj - a
    d00, d01, d11 = np.dot(v0, v0), np.dot(v0, v1), np.dot(v1, v1)
    d20, d21 = np.dot(v2, v0), np.dot(v2, v1)
    den = d00 * d11 - d01 * d01
    u = (d11 * d20 - d01 * d21) / den
    v = (d00 * d21 - d01 * d20) / den
    if u >= -1e-12 and v >= -1e-12 and u + v <= 1 + 1e-12:
        return float(np.linalg.norm(p - proj))
    return min(_point_segment_distance(p, a, b),
               _point_segment_distance(p, b, c),
               _point_segment_distance(p, c, a))


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    t = np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-24)
    t = min(max(t, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def brute_force_distance(dem: DemGrid, p) -> float:
    """Min distance over every surface triangle, no radius cutoff."""
    h = dem.heights
    cs = dem.cellsize
    best = math.inf
    for iy in range(dem.nrows - 1):
        for ix in range(dem.ncols - 1):
            x0 = dem.origin_x + ix * cs
            y0 = dem.origin_y + iy * cs
            v00 = (x0, y0, h[iy, ix])
            v10 = (x0 + cs, y0, h[iy, ix + 1])
            v01 = (x0, y0 + cs, h[iy + 1, ix])
            v11 = (x0 + cs, y0 + cs, h[iy + 1, ix + 1])
            best = min(best, point_triangle_distance(p, v00, v10, v11))
            best = min(best, point_triangle_distance(p, v00, v11, v01))
    return best


class DenseSurfaceOracle:
    """Distance oracle from 0.5 m sampling of the triangulated surface."""

    def __init__(self, dem: DemGrid, step: float = 0.5):
        xs = np.arange(dem.origin_x, dem.x_max + step / 2, step)
        ys = np.arange(dem.origin_y, dem.y_max + step / 2, step)
        X, Y = np.meshgrid(xs, ys)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        z = _tri_surface_height(dem, pts)
        self.cloud = np.column_stack([pts, z])
        self.tree = cKDTree(self.cloud)
        self.step = step

    def distance(self, p) -> float:
        d, _ = self.tree.query(np.asarray(p, float))
        return float(d)

    def distance_batch(self, pts) -> np.ndarray:
        d, _ = self.tree.query(np.asarray(pts, float))
        return d


def _tri_surface_height(dem: DemGrid, xy: np.ndarray) -> np.ndarray:
    """Triangulated surface height, written independently of the package."""
    cs = dem.cellsize
    fx = np.clip((xy[:, 0] - dem.origin_x) / cs, 0, dem.ncols - 1 - 1e-12)
    fy = np.clip((xy[:, 1] - dem.origin_y) / cs, 0, dem.nrows - 1 - 1e-12)
    ix = fx.astype(int)
    iy = fy.astype(int)
    tx = fx - ix
    ty = fy - iy
    h = dem.heights
    h00, h10 = h[iy, ix], h[iy, ix + 1]
    h01, h11 = h[iy + 1, ix], h[iy + 1, ix + 1]
    lower = tx >= ty
    z = np.where(lower,
                 h00 + tx * (h10 - h00) + ty * (h11 - h10),
                 h00 + tx * (h11 - h01) + ty * (h01 - h00))
    return z


def oracle_loiter_valid(dem: DemGrid, band, center, radius: float,
                        oracle: DenseSurfaceOracle) -> tuple[bool, float | None]:
    """Re-implements the loiter validity rule on top of the dense oracle."""
    k = max(16, int(math.ceil(2 * math.pi * radius / dem.cellsize)))
    heights = []
    pts = []
    for j in range(k):
        ang = 2 * math.pi * j / k
        x = center[0] + radius * math.cos(ang)
        y = center[1] + radius * math.sin(ang)
        if not (dem.origin_x <= x <= dem.x_max and dem.origin_y <= y <= dem.y_max):
            return False, None
        # Bilinear height, plain implementation.
        fx = (x - dem.origin_x) / dem.cellsize
        fy = (y - dem.origin_y) / dem.cellsize
        ix = min(int(fx), dem.ncols - 2)
        iy = min(int(fy), dem.nrows - 2)
        tx, ty = fx - ix, fy - iy
        h = dem.heights
        hh = (h[iy, ix] * (1 - tx) * (1 - ty) + h[iy, ix + 1] * tx * (1 - ty)
              + h[iy + 1, ix] * (1 - tx) * ty + h[iy + 1, ix + 1] * tx * ty)
        heights.append(hh)
        pts.append((x, y))
    alt = max(heights) + 0.5 * (band.d_min + band.d_max)
    p3 = np.array([[x, y, alt] for x, y in pts])
    d = oracle.distance_batch(p3)
    ok = np.all((d >= band.d_min) & (d <= band.d_max))
    return (True, alt) if ok else (False, None)
