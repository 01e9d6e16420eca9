"""Elevation grids, 3D distance-to-terrain queries, and the valid-loiter mask.

A DemGrid stores node-registered heights: heights[iy, ix] is the elevation at
(origin_x + ix * cellsize, origin_y + iy * cellsize), row 0 southernmost. The
terrain surface is the triangulation of the node grid (two triangles per
cell), and all distance queries measure true 3D point-to-surface distance
against it, not vertical clearance.

Band checks (d_min <= distance <= d_max) are the hot path of every planner,
so they first try cheap conservative bounds built from windowed min/max
height filters, and fall back to exact triangle distances only for points
the bounds cannot decide. The decisions are identical to the exact
computation; only the cost differs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage


class DemParseError(ValueError):
    """Raised for malformed ASCII-grid files; message names the line."""


class OutOfBoundsError(ValueError):
    """Query outside the grid hull or touching a NODATA neighborhood."""


@dataclass(frozen=True)
class DistanceBand:
    """Allowed corridor of 3D distance to the terrain surface."""

    d_min: float = 50.0
    d_max: float = 120.0

    def __post_init__(self):
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError("band requires 0 < d_min < d_max")

    @property
    def mid_altitude(self) -> float:
        return 0.5 * (self.d_min + self.d_max)


@dataclass
class DemGrid:
    """Regular elevation raster with metric cells.

    Treated as immutable after construction; derived lookup structures are
    cached on first use and safe for concurrent readers.
    """

    ncols: int
    nrows: int
    origin_x: float
    origin_y: float
    cellsize: float
    nodata: float
    heights: np.ndarray  # (nrows, ncols), row 0 = southernmost

    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.cellsize <= 0:
            raise ValueError("cellsize must be positive")
        if self.ncols < 2 or self.nrows < 2:
            raise ValueError("grid needs at least 2x2 nodes")
        h = np.asarray(self.heights, dtype=float)
        if h.shape != (self.nrows, self.ncols):
            raise ValueError(f"heights shape {h.shape} != ({self.nrows}, {self.ncols})")
        finite = np.isfinite(h) | self.nodata_mask_of(h)
        if not finite.all():
            raise ValueError("non-nodata heights must be finite")
        h.flags.writeable = False
        self.heights = h

    def nodata_mask_of(self, h: np.ndarray) -> np.ndarray:
        return h == self.nodata

    @property
    def nodata_mask(self) -> np.ndarray:
        if "nodata_mask" not in self._cache:
            self._cache["nodata_mask"] = self.heights == self.nodata
        return self._cache["nodata_mask"]

    @property
    def has_nodata(self) -> bool:
        return bool(self.nodata_mask.any())

    @property
    def x_max(self) -> float:
        return self.origin_x + (self.ncols - 1) * self.cellsize

    @property
    def y_max(self) -> float:
        return self.origin_y + (self.nrows - 1) * self.cellsize

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin_x + np.arange(self.ncols) * self.cellsize
        ys = self.origin_y + np.arange(self.nrows) * self.cellsize
        return xs, ys

    def in_hull(self, x, y) -> np.ndarray:
        return (
            (np.asarray(x) >= self.origin_x)
            & (np.asarray(x) <= self.x_max)
            & (np.asarray(y) >= self.origin_y)
            & (np.asarray(y) <= self.y_max)
        )


# ---------------------------------------------------------------------------
# ASCII grid I/O
# ---------------------------------------------------------------------------

_HEADER_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"}


def load_dem(path: str | Path) -> DemGrid:
    """Parse an ESRI ASCII grid; first data row is the northernmost."""
    lines = Path(path).read_text().splitlines()
    header: dict[str, float] = {}
    idx = 0
    while idx < len(lines) and len(header) < 6:
        line = lines[idx].strip()
        if not line:
            idx += 1
            continue
        m = re.match(r"^([A-Za-z_]+)\s+(\S+)$", line)
        if not m or m.group(1).lower() not in _HEADER_KEYS:
            break
        try:
            header[m.group(1).lower()] = float(m.group(2))
        except ValueError:
            raise DemParseError(f"line {idx + 1}: non-numeric header value {m.group(2)!r}")
        idx += 1
    for key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if key not in header:
            raise DemParseError(f"line {idx + 1}: missing header field {key!r}")
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    cellsize = header["cellsize"]
    if cellsize <= 0:
        raise DemParseError(f"line {idx + 1}: cellsize must be positive")
    nodata = header.get("nodata_value", -9999.0)

    rows: list[np.ndarray] = []
    for r in range(nrows):
        if idx + r >= len(lines):
            raise DemParseError(f"line {idx + r + 1}: expected {nrows} data rows, file ended")
        raw = lines[idx + r].split()
        if len(raw) != ncols:
            raise DemParseError(
                f"line {idx + r + 1}: expected {ncols} values, got {len(raw)}"
            )
        try:
            rows.append(np.array([float(v) for v in raw]))
        except ValueError:
            bad = next(v for v in raw if not _is_float(v))
            raise DemParseError(f"line {idx + r + 1}: non-numeric cell {bad!r}")
    heights = np.flipud(np.vstack(rows))  # store south-first
    return DemGrid(
        ncols=ncols,
        nrows=nrows,
        origin_x=header["xllcorner"],
        origin_y=header["yllcorner"],
        cellsize=cellsize,
        nodata=nodata,
        heights=heights,
    )


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def save_dem(dem_like_values: np.ndarray, dem: DemGrid, path: str | Path, fmt: str = "%.3f") -> None:
    """Write values (same shape as the grid) as an ASCII grid, north row first."""
    vals = np.asarray(dem_like_values)
    if vals.shape != (dem.nrows, dem.ncols):
        raise ValueError("value shape must match grid")
    with open(path, "w") as f:
        f.write(f"ncols {dem.ncols}\n")
        f.write(f"nrows {dem.nrows}\n")
        f.write(f"xllcorner {dem.origin_x:.6f}\n")
        f.write(f"yllcorner {dem.origin_y:.6f}\n")
        f.write(f"cellsize {dem.cellsize:.6f}\n")
        f.write(f"NODATA_value {dem.nodata:.6f}\n")
        for row in np.flipud(vals):
            f.write(" ".join(fmt % v for v in row) + "\n")


# ---------------------------------------------------------------------------
# Height interpolation
# ---------------------------------------------------------------------------


def terrain_height(dem: DemGrid, x: float, y: float) -> float:
    """Bilinear height at (x, y); raises outside hull or near NODATA."""
    h, ok = terrain_height_batch(dem, np.array([[x, y]]))
    if not ok[0]:
        raise OutOfBoundsError(f"height query at ({x:.1f}, {y:.1f}) outside hull or on NODATA")
    return float(h[0])


def terrain_height_batch(dem: DemGrid, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling; returns (heights, valid mask)."""
    xy = np.asarray(xy, dtype=float)
    fx = (xy[:, 0] - dem.origin_x) / dem.cellsize
    fy = (xy[:, 1] - dem.origin_y) / dem.cellsize
    ok = (fx >= 0) & (fx <= dem.ncols - 1) & (fy >= 0) & (fy <= dem.nrows - 1)
    ix = np.clip(np.floor(fx).astype(int), 0, dem.ncols - 2)
    iy = np.clip(np.floor(fy).astype(int), 0, dem.nrows - 2)
    tx = np.clip(fx - ix, 0.0, 1.0)
    ty = np.clip(fy - iy, 0.0, 1.0)
    h = dem.heights
    h00 = h[iy, ix]
    h10 = h[iy, ix + 1]
    h01 = h[iy + 1, ix]
    h11 = h[iy + 1, ix + 1]
    if dem.has_nodata:
        nd = dem.nodata_mask
        ok &= ~(nd[iy, ix] | nd[iy, ix + 1] | nd[iy + 1, ix] | nd[iy + 1, ix + 1])
    out = (
        h00 * (1 - tx) * (1 - ty)
        + h10 * tx * (1 - ty)
        + h01 * (1 - tx) * ty
        + h11 * tx * ty
    )
    out = np.where(ok, out, np.nan)
    return out, ok


def _surface_height_tri(dem: DemGrid, xy: np.ndarray) -> np.ndarray:
    """Height of the triangulated surface (cells split along the 00-11 diagonal)."""
    xy = np.asarray(xy, dtype=float)
    fx = (xy[:, 0] - dem.origin_x) / dem.cellsize
    fy = (xy[:, 1] - dem.origin_y) / dem.cellsize
    ix = np.clip(np.floor(fx).astype(int), 0, dem.ncols - 2)
    iy = np.clip(np.floor(fy).astype(int), 0, dem.nrows - 2)
    tx = np.clip(fx - ix, 0.0, 1.0)
    ty = np.clip(fy - iy, 0.0, 1.0)
    h = dem.heights
    h00 = h[iy, ix]
    h10 = h[iy, ix + 1]
    h01 = h[iy + 1, ix]
    h11 = h[iy + 1, ix + 1]
    lower = tx >= ty  # triangle (00, 10, 11); else (00, 11, 01)
    z_lower = h00 + tx * (h10 - h00) + ty * (h11 - h10)
    z_upper = h00 + tx * (h11 - h01) + ty * (h01 - h00)
    return np.where(lower, z_lower, z_upper)


# ---------------------------------------------------------------------------
# Exact point-to-surface distance
# ---------------------------------------------------------------------------


def _triangle_arrays(dem: DemGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertex arrays (A, B, C) of all 2*(ncols-1)*(nrows-1) surface triangles.

    Cell (iy, ix) owns triangle rows 2*(iy*(ncols-1)+ix) and +1. Triangles
    touching NODATA nodes carry NaN vertices and never win a min-distance.
    """
    if "tris" in dem._cache:
        return dem._cache["tris"]
    xs, ys = dem.node_xy()
    X, Y = np.meshgrid(xs, ys)  # (nrows, ncols)
    h = dem.heights.astype(float).copy()
    if dem.has_nodata:
        h[dem.nodata_mask] = np.nan
    V = np.stack([X, Y, h], axis=-1)  # (nrows, ncols, 3)
    v00 = V[:-1, :-1].reshape(-1, 3)
    v10 = V[:-1, 1:].reshape(-1, 3)
    v01 = V[1:, :-1].reshape(-1, 3)
    v11 = V[1:, 1:].reshape(-1, 3)
    A = np.empty((v00.shape[0] * 2, 3))
    B = np.empty_like(A)
    C = np.empty_like(A)
    A[0::2], B[0::2], C[0::2] = v00, v10, v11
    A[1::2], B[1::2], C[1::2] = v00, v11, v01
    dem._cache["tris"] = (A, B, C)
    return dem._cache["tris"]


def _point_tri_dist_sq_flat(P: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared distances [K] for matched point/triangle pairs (Ericson's regions)."""
    ab = B - A
    ac = C - A
    ap = P - A
    d1 = np.einsum("kj,kj->k", ab, ap)
    d2 = np.einsum("kj,kj->k", ac, ap)
    bp = P - B
    d3 = np.einsum("kj,kj->k", ab, bp)
    d4 = np.einsum("kj,kj->k", ac, bp)
    cp = P - C
    d5 = np.einsum("kj,kj->k", ab, cp)
    d6 = np.einsum("kj,kj->k", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    eps = 1e-30
    v_ab = d1 / np.where(np.abs(d1 - d3) < eps, eps, d1 - d3)
    w_ac = d2 / np.where(np.abs(d2 - d6) < eps, eps, d2 - d6)
    den_bc = (d4 - d3) + (d5 - d6)
    w_bc = (d4 - d3) / np.where(np.abs(den_bc) < eps, eps, den_bc)
    den = va + vb + vc
    v_in = vb / np.where(np.abs(den) < eps, eps, den)
    w_in = vc / np.where(np.abs(den) < eps, eps, den)

    # Closest point built by exclusive region cascade.
    in_a = (d1 <= 0) & (d2 <= 0)
    in_b = (d3 >= 0) & (d4 <= d3)
    in_c = (d6 >= 0) & (d5 <= d6)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    v = np.clip(v_in, 0.0, 1.0)
    w = np.clip(w_in, 0.0, 1.0)
    v = np.where(on_bc, 1.0 - w_bc, v)
    w = np.where(on_bc, w_bc, w)
    v = np.where(on_ac, 0.0, v)
    w = np.where(on_ac, np.clip(w_ac, 0, 1), w)
    v = np.where(on_ab, np.clip(v_ab, 0, 1), v)
    w = np.where(on_ab, 0.0, w)
    v = np.where(in_c, 0.0, v)
    w = np.where(in_c, 1.0, w)
    v = np.where(in_b, 1.0, v)
    w = np.where(in_b, 0.0, w)
    v = np.where(in_a, 0.0, v)
    w = np.where(in_a, 0.0, w)

    closest = A + v[:, None] * ab + w[:, None] * ac
    diff = P - closest
    return np.einsum("kj,kj->k", diff, diff)


def _point_tri_dist_sq(P: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared distances [N, T] from each point to each triangle."""
    n, t = P.shape[0], A.shape[0]
    pi = np.repeat(np.arange(n), t)
    ti = np.tile(np.arange(t), n)
    return _point_tri_dist_sq_flat(P[pi], A[ti], B[ti], C[ti]).reshape(n, t)


def _window_triangle_rows(dem: DemGrid, ix0: int, ix1: int, iy0: int, iy1: int) -> np.ndarray:
    """Triangle row indices for cells [ix0, ix1] x [iy0, iy1] (node indices)."""
    ix0 = max(ix0, 0)
    iy0 = max(iy0, 0)
    ix1 = min(ix1, dem.ncols - 2)
    iy1 = min(iy1, dem.nrows - 2)
    if ix1 < ix0 or iy1 < iy0:
        return np.empty(0, dtype=int)
    cxs = np.arange(ix0, ix1 + 1)
    cys = np.arange(iy0, iy1 + 1)
    cells = (cys[:, None] * (dem.ncols - 1) + cxs[None, :]).ravel()
    return np.stack([cells * 2, cells * 2 + 1], axis=1).ravel()


def distance_to_terrain(dem: DemGrid, p: np.ndarray, search_radius: float | None = None) -> float:
    """Minimum 3D distance from p to the triangulated surface.

    Only triangles within the horizontal search radius are considered
    (the whole grid when None); returns +inf when none are in range.
    Points on or below the surface return 0.0.
    """
    d = distance_to_terrain_batch(dem, np.asarray(p, dtype=float)[None, :], search_radius)
    return float(d[0])


def is_underground(dem: DemGrid, p: np.ndarray) -> bool:
    """True when p is on or below the triangulated surface."""
    xy = np.asarray(p, dtype=float)[None, :2]
    if not dem.in_hull(xy[0, 0], xy[0, 1]):
        return False
    return bool(p[2] <= _surface_height_tri(dem, xy)[0])


def _cell_aabbs(dem: DemGrid) -> tuple[np.ndarray, np.ndarray]:
    """3D bounding boxes [(nrows-1)*(ncols-1), 3] of each cell's surface patch."""
    if "aabb" in dem._cache:
        return dem._cache["aabb"]
    xs, ys = dem.node_xy()
    h = dem.heights.astype(float).copy()
    if dem.has_nodata:
        h[dem.nodata_mask] = np.nan
    z_lo = np.minimum.reduce([h[:-1, :-1], h[:-1, 1:], h[1:, :-1], h[1:, 1:]])
    z_hi = np.maximum.reduce([h[:-1, :-1], h[:-1, 1:], h[1:, :-1], h[1:, 1:]])
    X0, Y0 = np.meshgrid(xs[:-1], ys[:-1])
    lo = np.stack([X0.ravel(), Y0.ravel(), z_lo.ravel()], axis=1)
    hi = np.stack(
        [(X0 + dem.cellsize).ravel(), (Y0 + dem.cellsize).ravel(), z_hi.ravel()], axis=1
    )
    dem._cache["aabb"] = (lo, hi)
    return dem._cache["aabb"]


def _node_positions(dem: DemGrid) -> np.ndarray:
    if "nodes" not in dem._cache:
        xs, ys = dem.node_xy()
        X, Y = np.meshgrid(xs, ys)
        h = dem.heights.astype(float).copy()
        if dem.has_nodata:
            h[dem.nodata_mask] = np.nan
        dem._cache["nodes"] = np.stack([X, Y, h], axis=-1)  # (nrows, ncols, 3)
    return dem._cache["nodes"]


def distance_to_terrain_batch(
    dem: DemGrid, points: np.ndarray, search_radius: float | None = None,
    max_pairs: int = 4_000_000, tile: int = 16,
) -> np.ndarray:
    """Exact distances for (N, 3) points.

    With a search radius, points are tiled into shared cell windows, a cheap
    node-distance upper bound prunes cells via their AABBs, and only the
    surviving point/triangle pairs get the full closest-point evaluation.
    The pruning never changes the result.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    out = np.full(n, np.inf)
    A, B, C = _triangle_arrays(dem)
    cs = dem.cellsize
    if search_radius is None:
        rows_all = np.arange(A.shape[0])
        step = max(1, max_pairs // max(1, A.shape[0]))
        for s in range(0, n, step):
            e = min(n, s + step)
            out[s:e] = _min_dist_rows(dem, points[s:e], rows_all, A, B, C)
        return _apply_underground(dem, points, out)
    inside = dem.in_hull(points[:, 0], points[:, 1])
    if not np.all(inside):
        bad = np.nonzero(~inside)[0][0]
        raise OutOfBoundsError(
            f"distance query at ({points[bad, 0]:.1f}, {points[bad, 1]:.1f}) outside hull"
        )
    w = int(math.ceil(search_radius / cs))
    nodes = _node_positions(dem)
    lo_all, hi_all = _cell_aabbs(dem)
    ix = np.clip(np.floor((points[:, 0] - dem.origin_x) / cs).astype(int), 0, dem.ncols - 2)
    iy = np.clip(np.floor((points[:, 1] - dem.origin_y) / cs).astype(int), 0, dem.nrows - 2)
    keys = (iy // tile).astype(np.int64) * ((dem.ncols // tile) + 2) + (ix // tile)
    order = np.argsort(keys, kind="stable")
    boundaries = np.nonzero(np.diff(keys[order]))[0] + 1
    for grp in np.split(order, boundaries):
        gx0, gx1 = int(ix[grp].min()), int(ix[grp].max())
        gy0, gy1 = int(iy[grp].min()), int(iy[grp].max())
        pts = points[grp]

        # Upper bound: nearest node of the surrounding 5x5 node patch.
        ub = np.full(grp.size, np.inf)
        for dy in range(-2, 3):
            jy = np.clip(iy[grp] + dy, 0, dem.nrows - 1)
            for dx in range(-2, 3):
                jx = np.clip(ix[grp] + dx, 0, dem.ncols - 1)
                nd = nodes[jy, jx] - pts
                d2 = np.einsum("kj,kj->k", nd, nd)
                ub = np.fmin(ub, d2)
        ub = np.sqrt(ub)

        cell_rows = _window_cell_rows(dem, gx0 - w, gx1 + w, gy0 - w, gy1 + w)
        if cell_rows.size == 0:
            continue
        lo = lo_all[cell_rows]
        hi = hi_all[cell_rows]
        # AABB lower bound per (point, cell); NaN boxes (NODATA) never pass.
        dx = np.maximum(lo[None, :, 0] - pts[:, 0, None], pts[:, 0, None] - hi[None, :, 0])
        dy = np.maximum(lo[None, :, 1] - pts[:, 1, None], pts[:, 1, None] - hi[None, :, 1])
        dz = np.maximum(lo[None, :, 2] - pts[:, 2, None], pts[:, 2, None] - hi[None, :, 2])
        dx = np.maximum(dx, 0.0)
        dy = np.maximum(dy, 0.0)
        dz = np.maximum(dz, 0.0)
        box_d2 = dx * dx + dy * dy + dz * dz
        with np.errstate(invalid="ignore"):
            cand = box_d2 <= (ub[:, None] * (1 + 1e-9)) ** 2
        pi, ci = np.nonzero(cand)
        best = ub
        if pi.size:
            tri_rows = cell_rows[ci] * 2
            for s in range(0, pi.size, max_pairs):
                e = min(pi.size, s + max_pairs)
                pp = pts[pi[s:e]]
                d2f = np.minimum(
                    _point_tri_dist_sq_flat(pp, A[tri_rows[s:e]], B[tri_rows[s:e]], C[tri_rows[s:e]]),
                    _point_tri_dist_sq_flat(pp, A[tri_rows[s:e] + 1], B[tri_rows[s:e] + 1], C[tri_rows[s:e] + 1]),
                )
                # pi is sorted (row-major nonzero), so segment-min per point.
                seg = np.concatenate([[0], np.nonzero(np.diff(pi[s:e]))[0] + 1])
                rows = pi[s:e][seg]
                mins = np.sqrt(np.minimum.reduceat(d2f, seg))
                best[rows] = np.fmin(best[rows], mins)
        out[grp] = best
    return _apply_underground(dem, points, out)


def _window_cell_rows(dem: DemGrid, ix0: int, ix1: int, iy0: int, iy1: int) -> np.ndarray:
    """Cell indices (row-major over the (nrows-1, ncols-1) cell grid)."""
    ix0 = max(ix0, 0)
    iy0 = max(iy0, 0)
    ix1 = min(ix1, dem.ncols - 2)
    iy1 = min(iy1, dem.nrows - 2)
    if ix1 < ix0 or iy1 < iy0:
        return np.empty(0, dtype=int)
    cxs = np.arange(ix0, ix1 + 1)
    cys = np.arange(iy0, iy1 + 1)
    return (cys[:, None] * (dem.ncols - 1) + cxs[None, :]).ravel()


def _min_dist_rows(dem, pts, rows, A, B, C) -> np.ndarray:
    d2 = _point_tri_dist_sq(pts, A[rows], B[rows], C[rows])
    with np.errstate(invalid="ignore"):
        md = np.sqrt(np.nanmin(d2, axis=1)) if d2.size else np.full(pts.shape[0], np.inf)
    return np.where(np.all(np.isnan(d2), axis=1), np.inf, md) if d2.size else md


def _apply_underground(dem: DemGrid, points: np.ndarray, dist: np.ndarray) -> np.ndarray:
    inside = dem.in_hull(points[:, 0], points[:, 1])
    if not np.any(inside):
        return dist
    surf = np.full(points.shape[0], -np.inf)
    surf[inside] = _surface_height_tri(dem, points[inside, :2])
    return np.where(inside & (points[:, 2] <= surf), 0.0, dist)


# ---------------------------------------------------------------------------
# Conservative distance bounds (windowed height extrema)
# ---------------------------------------------------------------------------


class _BoundFilters:
    """Per-grid min/max height filters over growing square windows.

    Window k holds the extrema of all nodes within Chebyshev distance
    k * cellsize of each node. The bounds derived from them bracket the true
    point-to-surface distance for arbitrary query points (node snap error and
    within-cell interpolation are absorbed into the ring radii).
    """

    def __init__(self, dem: DemGrid, n_windows: int):
        self.n = n_windows
        h = dem.heights.astype(float).copy()
        nd = dem.nodata_mask
        hmax_src = np.where(nd, -np.inf, h)
        hmin_src = np.where(nd, np.inf, h)
        self.hmax = np.empty((n_windows + 2, dem.nrows, dem.ncols))
        self.hmin = np.empty_like(self.hmax)
        self.hmax[0] = hmax_src
        self.hmin[0] = hmin_src
        for k in range(1, n_windows + 2):
            size = 2 * k + 1
            self.hmax[k] = ndimage.maximum_filter(hmax_src, size=size, mode="constant", cval=-np.inf)
            self.hmin[k] = ndimage.minimum_filter(hmin_src, size=size, mode="constant", cval=np.inf)
        self.nodata_near = None
        if nd.any():
            size = 2 * (n_windows + 1) + 1
            self.nodata_near = ndimage.maximum_filter(nd.astype(np.uint8), size=size, mode="constant", cval=0).astype(bool)


def _bound_filters(dem: DemGrid, band: DistanceBand) -> _BoundFilters:
    k = int(math.ceil((band.d_max + 2 * dem.cellsize) / dem.cellsize)) + 1
    key = ("bounds", k)
    if key not in dem._cache:
        dem._cache[key] = _BoundFilters(dem, k)
    return dem._cache[key]


def _distance_bounds(dem: DemGrid, band: DistanceBand, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lower, upper, in_hull&data-ok) conservative distance bounds per point."""
    f = _bound_filters(dem, band)
    cs = dem.cellsize
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    ok = dem.in_hull(x, y)
    jx = np.clip(np.round((x - dem.origin_x) / cs).astype(int), 0, dem.ncols - 1)
    jy = np.clip(np.round((y - dem.origin_y) / cs).astype(int), 0, dem.nrows - 1)
    if f.nodata_near is not None:
        ok &= ~f.nodata_near[jy, jx]

    ks = np.arange(f.n + 1)
    hmax = f.hmax[:, jy, jx]  # (n_windows+2, N)
    hmin = f.hmin[:, jy, jx]
    snap = 0.5 * math.sqrt(2.0) * cs  # max horizontal node-snap error

    # Upper bound: nodes are surface points; node with hmax_k / hmin_k lies
    # within k*cs*sqrt(2)+snap horizontally.
    bk = (ks * math.sqrt(2.0) * cs + snap)[:, None]
    with np.errstate(invalid="ignore"):
        ub_hi = np.sqrt(bk**2 + (z[None, :] - hmax[: f.n + 1]) ** 2)
        ub_lo = np.sqrt(bk**2 + (z[None, :] - hmin[: f.n + 1]) ** 2)
    ub_hi = np.where(np.isfinite(hmax[: f.n + 1]), ub_hi, np.inf)
    ub_lo = np.where(np.isfinite(hmin[: f.n + 1]), ub_lo, np.inf)
    ub = np.minimum(ub_hi, ub_lo).min(axis=0)

    # Lower bound by rings: surface in window k but not k-1 sits at horizontal
    # distance >= (k-1)*cs - snap - cs (cell interiors may come one cell
    # closer), with heights inside [hmin_{k+1}, hmax_{k+1}].
    ak = np.maximum(0.0, ((ks - 1) * cs - snap - cs))[:, None]
    ring_hi = hmax[1 : f.n + 2]
    ring_lo = hmin[1 : f.n + 2]
    gap = np.maximum(0.0, np.maximum(ring_lo - z[None, :], z[None, :] - ring_hi))
    empty = ~np.isfinite(ring_hi)  # window has no data nodes at all
    lb_rings = np.where(empty, np.inf, np.sqrt(ak**2 + gap**2))
    lb = lb_rings.min(axis=0)

    # Points on or below the surface have distance 0 by convention.
    under = np.zeros_like(ok)
    inside = dem.in_hull(x, y)
    if np.any(inside):
        surf = _surface_height_tri(dem, points[inside, :2])
        under[inside] = z[inside] <= surf
    lb = np.where(under, 0.0, lb)
    ub = np.where(under, 0.0, ub)
    return lb, ub, ok


def _band_decide(
    dem: DemGrid, band: DistanceBand, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bounds-only verdicts: (passed, failed, upper_bound); both False = undecided."""
    lb, ub, ok = _distance_bounds(dem, band, points)
    passed = ok & (lb >= band.d_min) & (ub <= band.d_max)
    failed = (~ok) | (ub < band.d_min) | (lb > band.d_max)
    return passed, failed, ub


def _band_exact(dem: DemGrid, band: DistanceBand, points: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Exact band verdicts for undecided points.

    Points already known to satisfy the d_max side only need terrain within
    a d_min-sized window, which keeps the exact query cheap.
    """
    verdict = np.zeros(points.shape[0], dtype=bool)
    min_side = ub <= band.d_max
    if np.any(min_side):
        r = band.d_min + 5 * dem.cellsize  # slack so beyond-window terrain is > d_min away
        d = distance_to_terrain_batch(dem, points[min_side], r)
        verdict[min_side] = d >= band.d_min
    rest = ~min_side
    if np.any(rest):
        d = distance_to_terrain_batch(dem, points[rest], band.d_max + 2 * dem.cellsize)
        verdict[rest] = (d >= band.d_min) & (d <= band.d_max)
    return verdict


def band_check_points(dem: DemGrid, band: DistanceBand, points: np.ndarray) -> np.ndarray:
    """Per-point pass mask for d_min <= distance <= d_max.

    Same verdicts as the exact triangulated distance; conservative bounds
    decide the easy points and the rest fall back to exact queries. Points
    outside the hull or near NODATA fail (fail-safe).
    """
    points = np.asarray(points, dtype=float)
    passed, failed, ub = _band_decide(dem, band, points)
    undecided = ~(passed | failed)
    if np.any(undecided):
        idxs = np.nonzero(undecided)[0]
        passed[idxs] = _band_exact(dem, band, points[idxs], ub[idxs])
    return passed


# ---------------------------------------------------------------------------
# Valid-loiter mask
# ---------------------------------------------------------------------------


@dataclass
class LoiterMask:
    """Grid of loiter-circle validity and the altitude of each valid circle."""

    ncols: int
    nrows: int
    origin_x: float
    origin_y: float
    cellsize: float
    radius: float
    band: DistanceBand
    valid: np.ndarray      # (nrows, ncols) bool
    loiter_alt: np.ndarray  # (nrows, ncols) float, NaN where invalid

    def node_index(self, x: float, y: float) -> tuple[int, int]:
        ix = int(round((x - self.origin_x) / self.cellsize))
        iy = int(round((y - self.origin_y) / self.cellsize))
        return ix, iy

    def is_valid_at(self, x: float, y: float) -> bool:
        ix, iy = self.node_index(x, y)
        if not (0 <= ix < self.ncols and 0 <= iy < self.nrows):
            return False
        return bool(self.valid[iy, ix])

    def altitude_at(self, x: float, y: float) -> float:
        ix, iy = self.node_index(x, y)
        if not (0 <= ix < self.ncols and 0 <= iy < self.nrows) or not self.valid[iy, ix]:
            raise OutOfBoundsError(f"no valid loiter at ({x:.1f}, {y:.1f})")
        return float(self.loiter_alt[iy, ix])

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean())

    def save(self, dem: DemGrid, mask_path: str | Path, alt_path: str | Path) -> None:
        save_dem(self.valid.astype(float), dem, mask_path, fmt="%d")
        alt = np.where(self.valid, self.loiter_alt, dem.nodata)
        save_dem(alt, dem, alt_path)

    def rle_rows(self) -> list[list[int]]:
        """Run-length encoding per row: [start_col, run_len, start, len, ...]."""
        rows = []
        for iy in range(self.nrows):
            row = self.valid[iy]
            runs: list[int] = []
            col = 0
            while col < self.ncols:
                if row[col]:
                    start = col
                    while col < self.ncols and row[col]:
                        col += 1
                    runs.extend([start, col - start])
                else:
                    col += 1
            rows.append(runs)
        return rows


def circle_sample_count(radius: float, cellsize: float) -> int:
    """At least one circle sample per underlying cell, never fewer than 16."""
    return max(16, int(math.ceil(2 * math.pi * radius / cellsize)))


def check_loiter_valid(
    dem: DemGrid, band: DistanceBand, center_xy: tuple[float, float], radius: float
) -> tuple[bool, float | None]:
    """Validity of one loiter circle and its conservative altitude.

    The circle altitude is the max terrain height under the sampled circle
    plus the band midpoint; validity requires every sample at that altitude
    to sit inside the distance band.
    """
    valid, alt = _check_circles_batch(dem, band, np.asarray([center_xy], dtype=float), radius)
    return bool(valid[0]), (float(alt[0]) if valid[0] else None)


def _check_circles_batch(
    dem: DemGrid, band: DistanceBand, centers: np.ndarray, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    m = centers.shape[0]
    k = circle_sample_count(radius, dem.cellsize)
    ang = 2 * np.pi * np.arange(k) / k
    offs = radius * np.column_stack([np.cos(ang), np.sin(ang)])  # (k, 2)
    pts = centers[:, None, :] + offs[None, :, :]  # (m, k, 2)
    flat = pts.reshape(-1, 2)
    h, ok = terrain_height_batch(dem, flat)
    h = h.reshape(m, k)
    ok = ok.reshape(m, k)
    circle_ok = ok.all(axis=1)
    alt = np.where(circle_ok, np.nanmax(np.where(ok, h, -np.inf), axis=1) + band.mid_altitude, np.nan)
    valid = circle_ok.copy()
    idxs = np.nonzero(circle_ok)[0]
    if idxs.size:
        p3 = np.empty((idxs.size, k, 3))
        p3[:, :, :2] = pts[idxs]
        p3[:, :, 2] = alt[idxs, None]
        flat_pts = p3.reshape(-1, 3)
        passed, failed, ub = _band_decide(dem, band, flat_pts)
        passed = passed.reshape(idxs.size, k)
        failed = failed.reshape(idxs.size, k)
        # A circle with any decisively failing sample is invalid outright;
        # only fully undecided-or-passing circles need exact fallback.
        alive = ~failed.any(axis=1)
        undecided = ~passed & alive[:, None]
        if np.any(undecided):
            flat_idx = np.nonzero(undecided.ravel())[0]
            passed.ravel()[flat_idx] = _band_exact(dem, band, flat_pts[flat_idx], ub[flat_idx])
        valid[idxs] = alive & passed.all(axis=1)
    return valid, np.where(valid, alt, np.nan)


def build_loiter_mask(
    dem: DemGrid, band: DistanceBand, radius: float, chunk_rows: int = 8
) -> LoiterMask:
    """Evaluate check_loiter_valid at every grid node.

    Row-chunked and vectorized; the result is independent of chunking since
    every circle is evaluated in isolation.
    """
    xs, ys = dem.node_xy()
    valid = np.zeros((dem.nrows, dem.ncols), dtype=bool)
    alt = np.full((dem.nrows, dem.ncols), np.nan)
    for y0 in range(0, dem.nrows, chunk_rows):
        y1 = min(dem.nrows, y0 + chunk_rows)
        X, Y = np.meshgrid(xs, ys[y0:y1])
        centers = np.column_stack([X.ravel(), Y.ravel()])
        v, a = _check_circles_batch(dem, band, centers, radius)
        valid[y0:y1] = v.reshape(y1 - y0, dem.ncols)
        alt[y0:y1] = a.reshape(y1 - y0, dem.ncols)
    return LoiterMask(
        ncols=dem.ncols,
        nrows=dem.nrows,
        origin_x=dem.origin_x,
        origin_y=dem.origin_y,
        cellsize=dem.cellsize,
        radius=radius,
        band=band,
        valid=valid,
        loiter_alt=alt,
    )
