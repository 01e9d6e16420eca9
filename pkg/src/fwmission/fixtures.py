"""Synthetic DEM builders for tests, demos, and the acceptance scenarios.

All builders return node-registered DemGrid instances with the origin at
(0, 0) unless stated otherwise. Profiles use smooth cosine ramps so validity
boundaries do not sit on knife edges.
"""

from __future__ import annotations

import numpy as np

from .terrain import DemGrid

NODATA = -9999.0


def _grid(ncols: int, nrows: int, cellsize: float, heights: np.ndarray) -> DemGrid:
    return DemGrid(
        ncols=ncols,
        nrows=nrows,
        origin_x=0.0,
        origin_y=0.0,
        cellsize=cellsize,
        nodata=NODATA,
        heights=heights,
    )


def flat_dem(ncols: int = 40, nrows: int = 30, cellsize: float = 10.0, height: float = 0.0) -> DemGrid:
    return _grid(ncols, nrows, cellsize, np.full((nrows, ncols), height, dtype=float))


def plane_dem(
    ncols: int = 40, nrows: int = 30, cellsize: float = 10.0,
    slope_x: float = 0.0, slope_y: float = 0.0, base: float = 0.0,
) -> DemGrid:
    xs = np.arange(ncols) * cellsize
    ys = np.arange(nrows) * cellsize
    X, Y = np.meshgrid(xs, ys)
    return _grid(ncols, nrows, cellsize, base + slope_x * X + slope_y * Y)


def slope45_dem(ncols: int = 40, nrows: int = 30, cellsize: float = 10.0) -> DemGrid:
    """Uniform 45 degree slope rising along +x."""
    return plane_dem(ncols, nrows, cellsize, slope_x=1.0)


def _ramp(t: np.ndarray) -> np.ndarray:
    """Cosine smoothstep on [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * t)


def valley_dem(
    length: float = 2000.0,
    width: float = 1000.0,
    cellsize: float = 10.0,
    wall_height: float = 180.0,
    floor_half_width: float = 220.0,
    wall_run: float = 260.0,
) -> DemGrid:
    """Valley running along +x: flat floor, smooth walls, high side plateaus."""
    ncols = int(round(length / cellsize)) + 1
    nrows = int(round(width / cellsize)) + 1
    ys = np.arange(nrows) * cellsize
    mid = width / 2.0
    t = (np.abs(ys - mid) - floor_half_width) / wall_run
    profile = wall_height * _ramp(t)
    heights = np.tile(profile[:, None], (1, ncols))
    return _grid(ncols, nrows, cellsize, heights)


def canyon_dem(
    ncols: int = 91,
    nrows: int = 63,
    cellsize: float = 10.0,
    plateau: float = 170.0,
    floor_width: float = 300.0,
    wall_run: float = 60.0,
    mouth_x: float = 150.0,
) -> DemGrid:
    """Box canyon cut into a plateau, opening toward -x.

    The floor is at elevation 0 inside a U-shaped pocket wide enough to hold
    valid loiters along its centerline; walls ramp up to the plateau over
    `wall_run` meters on the two sides and the closed end.
    """
    xs = np.arange(ncols) * cellsize
    ys = np.arange(nrows) * cellsize
    X, Y = np.meshgrid(xs, ys)
    mid = ys[-1] / 2.0
    # Signed distance outward from the canyon footprint (a half-open slot).
    dy = np.abs(Y - mid) - floor_width / 2.0
    end_x = xs[-1] - mouth_x  # closed end near +x edge
    dx = X - end_x
    outside = np.maximum.reduce([dy, dx, np.zeros_like(X)])
    inside_slot = (dy <= 0.0) & (dx <= 0.0)
    d = np.where(inside_slot, 0.0, np.hypot(np.maximum(dy, 0.0), np.maximum(dx, 0.0)))
    heights = plateau * _ramp(d / wall_run)
    heights[inside_slot] = 0.0
    return _grid(ncols, nrows, cellsize, heights)


def wall_dem(
    ncols: int = 120,
    nrows: int = 60,
    cellsize: float = 10.0,
    wall_x: float = 600.0,
    wall_height: float = 300.0,
    wall_halfwidth: float = 30.0,
) -> DemGrid:
    """Flat plain split by a tall near-vertical wall across the full y extent.

    The wall is too steep to cross inside a 50-120 m distance band with a
    small climb-angle limit, so goals behind it are unreachable.
    """
    xs = np.arange(ncols) * cellsize
    X = np.tile(xs[None, :], (nrows, 1))
    t = 1.0 - np.abs(X - wall_x) / wall_halfwidth
    heights = wall_height * _ramp(t)
    return _grid(ncols, nrows, cellsize, heights)


def ridge_dem(
    ncols: int = 60,
    nrows: int = 40,
    cellsize: float = 10.0,
    ridge_height: float = 120.0,
    ridge_half_width: float = 80.0,
) -> DemGrid:
    """Single ridge running along +y at the grid's x-midline."""
    xs = np.arange(ncols) * cellsize
    X = np.tile(xs[None, :], (nrows, 1))
    mid = xs[-1] / 2.0
    t = 1.0 - np.abs(X - mid) / ridge_half_width
    heights = ridge_height * _ramp(t)
    return _grid(ncols, nrows, cellsize, heights)
