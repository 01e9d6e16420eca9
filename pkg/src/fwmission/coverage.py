"""Terrain-aware boustrophedon sweep baseline.

Sweep lines are parallel chords of the ROI polygon along a commanded
direction, flown in alternating directions at the band-midpoint altitude
above terrain, with the climb rate slope-limited by the vehicle's
flight-path-angle bound. Consecutive lines are joined by analytic Dubins
turnarounds at the minimum turn radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, MultiLineString, Polygon

from .dubins import AirplaneState, PathSegment, VehicleLimits, connect_dubins, wrap_angle
from .planner import validate_path
from .terrain import DemGrid, DistanceBand, terrain_height_batch

PROFILE_STEP = 2.0       # m sampling of the altitude profile along a line
PROFILE_TOL = 0.5        # m simplification tolerance for profile knots


class SweepPlanError(ValueError):
    """Sweep construction failed; the message names the offending lines."""


@dataclass
class SweepPlan:
    sweep_direction: float
    line_spacing: float
    lines: list[tuple[np.ndarray, np.ndarray]]          # 2D start/end per line
    altitude_knots: list[list[tuple[float, float]]]     # (arc s, altitude) per line
    line_segments: list[list[PathSegment]] = field(default_factory=list)
    turnarounds: list[list[PathSegment]] = field(default_factory=list)


def plan_sweep(
    roi: list[tuple[float, float]],
    direction: float,
    spacing: float,
    dem: DemGrid,
    band: DistanceBand,
    limits: VehicleLimits,
) -> SweepPlan:
    """Boustrophedon sweep of the ROI with terrain-following altitudes."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    try:
        poly = Polygon(roi)
    except (ValueError, TypeError) as e:
        raise SweepPlanError(f"ROI is not a polygon: {e}")
    if not poly.is_valid or poly.area <= 0:
        raise SweepPlanError("ROI must be a simple polygon with area")

    # Work in a frame where the sweep direction is +x.
    c, s = math.cos(-direction), math.sin(-direction)
    rot = np.array([[c, -s], [s, c]])
    pts = np.asarray(roi, dtype=float) @ rot.T
    rpoly = Polygon(pts)
    x0, y0, x1, y1 = rpoly.bounds

    n_lines = int(math.floor((y1 - y0) / spacing)) + 1
    if n_lines == 1:
        ys = [0.5 * (y0 + y1)]  # ROI narrower than one spacing: center line
    else:
        ys = [y0 + k * spacing for k in range(n_lines)]

    inv = rot.T
    lines: list[tuple[np.ndarray, np.ndarray]] = []
    for k, y in enumerate(ys):
        chord = rpoly.intersection(LineString([(x0 - 1.0, y), (x1 + 1.0, y)]))
        if chord.is_empty:
            continue
        if isinstance(chord, MultiLineString):
            chord = max(chord.geoms, key=lambda g: g.length)
        if not isinstance(chord, LineString) or chord.length < 1e-6:
            continue
        (ax, ay), (bx, by) = chord.coords[0], chord.coords[-1]
        if ax > bx:
            ax, ay, bx, by = bx, by, ax, ay
        a = inv @ np.array([ax, ay])
        b = inv @ np.array([bx, by])
        if len(lines) % 2 == 1:
            a, b = b, a  # boustrophedon alternation
        lines.append((a, b))
    if not lines:
        raise SweepPlanError("no sweep chords intersect the ROI")

    knots = [_altitude_profile(a, b, dem, band, limits) for a, b in lines]
    plan = SweepPlan(direction, spacing, lines, knots)

    for k, ((a, b), kn) in enumerate(zip(lines, knots)):
        plan.line_segments.append(_line_to_segments(a, b, kn))
    for k in range(len(lines) - 1):
        end_state = plan.line_segments[k][-1].end
        nxt = plan.line_segments[k + 1][0].start
        turn = connect_dubins(
            end_state, (nxt.x, nxt.y, nxt.z, nxt.theta), limits
        )
        if turn is None:
            raise SweepPlanError(f"turnaround between lines {k} and {k + 1} infeasible")
        plan.turnarounds.append(turn)

    report = validate_path(sweep_to_path(plan), dem, band, limits)
    if not report.ok:
        kind = report.violations[0][1]
        raise SweepPlanError(f"sweep violates constraints ({kind}); try another spacing/direction")
    return plan


def _altitude_profile(
    a: np.ndarray, b: np.ndarray, dem: DemGrid, band: DistanceBand, limits: VehicleLimits
) -> list[tuple[float, float]]:
    """Slope-limited terrain-following altitude knots along one line."""
    length = float(np.linalg.norm(b - a))
    n = max(2, int(math.ceil(length / PROFILE_STEP)) + 1)
    ss = np.linspace(0.0, length, n)
    xy = a[None, :] + (b - a)[None, :] * (ss / length)[:, None]
    h, ok = terrain_height_batch(dem, xy)
    if not np.all(ok):
        raise SweepPlanError("sweep line leaves the DEM hull")
    alt = h + band.mid_altitude
    max_dz = np.diff(ss) * math.tan(limits.gamma_max)
    # Raise ahead of climbs (backward) and after descents (forward).
    for i in range(n - 2, -1, -1):
        alt[i] = max(alt[i], alt[i + 1] - max_dz[i])
    for i in range(1, n):
        alt[i] = max(alt[i], alt[i - 1] - max_dz[i - 1])
    idx = _simplify(ss, alt, PROFILE_TOL)
    return [(float(ss[i]), float(alt[i])) for i in idx]


def _simplify(ss: np.ndarray, alt: np.ndarray, tol: float) -> list[int]:
    """Douglas-Peucker on the (s, altitude) polyline; returns kept indices."""
    keep = {0, len(ss) - 1}

    def rec(i0, i1):
        if i1 <= i0 + 1:
            return
        t = (ss[i0 + 1 : i1] - ss[i0]) / (ss[i1] - ss[i0])
        interp = alt[i0] + t * (alt[i1] - alt[i0])
        dev = np.abs(alt[i0 + 1 : i1] - interp)
        j = int(np.argmax(dev))
        if dev[j] > tol:
            mid = i0 + 1 + j
            keep.add(mid)
            rec(i0, mid)
            rec(mid, i1)

    rec(0, len(ss) - 1)
    return sorted(keep)


def _line_to_segments(a: np.ndarray, b: np.ndarray, knots: list[tuple[float, float]]) -> list[PathSegment]:
    heading = math.atan2(b[1] - a[1], b[0] - a[0])
    dirv = np.array([math.cos(heading), math.sin(heading)])
    segs: list[PathSegment] = []
    for (s0, z0), (s1, z1) in zip(knots, knots[1:]):
        run = s1 - s0
        if run <= 1e-9:
            continue
        gamma = math.atan2(z1 - z0, run)
        arc = math.hypot(run, z1 - z0)
        start_xy = a + dirv * s0
        start = AirplaneState(start_xy[0], start_xy[1], z0, heading, kappa=0.0, gamma=gamma)
        segs.append(PathSegment(start, arc, 0.0, gamma))
    if not segs:
        raise SweepPlanError("degenerate sweep line")
    return segs


def sweep_to_path(plan: SweepPlan) -> list[PathSegment]:
    """Flatten lines and turnarounds into the common path representation."""
    out: list[PathSegment] = []
    for k, line in enumerate(plan.line_segments):
        out.extend(line)
        if k < len(plan.turnarounds):
            out.extend(plan.turnarounds[k])
    return out


def sweep_length(plan: SweepPlan) -> float:
    return sum(seg.arc_length for seg in sweep_to_path(plan))


def heading_of_line(plan: SweepPlan, k: int) -> float:
    a, b = plan.lines[k]
    return wrap_angle(math.atan2(b[1] - a[1], b[0] - a[0]))
