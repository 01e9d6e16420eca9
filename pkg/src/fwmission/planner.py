"""Safe navigation between periodic loiter sets.

The planner grows a tree of terrain-following Dubins-airplane primitives from
the start set (a loiter circle or a single state) and tries analytic Dubins
connections onto the goal circles. Every segment it keeps, and every
connection it accepts, passes the distance-band check at 2 m arc spacing, so
any returned plan is feasible by construction and ends exactly on a goal
circle with tangent heading.

Budgets are expressed in iterations derived deterministically from the
requested time budget, which keeps results byte-identical across runs with
the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dubins import (
    AirplaneState,
    LoiterDirection,
    LoiterPath,
    PathSegment,
    VehicleLimits,
    connect_dubins,
    mod2pi,
    path_length,
    path_to_json,
    sample_loiter_states,
    sample_segment_points,
    wrap_angle,
)
from .terrain import DemGrid, DistanceBand, LoiterMask, band_check_points, distance_to_terrain_batch

COLLISION_SPACING = 2.0  # m of arc length between feasibility samples
CONNECT_POS_TOL = 1.0    # m
CONNECT_HEADING_TOL = 0.05  # rad
ITERS_PER_SECOND = 300   # deterministic stand-in for the wall-clock budget


class NoPathFound(Exception):
    """Search budget exhausted without a feasible connection."""


class InvalidGoal(Exception):
    """Goal loiter center is outside the valid-loiter mask."""


@dataclass(frozen=True)
class PlanQuery:
    start: LoiterPath | AirplaneState
    goals: tuple[LoiterPath, ...]
    band: DistanceBand
    time_budget: float = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.goals:
            raise ValueError("goal set must be non-empty")
        if self.time_budget <= 0:
            raise ValueError("time budget must be positive")
        object.__setattr__(self, "goals", tuple(self.goals))


@dataclass(frozen=True)
class PlanResult:
    path: tuple[PathSegment, ...]
    goal_index: int
    goal_direction: LoiterDirection
    cost: float

    def to_json(self) -> dict:
        return {
            "path": path_to_json(self.path),
            "goal_index": self.goal_index,
            "goal_direction": self.goal_direction.value,
            "cost": self.cost,
        }


@dataclass
class ValidationReport:
    """Independent feasibility audit of a path at fixed arc spacing."""

    min_distance: float
    max_distance: float
    max_abs_kappa: float
    max_abs_gamma: float
    violations: list[tuple[float, str, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_path(
    path: Sequence[PathSegment],
    dem: DemGrid,
    band: DistanceBand,
    limits: VehicleLimits,
    spacing: float = COLLISION_SPACING,
) -> ValidationReport:
    """Walk the path at `spacing` and report exact band/limit violations."""
    if not path:
        return ValidationReport(math.inf, -math.inf, 0.0, 0.0)
    pts = []
    arcs = []
    offset = 0.0
    max_k = 0.0
    max_g = 0.0
    violations: list[tuple[float, str, float]] = []
    for seg in path:
        p = sample_segment_points(seg, spacing)
        n = p.shape[0]
        s = np.minimum(np.arange(n) * spacing, seg.arc_length)
        pts.append(p)
        arcs.append(offset + s)
        max_k = max(max_k, abs(seg.kappa))
        max_g = max(max_g, abs(seg.gamma))
        if abs(seg.kappa) > limits.kappa_max * (1 + 1e-9):
            violations.append((offset, "kappa_limit", seg.kappa))
        if abs(seg.gamma) > limits.gamma_max * (1 + 1e-9):
            violations.append((offset, "gamma_limit", seg.gamma))
        offset += seg.arc_length
    pts = np.vstack(pts)
    arcs = np.concatenate(arcs)
    inside = dem.in_hull(pts[:, 0], pts[:, 1])
    for i in np.nonzero(~inside)[0]:
        violations.append((float(arcs[i]), "out_of_hull", math.nan))
    dist = np.full(len(pts), math.nan)
    if np.any(inside):
        dist[inside] = distance_to_terrain_batch(
            dem, pts[inside], band.d_max + 2 * dem.cellsize
        )
        for i in np.nonzero(inside & (dist < band.d_min))[0]:
            violations.append((float(arcs[i]), "below_band", float(dist[i])))
        for i in np.nonzero(inside & (dist > band.d_max))[0]:
            violations.append((float(arcs[i]), "above_band", float(dist[i])))
    finite = dist[np.isfinite(dist)]
    report = ValidationReport(
        min_distance=float(finite.min()) if finite.size else math.inf,
        max_distance=float(finite.max()) if finite.size else -math.inf,
        max_abs_kappa=max_k,
        max_abs_gamma=max_g,
        violations=sorted(violations, key=lambda v: v[0]),
    )
    return report


def segment_feasible(seg: PathSegment, dem: DemGrid, band: DistanceBand) -> bool:
    """Band check at 2 m spacing; same verdicts as validate_path."""
    pts = sample_segment_points(seg, COLLISION_SPACING)
    if not np.all(dem.in_hull(pts[:, 0], pts[:, 1])):
        return False
    return bool(np.all(band_check_points(dem, band, pts)))


def path_feasible(path: Sequence[PathSegment], dem: DemGrid, band: DistanceBand) -> bool:
    return all(segment_feasible(seg, dem, band) for seg in path)


# ---------------------------------------------------------------------------
# Tree search
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    state: AirplaneState
    parent: int
    segment: PathSegment | None  # None for roots
    depth: int


def _on_circle(state: AirplaneState, goal: LoiterPath, direction: LoiterDirection) -> bool:
    cx, cy, cz = goal.center
    r = math.hypot(state.x - cx, state.y - cy)
    if abs(r - goal.radius) > CONNECT_POS_TOL or abs(state.z - cz) > CONNECT_POS_TOL:
        return False
    phi = math.atan2(state.y - cy, state.x - cx)
    want = phi + math.pi / 2 if direction == LoiterDirection.CCW else phi - math.pi / 2
    return abs(wrap_angle(state.theta - want)) <= CONNECT_HEADING_TOL


def _entry_state(goal: LoiterPath, direction: LoiterDirection, phi: float) -> AirplaneState:
    oriented = LoiterPath(goal.center, goal.radius, direction)
    return oriented.state_at_angle(phi)


def _plan(
    roots: list[AirplaneState],
    loiter_start: LoiterPath | None,
    goals: Sequence[LoiterPath],
    dem: DemGrid,
    mask: LoiterMask,
    band: DistanceBand,
    limits: VehicleLimits,
    time_budget: float,
    seed: int,
) -> PlanResult:
    for gi, goal in enumerate(goals):
        if not mask.is_valid_at(goal.center[0], goal.center[1]):
            raise InvalidGoal(f"goal {gi} center {goal.center[:2]} not in valid-loiter region")

    # Immediate success: a start state already sits on some goal circle.
    for state in roots:
        for gi, goal in enumerate(goals):
            for direction in (LoiterDirection.CCW, LoiterDirection.CW):
                if loiter_start is not None:
                    # Departing a loiter means the first motion keeps its turn
                    # direction; an opposite-direction circle match only counts
                    # for the identity query (same circle).
                    same = (
                        math.hypot(goal.center[0] - loiter_start.center[0],
                                   goal.center[1] - loiter_start.center[1]) < CONNECT_POS_TOL
                        and abs(goal.radius - loiter_start.radius) < CONNECT_POS_TOL
                    )
                    if not same and direction != loiter_start.direction:
                        continue
                if _on_circle(state, goal, direction):
                    return PlanResult((), gi, direction, 0.0)

    rng = np.random.default_rng(seed)
    iterations = max(1, int(round(time_budget * ITERS_PER_SECOND)))
    nodes: list[_Node] = [_Node(s, -1, None, 0) for s in roots]
    xs = [s.x for s in roots]
    ys = [s.y for s in roots]

    # Sampling region: hull clipped box around starts and goals.
    margin = 400.0
    gx = [g.center[0] for g in goals]
    gy = [g.center[1] for g in goals]
    x_lo = max(dem.origin_x, min(min(xs), min(gx)) - margin)
    x_hi = min(dem.x_max, max(max(xs), max(gx)) + margin)
    y_lo = max(dem.origin_y, min(min(ys), min(gy)) - margin)
    y_hi = min(dem.y_max, max(max(ys), max(gy)) + margin)

    ext_len = 120.0

    def corridor_gamma(from_state: AirplaneState, kappa: float, length: float) -> float:
        probe = PathSegment(from_state, length, kappa, 0.0).end
        h = _safe_height(dem, probe.x, probe.y)
        if h is None:
            return 0.0
        target = h + band.mid_altitude
        return max(-0.8 * limits.gamma_max, min(0.8 * limits.gamma_max,
                   math.atan2(target - from_state.z, length)))

    def try_connect(ni: int) -> PlanResult | None:
        node = nodes[ni]
        if loiter_start is not None and node.depth == 0:
            return None  # keep the initial-curvature-direction constraint
        gi = int(rng.integers(len(goals)))
        goal = goals[gi]
        cx, cy, _ = goal.center
        face = math.atan2(node.state.y - cy, node.state.x - cx)
        for direction in _shuffled(rng, (LoiterDirection.CCW, LoiterDirection.CW)):
            for dphi in (0.0, rng.uniform(-math.pi, math.pi)):
                entry = _entry_state(goal, direction, face + dphi)
                segs = connect_dubins(
                    node.state, (entry.x, entry.y, entry.z, entry.theta), limits
                )
                if segs is None or not segs:
                    continue
                if not path_feasible(segs, dem, band):
                    continue
                full = _collect(nodes, ni) + segs
                return PlanResult(tuple(full), gi, direction, path_length(full))
        return None

    for it in range(iterations):
        # Goal-biased 2D sampling.
        if rng.uniform() < 0.35:
            g = goals[int(rng.integers(len(goals)))]
            ang = rng.uniform(0, 2 * math.pi)
            sx = g.center[0] + g.radius * math.cos(ang)
            sy = g.center[1] + g.radius * math.sin(ang)
        else:
            sx = rng.uniform(x_lo, x_hi)
            sy = rng.uniform(y_lo, y_hi)
        d2 = (np.array(xs) - sx) ** 2 + (np.array(ys) - sy) ** 2
        ni = int(np.argmin(d2))
        node = nodes[ni]

        if loiter_start is not None and node.depth == 0:
            # Departure arc continues the start loiter's own curvature.
            kappa = node.state.kappa
            length = rng.uniform(0.15, 1.0) * 2 * math.pi * loiter_start.radius
            gamma = 0.0
        else:
            bearing = math.atan2(sy - node.state.y, sx - node.state.x)
            dth = wrap_angle(bearing - node.state.theta)
            kappa = max(-limits.kappa_max, min(limits.kappa_max, dth / ext_len))
            length = ext_len
            gamma = corridor_gamma(node.state, kappa, length)
        seg = PathSegment(node.state, length, kappa, gamma)
        if not segment_feasible(seg, dem, band):
            continue
        nodes.append(_Node(seg.end, ni, seg, node.depth + 1))
        xs.append(seg.end.x)
        ys.append(seg.end.y)
        result = try_connect(len(nodes) - 1)
        if result is not None:
            return result

    raise NoPathFound(f"no feasible path within {iterations} iterations")


def _shuffled(rng, items):
    items = list(items)
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def _safe_height(dem: DemGrid, x: float, y: float):
    from .terrain import terrain_height_batch

    h, ok = terrain_height_batch(dem, np.array([[x, y]]))
    return float(h[0]) if ok[0] else None


def _collect(nodes: list[_Node], ni: int) -> list[PathSegment]:
    out: list[PathSegment] = []
    while ni >= 0 and nodes[ni].segment is not None:
        out.append(nodes[ni].segment)
        ni = nodes[ni].parent
    out.reverse()
    return out


def plan_loiter_to_loiter(
    q: PlanQuery, dem: DemGrid, mask: LoiterMask, limits: VehicleLimits
) -> PlanResult:
    """Loiter-to-loiter navigation; start direction constrains departure."""
    if not isinstance(q.start, LoiterPath):
        raise TypeError("loiter-to-loiter query needs a LoiterPath start")
    if not mask.is_valid_at(q.start.center[0], q.start.center[1]):
        raise InvalidGoal("start loiter center not in valid-loiter region")
    roots = sample_loiter_states(q.start, 16, limits)
    return _plan(roots, q.start, q.goals, dem, mask, q.band, limits, q.time_budget, q.rng_seed)


def plan_state_to_loiter(
    q: PlanQuery, dem: DemGrid, mask: LoiterMask, limits: VehicleLimits
) -> PlanResult:
    """Single-state start (abort replanning); goal set spans all candidates."""
    if not isinstance(q.start, AirplaneState):
        raise TypeError("state-to-loiter query needs an AirplaneState start")
    p = np.array([[q.start.x, q.start.y, q.start.z]])
    if not np.all(band_check_points(dem, q.band, p)):
        raise ValueError("start state violates the distance band")
    return _plan([q.start], None, q.goals, dem, mask, q.band, limits, q.time_budget, q.rng_seed)


def sample_rally_points(
    end: AirplaneState,
    mask: LoiterMask,
    rho: float = 300.0,
    n: int = 20,
    rng_seed: int = 0,
) -> list[LoiterPath]:
    """Candidate abort loiters sampled uniformly in the disk around `end`.

    Keeps centers whose nearest mask cell is valid; altitude comes from the
    mask. May return an empty list (caller escalates the radius).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(rng_seed)
    out: list[LoiterPath] = []
    for _ in range(n):
        r = rho * math.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * math.pi)
        cx = end.x + r * math.cos(ang)
        cy = end.y + r * math.sin(ang)
        if mask.is_valid_at(cx, cy):
            alt = mask.altitude_at(cx, cy)
            out.append(LoiterPath((cx, cy, alt), mask.radius, LoiterDirection.CCW))
    return out


def plan_to_geojson(result: PlanResult, goals: Sequence[LoiterPath]) -> dict:
    """FeatureCollection with the planned line and the goal circles."""
    from .dubins import path_to_geojson

    features = []
    if result.path:
        features.append(path_to_geojson(result.path, properties={"kind": "plan", "cost": result.cost}))
    for gi, g in enumerate(goals):
        ang = np.linspace(0, 2 * math.pi, 65)
        coords = [
            [g.center[0] + g.radius * math.cos(a), g.center[1] + g.radius * math.sin(a), g.center[2]]
            for a in ang
        ]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {"kind": "goal_circle", "index": gi, "chosen": gi == result.goal_index},
            }
        )
    return {"type": "FeatureCollection", "features": features}
