"""Dubins airplane kinematics: states, motion primitives, loiter circles.

The vehicle model is a constant-airspeed point mass with bounded signed
curvature kappa (positive = left turn) and bounded flight-path angle gamma.
Paths are chains of constant-(kappa, gamma) segments parameterized by total
arc length, so heading advances by kappa * L and altitude by L * sin(gamma)
along a segment, while the horizontal trace is an arc of radius
cos(gamma) / |kappa| (a line when kappa == 0).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Closest-point queries treat curvatures below this as straight; the sagitta
# error over a 1 km segment is < 1e-4 m, far below any tolerance used here.
KAPPA_EPS = 1e-9


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def mod2pi(a: float) -> float:
    """Wrap an angle to [0, 2*pi)."""
    a = math.fmod(a, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return a


class LoiterDirection(str, Enum):
    CW = "CW"
    CCW = "CCW"


@dataclass(frozen=True)
class VehicleLimits:
    """Kinematic envelope: airspeed, max curvature, max flight-path angle."""

    airspeed: float = 15.0
    kappa_max: float = 1.0 / 80.0
    gamma_max: float = 0.15

    def __post_init__(self):
        if self.airspeed <= 0 or self.kappa_max <= 0 or self.gamma_max <= 0:
            raise ValueError("vehicle limits must be strictly positive")

    @property
    def min_turn_radius(self) -> float:
        return 1.0 / self.kappa_max


@dataclass(frozen=True)
class AirplaneState:
    """Pose (x, y, z, theta) plus current curvature and flight-path angle."""

    x: float
    y: float
    z: float
    theta: float
    kappa: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def tangent(self) -> np.ndarray:
        """Unit velocity direction implied by (theta, gamma)."""
        cg = math.cos(self.gamma)
        return np.array(
            [cg * math.cos(self.theta), cg * math.sin(self.theta), math.sin(self.gamma)]
        )


@dataclass(frozen=True)
class PathSegment:
    """Constant-curvature, constant-climb piece of a reference path."""

    start: AirplaneState
    arc_length: float
    kappa: float
    gamma: float

    def __post_init__(self):
        if self.arc_length <= 0:
            raise ValueError("arc_length must be positive")

    def state_at(self, s: float) -> AirplaneState:
        """State after arc length s along the segment (s clamped to [0, L])."""
        s = min(max(s, 0.0), self.arc_length)
        return _propagate_unchecked(self.start, self.kappa, self.gamma, s)

    @property
    def end(self) -> AirplaneState:
        return self.state_at(self.arc_length)


@dataclass(frozen=True)
class LoiterPath:
    """Circular holding orbit; the periodic safe-set primitive."""

    center: tuple[float, float, float]
    radius: float
    direction: LoiterDirection

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("loiter radius must be positive")

    @property
    def kappa(self) -> float:
        sign = 1.0 if self.direction == LoiterDirection.CCW else -1.0
        return sign / self.radius

    def state_at_angle(self, phi: float) -> AirplaneState:
        """On-circle state at angular position phi (measured from +x)."""
        cx, cy, cz = self.center
        if self.direction == LoiterDirection.CCW:
            theta = phi + math.pi / 2.0
        else:
            theta = phi - math.pi / 2.0
        return AirplaneState(
            x=cx + self.radius * math.cos(phi),
            y=cy + self.radius * math.sin(phi),
            z=cz,
            theta=theta,
            kappa=self.kappa,
            gamma=0.0,
        )

    def angle_of(self, x: float, y: float) -> float:
        return math.atan2(y - self.center[1], x - self.center[0])


def _sinc(u: float) -> float:
    if abs(u) < 1e-8:
        return 1.0 - u * u / 6.0
    return math.sin(u) / u


def _propagate_unchecked(s: AirplaneState, kappa: float, gamma: float, L: float) -> AirplaneState:
    # Stable arc form: displacement = L * sinc(kappa*L/2) along the mid-heading.
    theta1 = s.theta + kappa * L
    cg = math.cos(gamma)
    half = 0.5 * kappa * L
    step = L * cg * _sinc(half)
    mid = s.theta + half
    x1 = s.x + step * math.cos(mid)
    y1 = s.y + step * math.sin(mid)
    z1 = s.z + L * math.sin(gamma)
    return AirplaneState(x=x1, y=y1, z=z1, theta=theta1, kappa=kappa, gamma=gamma)


def propagate(
    s: AirplaneState, kappa: float, gamma: float, L: float, limits: VehicleLimits
) -> AirplaneState:
    """Closed-form integration of the airplane kinematics over arc length L."""
    if L <= 0:
        raise ValueError("arc length must be positive")
    if abs(kappa) > limits.kappa_max * (1 + 1e-12):
        raise ValueError(f"|kappa|={abs(kappa):.6g} exceeds kappa_max={limits.kappa_max:.6g}")
    if abs(gamma) > limits.gamma_max * (1 + 1e-12):
        raise ValueError(f"|gamma|={abs(gamma):.6g} exceeds gamma_max={limits.gamma_max:.6g}")
    return _propagate_unchecked(s, kappa, gamma, L)


def sample_loiter_states(p: LoiterPath, n: int, limits: VehicleLimits) -> list[AirplaneState]:
    """n states uniformly around the loiter, tangent headings per direction."""
    if n < 1:
        raise ValueError("need at least one sample")
    if p.radius < limits.min_turn_radius * (1 - 1e-9):
        raise ValueError("loiter radius below minimum turn radius")
    return [p.state_at_angle(TWO_PI * j / n) for j in range(n)]


def sample_segment_states(seg: PathSegment, spacing: float, include_start: bool = True) -> list[AirplaneState]:
    """States along the segment every `spacing` meters of arc length, end included."""
    n = max(1, int(math.ceil(seg.arc_length / spacing)))
    out = []
    if include_start:
        out.append(seg.state_at(0.0))
    for i in range(1, n):
        out.append(seg.state_at(i * spacing))
    out.append(seg.end)
    return out


def sample_segment_points(seg: PathSegment, spacing: float) -> np.ndarray:
    """Vectorized (N, 3) positions along the segment at the given arc spacing.

    Includes both endpoints; used by band checks, so it must not skip the end.
    """
    n = max(1, int(math.ceil(seg.arc_length / spacing)))
    s = np.empty(n + 1)
    s[:n] = np.arange(n) * spacing
    s[n] = seg.arc_length
    th0 = seg.start.theta
    cg = math.cos(seg.gamma)
    half = 0.5 * seg.kappa * s
    step = s * cg * np.where(np.abs(half) < 1e-8, 1.0 - half * half / 6.0, np.sin(half) / np.where(half == 0, 1.0, half))
    mid = th0 + half
    x = seg.start.x + step * np.cos(mid)
    y = seg.start.y + step * np.sin(mid)
    z = seg.start.z + s * math.sin(seg.gamma)
    return np.column_stack([x, y, z])


def path_length(path: Sequence[PathSegment]) -> float:
    return float(sum(seg.arc_length for seg in path))


def path_end_state(path: Sequence[PathSegment]) -> AirplaneState:
    if not path:
        raise ValueError("empty path")
    return path[-1].end


def closest_point_on_path(
    path: Sequence[PathSegment], p: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Closest point on the path by horizontal distance.

    Returns (point, unit tangent, kappa, progress). Ties between equally close
    candidates are broken toward larger progress, so a query at an arc center
    resolves to the latest point on that arc.
    """
    if not path:
        raise ValueError("empty path")
    px, py = float(p[0]), float(p[1])
    best = None  # (dist, progress, state)
    offset = 0.0
    for seg in path:
        s_local, dist = _closest_on_segment(seg, px, py)
        progress = offset + s_local
        if best is None or dist < best[0] - 1e-9 or (abs(dist - best[0]) <= 1e-9 and progress > best[1]):
            best = (dist, progress, seg.state_at(s_local))
        offset += seg.arc_length
    _, progress, st = best
    return st.position, st.tangent, st.kappa, progress


def _closest_on_segment(seg: PathSegment, px: float, py: float) -> tuple[float, float]:
    """(arc length of the horizontal-distance minimizer, that distance)."""
    x0, y0, th0 = seg.start.x, seg.start.y, seg.start.theta
    cg = math.cos(seg.gamma)
    if abs(seg.kappa) < KAPPA_EPS:
        dx, dy = math.cos(th0), math.sin(th0)
        t = (px - x0) * dx + (py - y0) * dy  # horizontal distance along the line
        t = min(max(t, 0.0), seg.arc_length * cg)
        cxp = x0 + t * dx
        cyp = y0 + t * dy
        s = t / cg if cg > 0 else 0.0
        return s, math.hypot(px - cxp, py - cyp)
    r = cg / seg.kappa  # signed horizontal radius
    cx = x0 - r * math.sin(th0)
    cy = y0 + r * math.cos(th0)
    rho = abs(r)
    dc = math.hypot(px - cx, py - cy)
    sweep = seg.kappa * seg.arc_length  # signed total angle
    if dc < 1e-12:
        # Query at the arc center: every arc point is equidistant; tie rule
        # picks max progress.
        return seg.arc_length, rho
    a0 = math.atan2(y0 - cy, x0 - cx)
    aq = math.atan2(py - cy, px - cx)
    # Angle from arc start to query, measured in the sweep direction.
    da = mod2pi((aq - a0) * math.copysign(1.0, sweep))
    total = abs(sweep)
    candidates = []
    if da <= total:
        candidates.append(da)
        # Multi-turn arcs pass the same angle repeatedly; prefer the last pass.
        k = int((total - da) / TWO_PI)
        if k > 0:
            candidates = [da + k * TWO_PI]
    best_s, best_d = None, None
    for ang in candidates:
        s = ang / total * seg.arc_length if total > 0 else 0.0
        d = abs(dc - rho)
        best_s, best_d = s, d
    for s_end, lbl in ((0.0, "start"), (seg.arc_length, "end")):
        st = seg.state_at(s_end)
        d = math.hypot(px - st.x, py - st.y)
        if best_d is None or d < best_d - 1e-9 or (abs(d - best_d) <= 1e-9 and s_end > best_s):
            best_s, best_d = s_end, d
    return best_s, best_d


# ---------------------------------------------------------------------------
# Dubins car words (horizontal plane), used for goal-circle connections and
# sweep turnarounds. Lengths are in units of the turn radius.
# ---------------------------------------------------------------------------

_WORDS = ("LSL", "RSR", "LSR", "RSL", "RLR", "LRL")


def _dubins_words(alpha: float, beta: float, d: float) -> dict[str, tuple[float, float, float]]:
    sa, sb = math.sin(alpha), math.sin(beta)
    ca, cb = math.cos(alpha), math.cos(beta)
    c_ab = math.cos(alpha - beta)
    out: dict[str, tuple[float, float, float]] = {}

    tmp = 2 + d * d - 2 * c_ab + 2 * d * (sa - sb)
    if tmp >= 0:
        t1 = math.atan2(cb - ca, d + sa - sb)
        out["LSL"] = (mod2pi(-alpha + t1), math.sqrt(tmp), mod2pi(beta - t1))

    tmp = 2 + d * d - 2 * c_ab + 2 * d * (sb - sa)
    if tmp >= 0:
        t1 = math.atan2(ca - cb, d - sa + sb)
        out["RSR"] = (mod2pi(alpha - t1), math.sqrt(tmp), mod2pi(-beta + t1))

    tmp = -2 + d * d + 2 * c_ab + 2 * d * (sa + sb)
    if tmp >= 0:
        p = math.sqrt(tmp)
        t1 = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
        out["LSR"] = (mod2pi(-alpha + t1), p, mod2pi(-mod2pi(beta) + t1))

    tmp = -2 + d * d + 2 * c_ab - 2 * d * (sa + sb)
    if tmp >= 0:
        p = math.sqrt(tmp)
        t1 = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
        out["RSL"] = (mod2pi(alpha - t1), p, mod2pi(beta - t1))

    tmp = (6.0 - d * d + 2 * c_ab + 2 * d * (sa - sb)) / 8.0
    if abs(tmp) <= 1:
        p = mod2pi(TWO_PI - math.acos(tmp))
        t = mod2pi(alpha - math.atan2(ca - cb, d - sa + sb) + mod2pi(p / 2.0))
        out["RLR"] = (t, p, mod2pi(alpha - beta - t + mod2pi(p)))

    tmp = (6.0 - d * d + 2 * c_ab + 2 * d * (sb - sa)) / 8.0
    if abs(tmp) <= 1:
        p = mod2pi(TWO_PI - math.acos(tmp))
        t = mod2pi(-alpha - math.atan2(ca - cb, d + sa - sb) + p / 2.0)
        out["LRL"] = (t, p, mod2pi(mod2pi(beta) - alpha - t + mod2pi(p)))

    return out


def dubins_shortest_word(
    q0: tuple[float, float, float], q1: tuple[float, float, float], radius: float
) -> list[tuple[str, float]] | None:
    """Shortest Dubins car path between 2D poses (x, y, theta).

    Returns [(segment kind 'L'|'S'|'R', horizontal length in meters), ...]
    or None when no word exists (degenerate numerics only; generically one
    of the six words is always valid).
    """
    dx = q1[0] - q0[0]
    dy = q1[1] - q0[1]
    big_d = math.hypot(dx, dy)
    d = big_d / radius
    phi = math.atan2(dy, dx) if big_d > 1e-12 else 0.0
    alpha = mod2pi(q0[2] - phi)
    beta = mod2pi(q1[2] - phi)
    words = _dubins_words(alpha, beta, d)
    if not words:
        return None
    best_word = min(words, key=lambda w: sum(words[w]))
    t, p, q = words[best_word]
    # Normalized lengths are angles for turns and radius-units for straights;
    # both convert to meters by the same radius factor.
    segs = []
    for kind, ln in zip(best_word, (t, p, q)):
        if ln * radius > 1e-9:
            segs.append((kind, ln * radius))
    return segs


def connect_dubins(
    start: AirplaneState,
    goal: tuple[float, float, float, float],
    limits: VehicleLimits,
    radius: float | None = None,
) -> list[PathSegment] | None:
    """Dubins-airplane connection from a state to a 3D pose (x, y, z, theta).

    Solves the horizontal Dubins car problem at the given radius, then climbs
    at the constant flight-path angle that closes the altitude gap. Returns
    None when the required gamma exceeds the limit or no word exists.
    """
    rho = radius if radius is not None else limits.min_turn_radius
    word = dubins_shortest_word(
        (start.x, start.y, start.theta), (goal[0], goal[1], goal[3]), rho
    )
    if word is None:
        return None
    lh_total = sum(ln for _, ln in word)
    dz = goal[2] - start.z
    if lh_total < 1e-9:
        return [] if abs(dz) < 1e-6 else None
    gamma = math.atan2(dz, lh_total)
    if abs(gamma) > limits.gamma_max + 1e-12:
        return None
    cg = math.cos(gamma)
    segs: list[PathSegment] = []
    state = start
    for kind, lh in word:
        if kind == "S":
            kappa = 0.0
        elif kind == "L":
            kappa = cg / rho
        else:
            kappa = -cg / rho
        arc_len = lh / cg
        seg = PathSegment(start=state, arc_length=arc_len, kappa=kappa, gamma=gamma)
        segs.append(seg)
        state = seg.end
    return segs


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def path_to_json(path: Sequence[PathSegment]) -> list[dict]:
    return [
        {
            "start": {"x": seg.start.x, "y": seg.start.y, "z": seg.start.z, "theta": seg.start.theta},
            "kappa": seg.kappa,
            "gamma": seg.gamma,
            "length": seg.arc_length,
        }
        for seg in path
    ]


def path_from_json(records: Sequence[dict]) -> list[PathSegment]:
    out = []
    for rec in records:
        st = rec["start"]
        out.append(
            PathSegment(
                start=AirplaneState(x=st["x"], y=st["y"], z=st["z"], theta=st["theta"],
                                    kappa=rec["kappa"], gamma=rec["gamma"]),
                arc_length=rec["length"],
                kappa=rec["kappa"],
                gamma=rec["gamma"],
            )
        )
    return out


def path_to_geojson(path: Sequence[PathSegment], chord: float = 5.0, properties: dict | None = None) -> dict:
    """GeoJSON LineString of the path sampled every `chord` meters."""
    coords: list[list[float]] = []
    for seg in path:
        pts = sample_segment_points(seg, chord)
        start_idx = 1 if coords else 0  # avoid duplicating segment joints
        coords.extend(pts[start_idx:].tolist())
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": properties or {},
    }


def path_geometry_hash(path: Sequence[PathSegment]) -> str:
    """Stable hash of the path geometry, used as a path id in telemetry."""
    blob = json.dumps(path_to_json(path), sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]
