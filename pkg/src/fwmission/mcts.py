"""Receding-horizon active mapping: 9-primitive action set searched with MCTS.

Actions change curvature incrementally (clamped at the vehicle limit) and
command the flight-path angle absolutely, giving nine fixed-length motion
primitives per decision. The tree stores only visit statistics and vehicle
states; map information is never kept per node. Instead each rollout is
scored once at its leaf from the viewpoints the whole rollout would capture,
normalized by the map quality at the step start so rewards stay in [0, 1).

UCB1 drives selection; unexpanded children are taken first in index order and
the committed action is the most-visited root child.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dubins import AirplaneState, PathSegment, VehicleLimits
from .fisher import (
    CameraIntrinsics,
    FisherAccumulator,
    LandmarkMap,
    Viewpoint,
    camera_rotations,
    make_viewpoint,
)
from .planner import segment_feasible
from .terrain import DemGrid, DistanceBand


class NoSafePrimitive(Exception):
    """All nine primitives violate the band: the FSM must abort mapping."""


@dataclass(frozen=True)
class MappingAction:
    dkappa: float
    gamma_cmd: float


def action_set(limits: VehicleLimits, dkappa: float) -> tuple[MappingAction, ...]:
    """The nine (curvature change, flight-path angle) primitives, index-ordered."""
    return tuple(
        MappingAction(dk, g)
        for dk in (-dkappa, 0.0, dkappa)
        for g in (-limits.gamma_max, 0.0, limits.gamma_max)
    )


@dataclass(frozen=True)
class MctsConfig:
    iterations: int = 2000
    horizon_depth: int = 5
    primitive_length: float = 60.0
    exploration_c: float = math.sqrt(2.0)
    rng_seed: int = 0
    capture_spacing: float = 20.0
    dkappa: float = 1.0 / 160.0  # kappa_max / 2 for the default limits
    mount_pitch_down: float = math.radians(30.0)

    def __post_init__(self):
        if min(self.iterations, self.horizon_depth) < 1 or min(
            self.primitive_length, self.exploration_c, self.capture_spacing, self.dkappa
        ) <= 0:
            raise ValueError("MCTS config values must be positive")


def apply_action(
    s: AirplaneState, a: MappingAction, limits: VehicleLimits, L: float
) -> PathSegment:
    """Primitive from state s: curvature clamped into the vehicle envelope."""
    kappa = max(-limits.kappa_max, min(limits.kappa_max, s.kappa + a.dkappa))
    return PathSegment(start=s, arc_length=L, kappa=kappa, gamma=a.gamma_cmd)


def _segments_feasible(segments: Sequence[PathSegment], dem: DemGrid, band: DistanceBand) -> np.ndarray:
    """Batched band feasibility for equal-length segments (one check call)."""
    from .dubins import sample_segment_points
    from .terrain import band_check_points

    pts = np.stack([sample_segment_points(seg, 2.0) for seg in segments])
    k, n, _ = pts.shape
    flat = pts.reshape(-1, 3)
    inside = dem.in_hull(flat[:, 0], flat[:, 1])
    ok = np.zeros(k * n, dtype=bool)
    if inside.any():
        ok[inside] = band_check_points(dem, band, flat[inside])
    return ok.reshape(k, n).all(axis=1)


def enumerate_primitives(
    s: AirplaneState,
    limits: VehicleLimits,
    L: float,
    dem: DemGrid,
    band: DistanceBand,
    dkappa: float,
) -> list[tuple[MappingAction, PathSegment, bool]]:
    """All nine primitives with their band-safety verdicts.

    Safety uses the same 2 m-spaced decision as validate_path; unsafe
    primitives are excluded from tree expansion by the caller.
    """
    actions = action_set(limits, dkappa)
    segs = [apply_action(s, a, limits, L) for a in actions]
    safe = _segments_feasible(segs, dem, band)
    return [(a, seg, bool(ok)) for a, seg, ok in zip(actions, segs, safe)]


def rollout_views(
    segments: Sequence[PathSegment],
    camera: CameraIntrinsics,
    capture_spacing: float,
    mount_pitch_down: float = math.radians(30.0),
    t0: float = 0.0,
) -> list[Viewpoint]:
    """Camera poses every capture_spacing meters along the chained segments."""
    if capture_spacing <= 0:
        raise ValueError("capture spacing must be positive")
    total = sum(seg.arc_length for seg in segments)
    views = []
    s_next = capture_spacing
    bounds = []
    off = 0.0
    for seg in segments:
        bounds.append((off, seg))
        off += seg.arc_length
    while s_next <= total + 1e-9:
        for off, seg in reversed(bounds):
            if s_next >= off - 1e-9:
                st = seg.state_at(s_next - off)
                break
        views.append(
            make_viewpoint(
                (st.x, st.y, st.z), st.theta, st.gamma, camera,
                mount_pitch_down=mount_pitch_down, t=t0 + s_next,
            )
        )
        s_next += capture_spacing
    return views


def _capture_poses(
    segments: Sequence[PathSegment], spacing: float, mount_pitch_down: float
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized capture poses along chained segments: (positions, rotations)."""
    total = sum(seg.arc_length for seg in segments)
    s_caps = np.arange(spacing, total + 1e-9, spacing)
    v = s_caps.shape[0]
    if v == 0:
        return np.empty((0, 3)), np.empty((0, 3, 3))
    pos = np.empty((v, 3))
    th = np.empty(v)
    gm = np.empty(v)
    off = 0.0
    done = np.zeros(v, dtype=bool)
    for seg in segments:
        sel = ~done & (s_caps <= off + seg.arc_length + 1e-9)
        if sel.any():
            s = s_caps[sel] - off
            th0 = seg.start.theta
            half = 0.5 * seg.kappa * s
            sinc = np.where(np.abs(half) < 1e-8, 1.0 - half * half / 6.0,
                            np.sin(half) / np.where(half == 0, 1.0, half))
            step = s * math.cos(seg.gamma) * sinc
            mid = th0 + half
            pos[sel, 0] = seg.start.x + step * np.cos(mid)
            pos[sel, 1] = seg.start.y + step * np.sin(mid)
            pos[sel, 2] = seg.start.z + s * math.sin(seg.gamma)
            th[sel] = th0 + seg.kappa * s
            gm[sel] = seg.gamma
            done |= sel
        off += seg.arc_length
    return pos, camera_rotations(th, gm, mount_pitch_down)


@dataclass
class MctsNode:
    """Search-tree node: statistics and the vehicle state only."""

    state: AirplaneState
    action_index: int | None = None
    segment: PathSegment | None = None
    depth: int = 0
    visit_count: int = 0
    total_reward: float = 0.0
    own_rollouts: int = 0
    children: list["MctsNode"] = field(default_factory=list)
    untried: list[tuple[int, PathSegment]] | None = None  # safe, unexpanded actions
    q_before: float = 0.0  # set on the root only

    @property
    def mean_reward(self) -> float:
        return self.total_reward / self.visit_count if self.visit_count else 0.0


@dataclass
class MctsStats:
    root_visits: int
    q_before: float
    children: list[dict]


def mcts_plan(
    s: AirplaneState,
    lmap: LandmarkMap,
    acquired_views: Sequence[Viewpoint],
    cfg: MctsConfig,
    dem: DemGrid,
    band: DistanceBand,
    limits: VehicleLimits,
    camera: CameraIntrinsics,
    base: FisherAccumulator | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[MappingAction, MctsStats]:
    """One receding-horizon planning step; deterministic given the seed.

    `base` may carry the accumulated information of `acquired_views` to skip
    rebuilding it; rewards are computed per rollout as the normalized map
    quality drop of the rollout's viewpoints.
    """
    if base is None:
        base = FisherAccumulator(lmap)
        base.add_views(acquired_views, dem)
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    actions = action_set(limits, cfg.dkappa)
    root = _search(s, base, cfg, dem, band, limits, camera, rng, actions)
    q0 = root.q_before
    best = max(
        root.children,
        key=lambda ch: (ch.visit_count, ch.mean_reward, -ch.action_index),
    )
    stats = MctsStats(
        root_visits=root.visit_count,
        q_before=q0,
        children=[
            {
                "action": ch.action_index,
                "dkappa": actions[ch.action_index].dkappa,
                "gamma": actions[ch.action_index].gamma_cmd,
                "visits": ch.visit_count,
                "mean_reward": ch.mean_reward,
            }
            for ch in sorted(root.children, key=lambda ch: ch.action_index)
        ],
    )
    return actions[best.action_index], stats


def _search(
    s: AirplaneState,
    base: FisherAccumulator,
    cfg: MctsConfig,
    dem: DemGrid,
    band: DistanceBand,
    limits: VehicleLimits,
    camera: CameraIntrinsics,
    rng: np.random.Generator,
    actions: tuple[MappingAction, ...],
) -> MctsNode:
    q0 = base.q_value()

    def safe_children(state: AirplaneState) -> list[tuple[int, PathSegment]]:
        prims = enumerate_primitives(state, limits, cfg.primitive_length, dem, band, cfg.dkappa)
        return [(i, seg) for i, (_, seg, ok) in enumerate(prims) if ok]

    root = MctsNode(state=s)
    root.untried = safe_children(s)
    root.q_before = q0
    if not root.untried:
        raise NoSafePrimitive("no band-feasible primitive at the current state")

    c = cfg.exploration_c
    for _ in range(cfg.iterations):
        node = root
        path_nodes = [root]
        segments: list[PathSegment] = []
        # Selection: descend fully expanded nodes by UCB1.
        while node.depth < cfg.horizon_depth and node.untried is not None \
                and not node.untried and node.children:
            ln_n = math.log(node.visit_count)
            best, best_score = None, -math.inf
            for ch in node.children:
                score = ch.mean_reward + c * math.sqrt(ln_n / ch.visit_count)
                if score > best_score + 1e-15:
                    best, best_score = ch, score
            node = best
            path_nodes.append(node)
            segments.append(node.segment)
        # Expansion: first untried child in index order.
        if node.depth < cfg.horizon_depth and node.untried:
            idx, seg = node.untried.pop(0)
            child = MctsNode(
                state=seg.end, action_index=idx, segment=seg, depth=node.depth + 1
            )
            child.untried = safe_children(child.state) if child.depth < cfg.horizon_depth else []
            node.children.append(child)
            node = child
            path_nodes.append(node)
            segments.append(seg)
        # Rollout: uniform over safe actions out to the horizon.
        state = node.state
        depth = node.depth
        while depth < cfg.horizon_depth:
            seg = _random_safe_segment(state, rng, actions, limits, cfg, dem, band)
            if seg is None:
                break
            segments.append(seg)
            state = seg.end
            depth += 1
        # Deferred batched reward: one evaluation per rollout.
        if q0 > 0 and segments:
            pos, rot = _capture_poses(segments, cfg.capture_spacing, cfg.mount_pitch_down)
            reward = (q0 - base.preview_q_poses(pos, rot, camera, dem)) / q0
        else:
            reward = 0.0
        node.own_rollouts += 1
        for n in path_nodes:
            n.visit_count += 1
            n.total_reward += reward
    return root


def _random_safe_segment(state, rng, actions, limits, cfg, dem, band):
    """Uniform draw over the safe primitives at this state."""
    segs = [apply_action(state, a, limits, cfg.primitive_length) for a in actions]
    safe = np.nonzero(_segments_feasible(segs, dem, band))[0]
    if safe.size == 0:
        return None
    return segs[safe[int(rng.integers(safe.size))]]


class MappingSession:
    """Receding-horizon mapping driver: plan, commit, accumulate views.

    The session owns the acquired-view accumulator. The closed-loop simulator
    records the actually-captured poses through record_captures; headless use
    (tests, quick studies) can call step() which assumes nominal capture.
    """

    def __init__(
        self,
        dem: DemGrid,
        band: DistanceBand,
        limits: VehicleLimits,
        lmap: LandmarkMap,
        camera: CameraIntrinsics,
        cfg: MctsConfig,
    ):
        self.dem = dem
        self.band = band
        self.limits = limits
        self.lmap = lmap
        self.camera = camera
        self.cfg = cfg
        self.acc = FisherAccumulator(lmap)
        self.acquired: list[Viewpoint] = []
        self.committed: list[PathSegment] = []
        self.trace: list[dict] = []
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.step_count = 0

    def q_value(self) -> float:
        return self.acc.q_value()

    def coverage(self, k: int = 2) -> float:
        return self.acc.coverage_fraction(k)

    def plan_next(self, state: AirplaneState) -> PathSegment:
        """Plan and commit the next primitive from the given state.

        The committed primitive must leave an escape: among the search's
        root children (best first), the first whose endpoint still has a
        safe successor wins. This one-step commit check blocks most of the
        dead-ends a purely receding-horizon policy can steer into.
        """
        action, stats = mcts_plan(
            state, self.lmap, self.acquired, self.cfg, self.dem, self.band,
            self.limits, self.camera, base=self.acc, rng=self.rng,
        )
        actions = action_set(self.limits, self.cfg.dkappa)
        ranked = sorted(stats.children,
                        key=lambda ch: (ch["visits"], ch["mean_reward"]), reverse=True)
        chosen = None
        for ch in ranked:
            cand = apply_action(state, actions[ch["action"]], self.limits,
                                self.cfg.primitive_length)
            nxt = [apply_action(cand.end, a, self.limits, self.cfg.primitive_length)
                   for a in actions]
            if _segments_feasible(nxt, self.dem, self.band).any():
                chosen = (actions[ch["action"]], cand)
                break
        if chosen is None:
            chosen = (action, apply_action(state, action, self.limits,
                                           self.cfg.primitive_length))
        action, seg = chosen
        self.committed.append(seg)
        self.trace.append(
            {
                "step": self.step_count,
                "chosen_action": {"dkappa": action.dkappa, "gamma": action.gamma_cmd},
                "root_visits": stats.root_visits,
                "children": stats.children,
                "q_before": stats.q_before,
            }
        )
        self.step_count += 1
        return seg

    def record_captures(self, views: Sequence[Viewpoint]) -> None:
        """Fold actually-captured poses into the acquired set."""
        if not views:
            return
        self.acc.add_views(views, self.dem)
        self.acquired.extend(views)
        if self.trace:
            self.trace[-1]["q_after"] = self.acc.q_value()

    def step(self, state: AirplaneState) -> tuple[PathSegment, list[Viewpoint]]:
        """Headless step: commit the best primitive and its nominal captures."""
        seg = self.plan_next(state)
        views = rollout_views(
            [seg], self.camera, self.cfg.capture_spacing, self.cfg.mount_pitch_down,
            t0=float(self.step_count) * 1000.0,
        )
        self.record_captures(views)
        return seg, views
