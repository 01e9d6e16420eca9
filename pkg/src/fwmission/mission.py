"""Mission configuration, the closed-loop mission runner, and evaluation.

A mission starts in Hold on the home loiter. Scripted or operator commands
drive the FSM; every state switch first produces a validated reference
(plan, lead-in arc, rally selection) so the simulator always tracks a
band-feasible path. During Mapping the receding-horizon planner extends the
reference one primitive ahead of the vehicle, and actually-captured poses
(not the nominal ones) feed the acquired-view set.

run_comparison flies the active mapper and the boustrophedon baseline over
the same ROI with identical seeds and wind, and reports paired uncertainty
and coverage time series.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .coverage import plan_sweep, sweep_to_path
from .dubins import (
    AirplaneState,
    LoiterDirection,
    LoiterPath,
    PathSegment,
    VehicleLimits,
    mod2pi,
    path_geometry_hash,
    path_to_geojson,
)
from .fisher import (
    CameraIntrinsics,
    FisherAccumulator,
    LandmarkMap,
    Viewpoint,
    landmarks_csv,
    make_viewpoint,
    seed_landmarks,
    uncertainty_csv,
    views_csv,
)
from .fsm import (
    CommandKind,
    MissionCommand,
    MissionContext,
    MissionState,
    MissionTag,
    Rejection,
    TransitPayload,
    handle_command,
    handle_completion,
)
from .mcts import MappingSession, MctsConfig, NoSafePrimitive
from .planner import (
    InvalidGoal,
    NoPathFound,
    PlanQuery,
    plan_loiter_to_loiter,
    plan_state_to_loiter,
    sample_rally_points,
    validate_path,
)
from .simulator import ReferencePath, SimConfig, Simulator, tracking_errors
from .terrain import DemGrid, DistanceBand, LoiterMask, build_loiter_mask, load_dem

TELEMETRY_DECIMATION = 2  # 10 Hz sim -> 5 Hz telemetry


class ConfigError(ValueError):
    """Mission configuration is malformed or inconsistent."""


@dataclass
class MissionConfig:
    dem_path: str
    band: DistanceBand
    limits: VehicleLimits
    sim: SimConfig
    home: tuple[float, float]
    home_direction: LoiterDirection = LoiterDirection.CCW
    loiter_radius: float = 80.0
    roi: list[tuple[float, float]] | None = None
    landmark_spacing: float = 15.0
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    mount_pitch_down: float = math.radians(30.0)
    mcts: MctsConfig = field(default_factory=MctsConfig)
    plan_time_budget: float = 5.0
    rally_radius: float = 300.0
    rally_samples: int = 20
    sweep_direction: float = 0.0
    sweep_spacing: float = 45.0
    seed: int = 0

    @staticmethod
    def from_json(data: dict, base_dir: Path | None = None) -> "MissionConfig":
        try:
            dem_path = data["dem"]
            if base_dir is not None and not Path(dem_path).is_absolute():
                dem_path = str(base_dir / dem_path)
            band = DistanceBand(**data.get("band", {}))
            limits = VehicleLimits(**data.get("limits", {}))
            sim_raw = dict(data.get("sim", {}))
            if "wind_mean" in sim_raw:
                sim_raw["wind_mean"] = tuple(sim_raw["wind_mean"])
            sim = SimConfig(**sim_raw)
            cam_raw = dict(data.get("camera", {}))
            mount = math.radians(cam_raw.pop("mount_pitch_down_deg", 30.0))
            for deg_key, key in (("hfov_deg", "hfov"), ("vfov_deg", "vfov"),
                                 ("incidence_limit_deg", "incidence_limit")):
                if deg_key in cam_raw:
                    cam_raw[key] = math.radians(cam_raw.pop(deg_key))
            camera = CameraIntrinsics(**cam_raw)
            mcts_raw = dict(data.get("mcts", {}))
            mcts_raw.setdefault("mount_pitch_down", mount)
            mcts = MctsConfig(**mcts_raw)
            roi = [tuple(p) for p in data["roi"]] if "roi" in data else None
            return MissionConfig(
                dem_path=dem_path,
                band=band,
                limits=limits,
                sim=sim,
                home=tuple(data["home"]),
                home_direction=LoiterDirection(data.get("home_direction", "CCW")),
                loiter_radius=float(data.get("loiter_radius", 80.0)),
                roi=roi,
                landmark_spacing=float(data.get("landmark_spacing", 15.0)),
                camera=camera,
                mount_pitch_down=mount,
                mcts=mcts,
                plan_time_budget=float(data.get("plan_time_budget", 5.0)),
                rally_radius=float(data.get("rally_radius", 300.0)),
                rally_samples=int(data.get("rally_samples", 20)),
                sweep_direction=float(data.get("sweep_direction", 0.0)),
                sweep_spacing=float(data.get("sweep_spacing", 45.0)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad mission config: {e}")

    @staticmethod
    def load(path: str | Path) -> "MissionConfig":
        p = Path(path)
        try:
            data = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        return MissionConfig.from_json(data, base_dir=p.parent)


@dataclass
class World:
    """Static mission environment shared by all runs of one configuration."""

    cfg: MissionConfig
    dem: DemGrid
    mask: LoiterMask
    lmap: LandmarkMap | None

    @staticmethod
    def build(cfg: MissionConfig) -> "World":
        try:
            dem = load_dem(cfg.dem_path)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot load DEM {cfg.dem_path}: {e}")
        mask = build_loiter_mask(dem, cfg.band, cfg.loiter_radius)
        lmap = None
        if cfg.roi:
            lmap = seed_landmarks(dem, cfg.roi, cfg.landmark_spacing)
        if not mask.is_valid_at(*cfg.home):
            raise ConfigError(f"home {cfg.home} is not a valid loiter position")
        return World(cfg, dem, mask, lmap)

    def home_loiter(self) -> LoiterPath:
        alt = self.mask.altitude_at(*self.cfg.home)
        return LoiterPath((self.cfg.home[0], self.cfg.home[1], alt),
                          self.cfg.loiter_radius, self.cfg.home_direction)


class CoverageSession:
    """Mapping payload for the sweep baseline: fixed path, nadir captures."""

    mount_pitch_down = math.radians(90.0)

    def __init__(self, world: World, path: list[PathSegment]):
        self.path = path
        self.acc = FisherAccumulator(world.lmap)
        self.acquired: list[Viewpoint] = []
        self.world = world

    def q_value(self) -> float:
        return self.acc.q_value()

    def coverage(self, k: int = 2) -> float:
        return self.acc.coverage_fraction(k)

    def record_captures(self, views: Sequence[Viewpoint]) -> None:
        if views:
            self.acc.add_views(views, self.world.dem)
            self.acquired.extend(views)


@dataclass
class ScriptStep:
    when_t: float | None
    when_fsm: str | None
    command: dict

    def due(self, t: float, fsm_tag: MissionTag) -> bool:
        if self.when_t is not None and t < self.when_t:
            return False
        if self.when_fsm is not None and fsm_tag.value != self.when_fsm:
            return False
        return True


def parse_script(data: list[dict]) -> list[ScriptStep]:
    steps = []
    for raw in data:
        when = raw.get("when", {})
        steps.append(ScriptStep(
            when_t=when.get("t"),
            when_fsm=when.get("fsm"),
            command=raw["cmd"],
        ))
    return steps


def command_from_frame(frame: dict) -> MissionCommand:
    kind = frame.get("cmd")
    if kind == "navigate":
        goal = frame.get("goal")
        if not (isinstance(goal, (list, tuple)) and len(goal) == 2):
            raise ValueError("navigate needs goal [x, y]")
        return MissionCommand(CommandKind.NAVIGATE, (float(goal[0]), float(goal[1])))
    mapping = {
        "start_mapping": CommandKind.START_MAPPING,
        "abort": CommandKind.ABORT,
        "return": CommandKind.RETURN,
    }
    if kind not in mapping:
        raise ValueError(f"unknown command {kind!r}")
    return MissionCommand(mapping[kind])


class MissionRunner:
    """Owns all mutable mission state and advances it one sim tick at a time."""

    def __init__(self, world: World, seed: int | None = None):
        self.world = world
        cfg = world.cfg
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        sim_cfg = SimConfig(
            dt=cfg.sim.dt, wind_mean=cfg.sim.wind_mean, gust_std=cfg.sim.gust_std,
            gust_tau=cfg.sim.gust_tau, lookahead=cfg.sim.lookahead,
            k_p=cfg.sim.k_p, k_d=cfg.sim.k_d, rng_seed=self.seed,
        )
        home = world.home_loiter()
        self.fsm = MissionState(MissionTag.HOLD, home)
        self.reference = ReferencePath(loiter=home)
        self.sim = Simulator(home.state_at_angle(0.0), sim_cfg, cfg.limits)
        self.session: MappingSession | CoverageSession | None = None
        self.events: list[dict] = []
        self.flown: list[tuple[str, Any]] = [("loiter", home)]
        self._plan_counter = 0
        self._pending_reference: ReferencePath | None = None
        self._pending_progress: float | None = None
        self.metrics_series: list[tuple[float, float, float]] = []  # t, q, coverage
        self._last_metric_t = -math.inf
        self.telemetry_seq = 0
        self.coverage_path: list[PathSegment] | None = None

    def enable_coverage_mode(self, path: list[PathSegment]) -> None:
        """Mapping commands fly this fixed sweep instead of the MCTS planner."""
        self.coverage_path = path

    # -- planning context -------------------------------------------------

    def _next_seed(self) -> int:
        self._plan_counter += 1
        return self.seed * 100_003 + self._plan_counter

    def _current_ref_state(self) -> AirplaneState:
        pos = np.array([self.sim.state.x, self.sim.state.y, self.sim.state.z])
        r = self.reference.command_at(pos, self.sim.progress)
        th = math.atan2(float(r.t[1]), float(r.t[0]))
        gamma = math.asin(max(-1.0, min(1.0, float(r.t[2]))))
        return AirplaneState(float(r.p[0]), float(r.p[1]), float(r.p[2]),
                             th, kappa=r.kappa, gamma=gamma)

    def _lead_in_arc(self, loiter: LoiterPath, depart: AirplaneState) -> list[PathSegment]:
        """Arc along the loiter from the vehicle's reference angle to departure."""
        now = self._current_ref_state()
        phi_now = loiter.angle_of(now.x, now.y)
        phi_dep = loiter.angle_of(depart.x, depart.y)
        sign = 1.0 if loiter.direction == LoiterDirection.CCW else -1.0
        d_ang = mod2pi((phi_dep - phi_now) * sign)
        arc_len = d_ang * loiter.radius
        if arc_len < 1.0:
            return []
        start = loiter.state_at_angle(phi_now)
        return [PathSegment(start, arc_len, loiter.kappa, 0.0)]

    def _goal_loiter(self, center: tuple[float, float]) -> LoiterPath:
        if not self.world.mask.is_valid_at(center[0], center[1]):
            raise InvalidGoal(f"goal {center} outside the valid-loiter region")
        alt = self.world.mask.altitude_at(center[0], center[1])
        return LoiterPath((center[0], center[1], alt), self.cfg.loiter_radius,
                          LoiterDirection.CCW)

    def _plan_transit(self, start_loiter: LoiterPath, goal: LoiterPath) -> TransitPayload:
        q = PlanQuery(start=start_loiter, goals=(goal,), band=self.cfg.band,
                      time_budget=self.cfg.plan_time_budget, rng_seed=self._next_seed())
        result = plan_loiter_to_loiter(q, self.world.dem, self.world.mask, self.cfg.limits)
        lead = self._lead_in_arc(start_loiter, result.path[0].start) if result.path else []
        segments = lead + list(result.path)
        if segments:
            self._pending_reference = ReferencePath(segments=segments)
        else:
            # Identity query: stay on the circle, just adopt the goal direction.
            self._pending_reference = ReferencePath(
                loiter=LoiterPath(goal.center, goal.radius, result.goal_direction))
        self.events.append({
            "t": round(self.sim.t, 3), "event": "plan",
            "goal": list(goal.center[:2]), "cost": result.cost,
            "direction": result.goal_direction.value,
        })
        return TransitPayload(tuple(segments) or tuple(result.path), goal,
                              result.goal_direction)

    def _plan_navigate(self, loiter: LoiterPath, goal_xy: tuple[float, float]) -> TransitPayload:
        return self._plan_transit(loiter, self._goal_loiter(goal_xy))

    def _plan_return(self, loiter: LoiterPath) -> TransitPayload:
        return self._plan_transit(loiter, self.world.home_loiter())

    def _plan_abort(self) -> TransitPayload:
        end = self._segment_end_state()
        rho = self.cfg.rally_radius
        seed = self._next_seed()
        rallies = sample_rally_points(end, self.world.mask, rho, self.cfg.rally_samples, seed)
        if not rallies:
            rallies = sample_rally_points(end, self.world.mask, 2 * rho,
                                          self.cfg.rally_samples, seed + 1)
        if not rallies:
            raise NoPathFound("no rally points inside the escalated radius")
        q = PlanQuery(start=end, goals=tuple(rallies), band=self.cfg.band,
                      time_budget=self.cfg.plan_time_budget, rng_seed=self._next_seed())
        result = plan_state_to_loiter(q, self.world.dem, self.world.mask, self.cfg.limits)
        chosen = rallies[result.goal_index]
        pre = self._segments_until_current_end()
        segments = pre + list(result.path)
        ref = ReferencePath(segments=segments) if segments else ReferencePath(
            loiter=LoiterPath(chosen.center, chosen.radius, result.goal_direction))
        self._pending_reference = ref
        if segments:
            # keep the already-flown arc length so progress stays continuous
            self._pending_progress = self._progress_within_current_segment()
        self.events.append({
            "t": round(self.sim.t, 3), "event": "abort_plan",
            "rally": list(chosen.center[:2]), "cost": result.cost,
        })
        return TransitPayload(tuple(segments), chosen, result.goal_direction)

    def _begin_mapping(self, loiter: LoiterPath):
        if self.world.lmap is None:
            raise ConfigError("mapping requires an ROI with landmarks")
        if self.coverage_path is not None:
            from .dubins import connect_dubins
            from .planner import path_feasible

            start = self.coverage_path[0].start
            now = self._current_ref_state()
            lead = connect_dubins(now, (start.x, start.y, start.z, start.theta),
                                  self.cfg.limits)
            if lead is None or not path_feasible(lead, self.world.dem, self.cfg.band):
                raise NoPathFound("no feasible approach to the sweep start")
            session = CoverageSession(self.world, self.coverage_path)
            self._pending_reference = ReferencePath(segments=lead + self.coverage_path)
            self.session = session
            return session
        session = MappingSession(
            self.world.dem, self.cfg.band, self.cfg.limits, self.world.lmap,
            self.cfg.camera, self._session_mcts_cfg(),
        )
        root = self._current_ref_state()
        first = session.plan_next(root)  # raises NoSafePrimitive when boxed in
        second = session.plan_next(first.end)
        self._pending_reference = ReferencePath(segments=[first, second])
        self.session = session
        return session

    def _session_mcts_cfg(self) -> MctsConfig:
        m = self.cfg.mcts
        return MctsConfig(
            iterations=m.iterations, horizon_depth=m.horizon_depth,
            primitive_length=m.primitive_length, exploration_c=m.exploration_c,
            rng_seed=self._next_seed(), capture_spacing=m.capture_spacing,
            dkappa=m.dkappa, mount_pitch_down=m.mount_pitch_down,
        )

    def _segment_index_at(self, progress: float) -> int:
        off = 0.0
        for i, seg in enumerate(self.reference.segments):
            if progress < off + seg.arc_length or i == len(self.reference.segments) - 1:
                return i
            off += seg.arc_length
        return 0

    def _segment_end_state(self) -> AirplaneState:
        if self.reference.loiter is not None:
            # On a loiter the "segment" is the circle; abort from the current
            # reference point, which is always on the safe circle.
            return self._current_ref_state()
        idx = self._segment_index_at(self.sim.progress)
        return self.reference.segments[idx].end

    def _segments_until_current_end(self) -> list[PathSegment]:
        if self.reference.loiter is not None:
            return []
        idx = self._segment_index_at(self.sim.progress)
        return [self.reference.segments[idx]]

    def _progress_within_current_segment(self) -> float:
        idx = self._segment_index_at(self.sim.progress)
        off = sum(seg.arc_length for seg in self.reference.segments[:idx])
        return max(0.0, self.sim.progress - off)

    def context(self) -> MissionContext:
        return MissionContext(
            plan_navigate=self._plan_navigate,
            plan_return=self._plan_return,
            plan_abort=self._plan_abort,
            begin_mapping=self._begin_mapping,
        )

    # -- command handling --------------------------------------------------

    def apply_command(self, cmd: MissionCommand) -> MissionState | Rejection:
        self._pending_reference = None
        self._pending_progress = None
        out = handle_command(self.fsm, cmd, self.context())
        if isinstance(out, Rejection):
            self.events.append({
                "t": round(self.sim.t, 3), "event": "rejected",
                "cmd": cmd.kind.value, "reason": out.reason, "detail": out.detail,
            })
            self._pending_reference = None
            return out
        self.fsm = out
        if out.tag != MissionTag.MAPPING:
            self.session = None
        if self._pending_reference is not None:
            self.reference = self._pending_reference
            self.sim.progress = self._pending_progress or 0.0
            self._log_reference()
        self.events.append({
            "t": round(self.sim.t, 3), "event": "state",
            "state": out.tag.value, "cmd": cmd.kind.value,
        })
        # Identity transits (already on the goal circle) complete immediately.
        if out.tag in (MissionTag.NAVIGATE, MissionTag.ABORT, MissionTag.RETURN) \
                and self.reference.loiter is not None:
            self.fsm = handle_completion(self.fsm)
            self.events.append({"t": round(self.sim.t, 3), "event": "state",
                                "state": "Hold", "cmd": "completed"})
        return out

    def _log_reference(self) -> None:
        if self.reference.loiter is not None:
            self.flown.append(("loiter", self.reference.loiter))
        else:
            self.flown.append(("path", list(self.reference.segments)))

    # -- stepping ------------------------------------------------------------

    def step(self) -> None:
        """One sim tick: track, capture, extend mapping, detect completion."""
        tag = self.fsm.tag
        self.sim.step(self.reference, tag.value)
        if tag == MissionTag.MAPPING and self.session is not None:
            spacing = self.cfg.mcts.capture_spacing
            mount = getattr(self.session, "mount_pitch_down", None)
            if mount is None:
                mount = self.cfg.mcts.mount_pitch_down
            poses = self.sim.take_captures(spacing)
            if poses:
                views = [
                    make_viewpoint((p.x, p.y, p.z), p.theta, p.gamma, self.cfg.camera,
                                   mount_pitch_down=mount, t=self.sim.t)
                    for p in poses
                ]
                self.session.record_captures(views)
            if isinstance(self.session, MappingSession):
                horizon = 1.5 * self.cfg.mcts.primitive_length
                if self.reference.remaining(self.sim.progress) < horizon:
                    try:
                        seg = self.session.plan_next(self.reference.segments[-1].end)
                        self.reference.append(seg)
                        self.flown[-1][1].append(seg)
                    except NoSafePrimitive:
                        self.events.append({"t": round(self.sim.t, 3),
                                            "event": "mapping_boxed_in"})
                        self.apply_command(MissionCommand(CommandKind.ABORT))
            else:
                if self.reference.is_finished(self.sim.progress):
                    self.events.append({"t": round(self.sim.t, 3),
                                        "event": "sweep_complete"})
                    self.apply_command(MissionCommand(CommandKind.ABORT))
        elif tag in (MissionTag.NAVIGATE, MissionTag.ABORT, MissionTag.RETURN):
            if self.reference.is_finished(self.sim.progress):
                done = handle_completion(self.fsm)
                self.fsm = done
                reached = done.hold_loiter
                self.reference = ReferencePath(loiter=reached)
                self.sim.progress = 0.0
                self._log_reference()
                self.events.append({"t": round(self.sim.t, 3), "event": "state",
                                    "state": "Hold", "cmd": "completed"})
        self._record_metrics()

    def _record_metrics(self) -> None:
        if self.sim.t - self._last_metric_t < 0.999:
            return
        self._last_metric_t = self.sim.t
        q, cov = self.current_quality()
        self.metrics_series.append((round(self.sim.t, 1), q, cov))

    def current_quality(self) -> tuple[float, float]:
        if self.session is not None:
            return self.session.q_value(), self.session.coverage()
        if self.metrics_series:
            return self.metrics_series[-1][1], self.metrics_series[-1][2]
        if self.world.lmap is not None:
            return 3.0 / self.world.lmap.prior_info, 0.0
        return math.nan, 0.0

    def telemetry_frame(self) -> dict:
        self.telemetry_seq += 1
        q, cov = self.current_quality()
        s = self.sim.state
        if self.reference.loiter is not None:
            path_id = "loiter"
        else:
            path_id = path_geometry_hash(self.reference.segments)
        return {
            "v": 1,
            "type": "telemetry",
            "seq": self.telemetry_seq,
            "t": round(self.sim.t, 3),
            "pose": [round(s.x, 3), round(s.y, 3), round(s.z, 3), round(s.theta, 6)],
            "fsm": self.fsm.tag.value,
            "path_id": path_id,
            "q": q,
            "coverage": cov,
            "distance_m": round(self.sim.distance_flown, 1),
        }

    # -- reference audit -----------------------------------------------------

    def reference_violations(self) -> int:
        """Band violations across every reference piece flown, at 2 m."""
        total = 0
        seen_loiters = set()
        for kind, payload in self.flown:
            if kind == "loiter":
                key = (round(payload.center[0], 3), round(payload.center[1], 3),
                       round(payload.center[2], 3), payload.radius)
                if key in seen_loiters:
                    continue
                seen_loiters.add(key)
                circ = 2 * math.pi * payload.radius
                n = max(8, int(circ / 2.0))
                segs = [PathSegment(payload.state_at_angle(0.0), circ, payload.kappa, 0.0)]
            else:
                segs = payload
                if not segs:
                    continue
            report = validate_path(segs, self.world.dem, self.cfg.band, self.cfg.limits)
            total += len([v for v in report.violations if v[1] in ("below_band", "above_band", "out_of_hull")])
        return total

    def actual_violations(self) -> int:
        rows = self.sim.record.rows
        band = self.cfg.band
        return sum(
            1 for r in rows
            if not math.isnan(r.dist_to_terrain)
            and not (band.d_min <= r.dist_to_terrain <= band.d_max)
        )


# ---------------------------------------------------------------------------
# Mission execution
# ---------------------------------------------------------------------------


@dataclass
class MissionResult:
    runner: MissionRunner
    report: dict
    method: str


def run_scripted(
    runner: MissionRunner,
    script: list[ScriptStep],
    max_duration: float,
    method: str = "active",
    settle_after_script: float = 10.0,
    command_sink=None,
) -> MissionResult:
    """Drive the runner with a command script until done or the time cap."""
    idx = 0
    script_done_t: float | None = None
    states_visited = {runner.fsm.tag.value}
    while runner.sim.t < max_duration:
        if idx < len(script) and script[idx].due(runner.sim.t, runner.fsm.tag):
            cmd_frame = script[idx].command
            idx += 1
            try:
                cmd = command_from_frame(cmd_frame)
            except ValueError as e:
                runner.events.append({"t": round(runner.sim.t, 3), "event": "bad_command",
                                      "detail": str(e)})
                continue
            out = runner.apply_command(cmd)
            if command_sink is not None:
                command_sink(cmd_frame, out)
            states_visited.add(runner.fsm.tag.value)
        runner.step()
        states_visited.add(runner.fsm.tag.value)
        if idx >= len(script) and runner.fsm.tag == MissionTag.HOLD:
            if script_done_t is None:
                script_done_t = runner.sim.t
            elif runner.sim.t - script_done_t >= settle_after_script:
                break
        else:
            script_done_t = None
    report = build_report(runner, method, sorted(states_visited))
    return MissionResult(runner, report, method)


def build_report(runner: MissionRunner, method: str, states_visited: list[str]) -> dict:
    runner.sim.record.fill_terrain_distances(
        runner.world.dem, runner.cfg.band.d_max + 2 * runner.world.dem.cellsize
    )
    summary = tracking_errors(runner.sim.record) if len(runner.sim.record) else None
    q_series = [[t, q] for t, q, _ in runner.metrics_series]
    cov_series = [[t, c] for t, _, c in runner.metrics_series]
    return {
        "v": 1,
        "method": method,
        "seed": runner.seed,
        "duration_s": round(runner.sim.t, 1),
        "distance_m": round(runner.sim.distance_flown, 1),
        "q_series": q_series,
        "coverage_series": cov_series,
        "final_q": q_series[-1][1] if q_series else None,
        "final_coverage": cov_series[-1][1] if cov_series else None,
        "tracking": {
            "mean_abs": summary.mean_abs if summary else None,
            "max_abs": summary.max_abs if summary else None,
        },
        "band_violations": {
            "reference": runner.reference_violations(),
            "actual": runner.actual_violations(),
        },
        "fsm_states_visited": states_visited,
    }


def mission_geojson(runner: MissionRunner) -> dict:
    features = []
    if runner.cfg.roi:
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon",
                         "coordinates": [[list(p) for p in runner.cfg.roi] + [list(runner.cfg.roi[0])]]},
            "properties": {"kind": "roi"},
        })
    for kind, payload in runner.flown:
        if kind == "path" and payload:
            features.append(path_to_geojson(payload, properties={"kind": "reference"}))
        elif kind == "loiter":
            ang = np.linspace(0, 2 * math.pi, 65)
            coords = [[payload.center[0] + payload.radius * math.cos(a),
                       payload.center[1] + payload.radius * math.sin(a),
                       payload.center[2]] for a in ang]
            features.append({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {"kind": "loiter", "direction": payload.direction.value},
            })
    return {"type": "FeatureCollection", "features": features}


def write_artifacts(result: MissionResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = result.runner
    (out_dir / "track.csv").write_text(runner.sim.record.to_csv())
    (out_dir / "report.json").write_text(json.dumps(result.report, sort_keys=True, indent=1))
    (out_dir / "mission.geojson").write_text(json.dumps(mission_geojson(runner), sort_keys=True))
    trace_lines = [json.dumps(e, sort_keys=True) for e in runner.events]
    if isinstance(runner.session, MappingSession):
        trace_lines += [json.dumps(e, sort_keys=True) for e in runner.session.trace]
    (out_dir / "plan_trace.jsonl").write_text("\n".join(trace_lines) + "\n" if trace_lines else "")
    if runner.world.lmap is not None:
        (out_dir / "landmarks.csv").write_text(landmarks_csv(runner.world.lmap))
    session = runner.session
    if session is not None:
        (out_dir / "views.csv").write_text(views_csv(session.acquired))
        (out_dir / "uncertainty.csv").write_text(uncertainty_csv(session.acc))
    else:
        (out_dir / "views.csv").write_text("t,x,y,z,qw,qx,qy,qz\n")


def run_mission(
    config_path: str | Path,
    script_path: str | Path | None,
    out_dir: str | Path | None,
    seed: int | None = None,
    max_duration: float = 3600.0,
) -> MissionResult:
    """CLI entry: execute a scripted mission and write all artifacts."""
    cfg = MissionConfig.load(config_path)
    world = World.build(cfg)
    runner = MissionRunner(world, seed=seed)
    script: list[ScriptStep] = []
    if script_path is not None:
        try:
            script = parse_script(json.loads(Path(script_path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise ConfigError(f"cannot read script {script_path}: {e}")
    result = run_scripted(runner, script, max_duration)
    if out_dir is not None:
        write_artifacts(result, Path(out_dir))
    return result


def _mapping_only_script() -> list[ScriptStep]:
    return parse_script([{"when": {"t": 0.0}, "cmd": {"cmd": "start_mapping"}}])


def run_comparison(
    config_path: str | Path,
    duration: float,
    out_dir: str | Path | None,
    seed: int | None = None,
) -> dict:
    """Paired active-vs-coverage evaluation with identical seed and wind."""
    cfg = MissionConfig.load(config_path)
    if not cfg.roi:
        raise ConfigError("comparison requires an ROI")
    world = World.build(cfg)
    return run_comparison_world(world, duration, out_dir, seed)


def run_comparison_world(
    world: World, duration: float, out_dir: str | Path | None, seed: int | None = None
) -> dict:
    cfg = world.cfg
    active_runner = MissionRunner(world, seed=seed)
    active = run_scripted(active_runner, _mapping_only_script(), duration,
                          method="active", settle_after_script=math.inf)

    sweep = plan_sweep(cfg.roi, cfg.sweep_direction, cfg.sweep_spacing,
                       world.dem, cfg.band, cfg.limits)
    coverage_runner = MissionRunner(world, seed=seed)
    coverage_runner.enable_coverage_mode(sweep_to_path(sweep))
    # Equal flight time: both runs fly the full duration; the baseline holds
    # at its rally loiter after the sweep completes.
    coverage = run_scripted(coverage_runner, _mapping_only_script(), duration,
                            method="coverage", settle_after_script=math.inf)

    summary = {
        "v": 1,
        "seed": active_runner.seed,
        "duration_s": duration,
        "active": active.report,
        "coverage": coverage.report,
        "delta_final_q": (active.report["final_q"] or 0) - (coverage.report["final_q"] or 0),
        "delta_final_coverage": (active.report["final_coverage"] or 0)
        - (coverage.report["final_coverage"] or 0),
    }
    if out_dir is not None:
        out = Path(out_dir)
        write_artifacts(active, out / "active")
        write_artifacts(coverage, out / "coverage")
        (out / "report.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    return summary
