"""Fixed-wing terrain-relative mission planning and simulation.

Modules:
  terrain    elevation grids, 3D distance-to-terrain, valid-loiter mask
  dubins     airplane kinematics, loiters, Dubins words, path serialization
  planner    loiter-to-loiter / state-to-loiter safe navigation, validation
  fisher     landmark Fisher information, CRB map quality, view utility
  mcts       9-primitive receding-horizon active mapping (UCB1 search)
  coverage   boustrophedon sweep baseline
  fsm        Hold/Navigate/Mapping/Abort/Return mission state machine
  simulator  closed-loop kinematic simulation with wind and guidance
  mission    config, mission runner, comparison evaluation, artifacts
  service    length-delimited JSON telemetry/command TCP service
  fixtures   synthetic DEM builders for tests and demos
"""

from .dubins import (
    AirplaneState,
    LoiterDirection,
    LoiterPath,
    PathSegment,
    VehicleLimits,
    closest_point_on_path,
    connect_dubins,
    propagate,
    sample_loiter_states,
)
from .terrain import (
    DemGrid,
    DistanceBand,
    LoiterMask,
    band_check_points,
    build_loiter_mask,
    check_loiter_valid,
    distance_to_terrain,
    load_dem,
    save_dem,
    terrain_height,
)
from .planner import (
    InvalidGoal,
    NoPathFound,
    PlanQuery,
    PlanResult,
    plan_loiter_to_loiter,
    plan_state_to_loiter,
    sample_rally_points,
    validate_path,
)
from .fisher import (
    CameraIntrinsics,
    FisherAccumulator,
    LandmarkMap,
    Viewpoint,
    coverage_fraction,
    map_quality,
    seed_landmarks,
    view_utility,
    visible,
)
from .mcts import (
    MappingAction,
    MappingSession,
    MctsConfig,
    NoSafePrimitive,
    apply_action,
    enumerate_primitives,
    mcts_plan,
    rollout_views,
)
from .coverage import SweepPlan, plan_sweep, sweep_to_path
from .fsm import (
    CommandKind,
    MissionCommand,
    MissionState,
    MissionTag,
    Rejection,
    handle_command,
    handle_completion,
)
from .simulator import ReferencePath, SimConfig, Simulator, guidance, tracking_errors
from .mission import MissionConfig, MissionRunner, World, run_comparison, run_mission

__all__ = [name for name in dir() if not name.startswith("_")]
