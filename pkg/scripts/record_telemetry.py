#!/usr/bin/env python3
"""Run a short mission and record its telemetry frames plus artifacts.

Produces the operator console's replay fixtures: telemetry.jsonl (the 5 Hz
frame stream a live client would have received, scene frame first) next to
the usual run artifacts (track.csv, report.json).

Usage: python3 scripts/record_telemetry.py <out_dir> [duration_s]
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fwmission import fixtures
from fwmission.mission import (
    MissionConfig,
    MissionRunner,
    World,
    parse_script,
    run_scripted,
    write_artifacts,
)
from fwmission.service import MissionService
from fwmission.terrain import save_dem


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "out/replay_fixture")
    duration = float(sys.argv[2]) if len(sys.argv) > 2 else 260.0
    out.mkdir(parents=True, exist_ok=True)

    dem = fixtures.flat_dem(130, 70, 10.0)
    dem_path = out / "terrain.asc"
    save_dem(dem.heights, dem, dem_path)
    cfg = MissionConfig.from_json({
        "dem": str(dem_path),
        "band": {"d_min": 50.0, "d_max": 120.0},
        "sim": {"dt": 0.1, "wind_mean": [1.0, 0.5], "gust_std": 0.5},
        "home": [200.0, 300.0],
        "roi": [[550.0, 220.0], [800.0, 220.0], [800.0, 380.0], [550.0, 380.0]],
        "landmark_spacing": 20.0,
        "mcts": {"iterations": 60, "horizon_depth": 2, "primitive_length": 60.0,
                 "capture_spacing": 20.0},
        "seed": 5,
    })
    world = World.build(cfg)
    runner = MissionRunner(world, seed=5)

    frames: list[dict] = []
    service = MissionService.__new__(MissionService)  # reuse only the scene builder
    service.world = world
    frames.append(service._scene_frame())

    tick = {"n": 0}
    orig_step = runner.step

    def step_and_record():
        orig_step()
        tick["n"] += 1
        if tick["n"] % 2 == 0:  # 5 Hz, like the live service
            frames.append(runner.telemetry_frame())

    runner.step = step_and_record

    script = parse_script([
        {"when": {"t": 1.0}, "cmd": {"cmd": "navigate", "goal": [650.0, 300.0]}},
        {"when": {"fsm": "Hold", "t": 10.0}, "cmd": {"cmd": "start_mapping"}},
        {"when": {"t": 150.0}, "cmd": {"cmd": "abort"}},
        {"when": {"fsm": "Hold"}, "cmd": {"cmd": "return"}},
    ])
    result = run_scripted(runner, script, duration)
    write_artifacts(result, out)
    with (out / "telemetry.jsonl").open("w") as f:
        for frame in frames:
            f.write(json.dumps(frame, sort_keys=True) + "\n")
    print(f"wrote {len(frames)} frames to {out}/telemetry.jsonl "
          f"(states: {result.report['fsm_states_visited']})")


if __name__ == "__main__":
    main()
