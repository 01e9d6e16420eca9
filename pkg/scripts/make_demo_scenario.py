#!/usr/bin/env python3
"""Generate a self-contained demo scenario: valley DEM, config, and script.

Usage:
    python3 scripts/make_demo_scenario.py out/demo
    fwmission run --config out/demo/mission.json --script out/demo/script.json --out out/demo/run --seed 1
    fwmission serve --config out/demo/mission.json --port 9877
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fwmission import fixtures
from fwmission.terrain import save_dem


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "out/demo")
    out.mkdir(parents=True, exist_ok=True)
    dem = fixtures.valley_dem()
    save_dem(dem.heights, dem, out / "terrain.asc")
    config = {
        "dem": "terrain.asc",
        "band": {"d_min": 50.0, "d_max": 120.0},
        "limits": {"airspeed": 15.0, "kappa_max": 0.0125, "gamma_max": 0.15},
        "sim": {"dt": 0.1, "wind_mean": [1.5, 0.5], "gust_std": 0.8},
        "home": [400.0, 500.0],
        "loiter_radius": 80.0,
        "roi": [[900.0, 350.0], [1290.0, 350.0], [1290.0, 645.0], [900.0, 645.0]],
        "landmark_spacing": 15.0,
        "camera": {"hfov_deg": 60.0, "vfov_deg": 40.0, "max_range": 250.0,
                   "incidence_limit_deg": 70.0, "mount_pitch_down_deg": 30.0},
        "mcts": {"iterations": 150, "horizon_depth": 3, "primitive_length": 60.0,
                 "capture_spacing": 20.0},
        "plan_time_budget": 5.0,
        "sweep_spacing": 45.0,
        "seed": 0,
    }
    (out / "mission.json").write_text(json.dumps(config, indent=2))
    script = [
        {"when": {"t": 1.0}, "cmd": {"cmd": "navigate", "goal": [1200.0, 500.0]}},
        {"when": {"fsm": "Hold", "t": 10.0}, "cmd": {"cmd": "start_mapping"}},
        {"when": {"t": 700.0}, "cmd": {"cmd": "abort"}},
        {"when": {"fsm": "Hold"}, "cmd": {"cmd": "return"}},
    ]
    (out / "script.json").write_text(json.dumps(script, indent=2))
    print(f"wrote {out}/terrain.asc, mission.json, script.json")


if __name__ == "__main__":
    main()
