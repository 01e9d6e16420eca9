"""Shared helpers for building on-disk mission configurations in tests."""

from __future__ import annotations

import json
from pathlib import Path

from fwmission.terrain import save_dem


def write_config(tmp_path: Path, dem, overrides: dict | None = None,
                 name: str = "mission.json") -> Path:
    dem_path = tmp_path / "terrain.asc"
    save_dem(dem.heights, dem, dem_path)
    cfg = {
        "dem": str(dem_path),
        "band": {"d_min": 50.0, "d_max": 120.0},
        "limits": {"airspeed": 15.0, "kappa_max": 1.0 / 80.0, "gamma_max": 0.15},
        "sim": {"dt": 0.1, "wind_mean": [0.0, 0.0], "gust_std": 0.0},
        "home": [200.0, 300.0],
        "loiter_radius": 80.0,
        "roi": [[550.0, 220.0], [800.0, 220.0], [800.0, 380.0], [550.0, 380.0]],
        "landmark_spacing": 20.0,
        "mcts": {"iterations": 40, "horizon_depth": 2, "primitive_length": 60.0,
                 "capture_spacing": 20.0},
        "plan_time_budget": 4.0,
        "sweep_spacing": 45.0,
        "seed": 0,
    }
    if overrides:
        cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=1))
    return path


def write_script(tmp_path: Path, steps: list[dict], name: str = "script.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(steps))
    return path
