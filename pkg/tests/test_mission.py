import json
from pathlib import Path

import pytest

from fwmission import fixtures
from fwmission.cli import main as cli_main
from fwmission.mission import (
    ConfigError,
    MissionConfig,
    World,
    run_comparison,
    run_mission,
)

from worlds import write_config, write_script

FULL_SCRIPT = [
    {"when": {"t": 1.0}, "cmd": {"cmd": "navigate", "goal": [700.0, 300.0]}},
    {"when": {"fsm": "Hold", "t": 10.0}, "cmd": {"cmd": "start_mapping"}},
    {"when": {"t": 220.0}, "cmd": {"cmd": "abort"}},
    {"when": {"fsm": "Hold"}, "cmd": {"cmd": "return"}},
]


@pytest.fixture(scope="module")
def flat_dem():
    # Wide enough that 45 m-offset sweep turnarounds (about 200 m of bulge
    # beyond the line ends) stay inside the hull.
    return fixtures.flat_dem(130, 70, 10.0)


def test_full_scripted_mission_visits_all_states(tmp_path, flat_dem):
    cfg = write_config(tmp_path, flat_dem)
    script = write_script(tmp_path, FULL_SCRIPT)
    out = tmp_path / "out"
    result = run_mission(cfg, script, out, max_duration=500.0)
    assert set(result.report["fsm_states_visited"]) == {
        "Hold", "Navigate", "Mapping", "Abort", "Return"
    }
    assert result.report["band_violations"]["reference"] == 0
    assert result.report["final_coverage"] > 0.0
    assert result.report["final_q"] < 3.0 / 1e-6
    for name in ("track.csv", "report.json", "mission.geojson", "plan_trace.jsonl",
                 "landmarks.csv", "views.csv"):
        assert (out / name).exists(), name


def test_rejected_command_logged_and_mission_continues(tmp_path, flat_dem):
    cfg = write_config(tmp_path, flat_dem)
    script = write_script(tmp_path, [
        {"when": {"t": 1.0}, "cmd": {"cmd": "navigate", "goal": [700.0, 300.0]}},
        {"when": {"t": 5.0}, "cmd": {"cmd": "start_mapping"}},  # illegal in Navigate
        {"when": {"fsm": "Hold"}, "cmd": {"cmd": "return"}},
    ])
    result = run_mission(cfg, script, None, max_duration=400.0)
    rejects = [e for e in result.runner.events if e["event"] == "rejected"]
    assert rejects and rejects[0]["reason"] == "illegal_edge"
    assert result.report["fsm_states_visited"].count("Mapping") == 0
    assert result.runner.fsm.tag.value == "Hold"


def test_navigate_to_invalid_goal_rejected(tmp_path, flat_dem):
    cfg = write_config(tmp_path, flat_dem)
    script = write_script(tmp_path, [
        {"when": {"t": 1.0}, "cmd": {"cmd": "navigate", "goal": [30.0, 30.0]}},
    ])
    result = run_mission(cfg, script, None, max_duration=60.0)
    rejects = [e for e in result.runner.events if e["event"] == "rejected"]
    assert rejects and rejects[0]["reason"] == "InvalidGoal"


def test_mission_determinism_byte_identical(tmp_path, flat_dem):
    cfg = write_config(tmp_path, flat_dem)
    script = write_script(tmp_path, [
        {"when": {"t": 1.0}, "cmd": {"cmd": "navigate", "goal": [650.0, 250.0]}},
        {"when": {"fsm": "Hold", "t": 10.0}, "cmd": {"cmd": "start_mapping"}},
        {"when": {"t": 150.0}, "cmd": {"cmd": "abort"}},
        {"when": {"fsm": "Hold"}, "cmd": {"cmd": "return"}},
    ])
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    run_mission(cfg, script, out1, seed=7, max_duration=400.0)
    run_mission(cfg, script, out2, seed=7, max_duration=400.0)
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
    assert (out1 / "track.csv").read_bytes() == (out2 / "track.csv").read_bytes()


def test_comparison_smoke(tmp_path, flat_dem):
    cfg = write_config(tmp_path, flat_dem)
    out = tmp_path / "cmp"
    summary = run_comparison(cfg, duration=180.0, out_dir=out, seed=3)
    assert summary["active"]["final_coverage"] > 0.0
    assert summary["coverage"]["final_coverage"] > 0.0
    assert summary["active"]["band_violations"]["reference"] == 0
    assert summary["coverage"]["band_violations"]["reference"] == 0
    assert (out / "active" / "track.csv").exists()
    assert (out / "coverage" / "report.json").exists()
    assert (out / "report.json").exists()


def test_cli_exit_codes(tmp_path, flat_dem):
    cfg = write_config(tmp_path, flat_dem)
    script = write_script(tmp_path, [
        {"when": {"t": 1.0}, "cmd": {"cmd": "navigate", "goal": [650.0, 300.0]}},
    ])
    rc = cli_main(["run", "--config", str(cfg), "--script", str(script),
                   "--out", str(tmp_path / "cli_out"), "--seed", "1",
                   "--max-duration", "200"])
    assert rc == 0

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli_main(["run", "--config", str(bad)]) == 2

    missing_dem = tmp_path / "missing.json"
    missing_dem.write_text(json.dumps({"dem": "nope.asc", "home": [0, 0]}))
    rc = cli_main(["run", "--config", str(missing_dem)])
    assert rc == 2


def test_config_home_must_be_valid(tmp_path, flat_dem):
    cfg_path = write_config(tmp_path, flat_dem, {"home": [20.0, 20.0]})
    cfg = MissionConfig.load(cfg_path)
    with pytest.raises(ConfigError, match="home"):
        World.build(cfg)
