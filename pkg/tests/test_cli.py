import json
import shutil

import numpy as np
import pytest

from lswarm.cli import main
from lswarm.environment import fixture_path
from lswarm.lawnmower import load_waypoints


@pytest.fixture()
def camera_file(tmp_path):
    src = fixture_path("camera_1m").read_text()
    p = tmp_path / "camera.json"
    p.write_text(src)
    return p


def _scenario_file(tmp_path, **overrides):
    data = json.loads(fixture_path("line_left_right").read_text())
    data["duration"] = 4.0
    data["obstacles"]["count"] = 4
    data["tuning"]["lut_step_deg"] = 5.0
    data.update(overrides)
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(data))
    return p


def test_plan_command(tmp_path, camera_file, capsys):
    out = tmp_path / "wp.csv"
    rc = main(["plan", "--model", "high_dense", "--camera", str(camera_file),
               "--agents", "4", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "planning wall-clock" in text
    paths = load_waypoints(out)
    assert len(paths) == 4


def test_plan_rejects_bad_model(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "bounds": {"w": 5, "l": 5}, "buildings": '
                   '[{"x_min": 0, "y_min": 0, "x_max": 9, "y_max": 2, "height": 3}]}')
    rc = main(["plan", "--model", str(bad), "--out", str(tmp_path / "wp.csv")])
    assert rc == 1


def test_plan_infeasible_altitude(tmp_path, capsys):
    tall = tmp_path / "tall.json"
    tall.write_text('{"name": "x", "bounds": {"w": 20, "l": 20}, "buildings": '
                    '[{"x_min": 2, "y_min": 2, "x_max": 6, "y_max": 6, "height": 50}]}')
    rc = main(["plan", "--model", str(tall), "--out", str(tmp_path / "wp.csv")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_lut_build_and_verify(tmp_path, camera_file, capsys):
    out = tmp_path / "table.csv"
    rc = main(["lut", "build", "--camera", str(camera_file),
               "--step-deg", "5", "--out", str(out)])
    assert rc == 0
    assert "rows=1369" in capsys.readouterr().out  # (180/5 + 1)^2
    rc = main(["lut", "verify", "--file", str(out), "--samples", "10"])
    assert rc == 0


def test_lut_verify_tampered_file(tmp_path, camera_file, capsys):
    out = tmp_path / "table.csv"
    main(["lut", "build", "--camera", str(camera_file), "--step-deg", "5",
          "--out", str(out)])
    lines = out.read_text().splitlines()
    fields = lines[10].split(",")
    fields[-1] = repr(float(fields[-1]) + 0.7)
    lines[10] = ",".join(fields)
    out.write_text("\n".join(lines) + "\n")
    rc = main(["lut", "verify", "--file", str(out), "--samples", str(1369)])
    assert rc == 1


def test_run_command(tmp_path, capsys):
    sc = _scenario_file(tmp_path)
    rc = main(["run", "--scenario", str(sc), "--out", str(tmp_path / "out")])
    assert rc == 0
    text = capsys.readouterr().out
    assert "overlap ratio" in text
    out_files = list((tmp_path / "out").iterdir())
    kinds = {p.suffix for p in out_files}
    assert kinds == {".csv", ".json"}


def test_run_mode_and_seed_override(tmp_path, capsys):
    sc = _scenario_file(tmp_path)
    rc = main(["run", "--scenario", str(sc), "--mode", "orca", "--seed", "9",
               "--out", str(tmp_path / "out")])
    assert rc == 0
    metrics = json.loads((tmp_path / "out" / "line-left-right_orca_9.json").read_text())
    assert metrics["mode"] == "orca"
    assert metrics["seed"] == 9


def test_run_rejects_missing_scenario(tmp_path):
    rc = main(["run", "--scenario", str(tmp_path / "nope.json")])
    assert rc == 1


def test_run_repeat_same_seed_identical_outputs(tmp_path):
    sc = _scenario_file(tmp_path)
    main(["run", "--scenario", str(sc), "--out", str(tmp_path / "a")])
    main(["run", "--scenario", str(sc), "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "line-left-right_lswarm_11.csv").read_bytes()
    b = (tmp_path / "b" / "line-left-right_lswarm_11.csv").read_bytes()
    assert a == b


def test_compare_single_point(tmp_path, capsys):
    sc = _scenario_file(tmp_path)
    out = tmp_path / "table.csv"
    rc = main(["compare", "--scenario", str(sc), "--sweep", "obstacles=3",
               "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "count,orca_ratio,lswarm_ratio,orca_step_ms,lswarm_step_ms"
    assert len(lines) == 2
    assert lines[1].startswith("3,")


def test_compare_rejects_bad_sweep(tmp_path):
    sc = _scenario_file(tmp_path)
    rc = main(["compare", "--scenario", str(sc), "--sweep", "birds=1,2"])
    assert rc == 1
