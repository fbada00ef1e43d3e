import re
from pathlib import Path

import numpy as np
import pytest
import yaml

from occplan import scenario
from occplan.errors import ConfigurationError, ConstraintError, ParseError
from occplan.scenario import DATA_DIR, load_scenario, shipped_scenarios

SMOKE = DATA_DIR / "scenario_smoke.yaml"


def edited(tmp_path, old, new, name="s.yaml"):
    text = SMOKE.read_text()
    assert old in text
    path = tmp_path / name
    path.write_text(text.replace(old, new))
    return path


def line_of(path, needle):
    for k, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if needle in line:
            return k
    raise AssertionError(needle)


def test_shipped_scenarios_load():
    names = [p.name for p in shipped_scenarios()]
    assert {"scenario_smoke.yaml", "scenario_sweep.yaml", "scenario_occlusion_ab.yaml"} <= set(names)
    for p in shipped_scenarios():
        sc = load_scenario(p)
        assert sc.model.dof == sc.task.q_start.size
        assert sc.scene.samples_per_segment % 4 == 0


def test_smoke_contents():
    sc = load_scenario(SMOKE)
    assert sc.name == "smoke" and sc.seed == 7
    assert sc.model.dof == 3
    np.testing.assert_array_equal(sc.task.q_start, [-0.8, 0.0, 0.3])
    assert sc.task.weights.static == 1000.0
    assert sc.params.max_iterations == 40
    assert sc.scene.samples_per_segment == 8
    assert len(sc.scene.obstacles) == 1


def test_overrides():
    sc = load_scenario(SMOKE, seed=11, weight_overrides={"occlusion": 0.0}, samples_per_segment=12)
    assert sc.seed == 11 and sc.params.seed == 11
    assert sc.task.weights.occlusion == 0.0
    assert sc.scene.samples_per_segment == 12
    with pytest.raises(ConfigurationError):
        load_scenario(SMOKE, weight_overrides={"nope": 1.0})


@pytest.mark.parametrize("old, new, field, needle", [
    ("duration: 1.5", "duration: fast", "task.duration", "duration: fast"),
    ("  waypoints: 3\n", "", None, None),
    ("max_iterations: 40", "max_iterations: -2", "planner", "max_iterations"),
    ("samples_per_segment: 8", "samples_per_segment: 6", "cost", "samples_per_segment"),
    ("radius: 0.04", "radius: -0.04", "robot.shapes[2]", "radius: -0.04"),
    ("generator: standing", "generator: dancing", "human.generator", "generator: dancing"),
    ("weights: {smoothness", "weights: {smoothnes", "weights.smoothnes", "weights:"),
])
def test_parse_errors_carry_line_and_field(tmp_path, old, new, field, needle):
    path = edited(tmp_path, old, new)
    if field is None:
        # a dropped optional field falls back to its default
        assert load_scenario(path).task.waypoints == 10
        return
    with pytest.raises(ParseError) as err:
        load_scenario(path)
    msg = str(err.value)
    assert f"field '{field}" in msg, msg
    m = re.search(r"s\.yaml:(\d+):", msg)
    assert m and int(m.group(1)) == line_of(path, needle), msg


def test_structural_errors(tmp_path):
    with pytest.raises(ParseError, match="schema"):
        load_scenario(edited(tmp_path, "occplan-scenario/1", "occplan-scenario/9"))
    with pytest.raises(ParseError, match="unknown top-level"):
        load_scenario(edited(tmp_path, "name: smoke", "nmae: smoke"))
    bad = tmp_path / "broken.yaml"
    bad.write_text("schema: [unclosed\n")
    with pytest.raises(ParseError, match="broken.yaml"):
        load_scenario(bad)
    with pytest.raises(ParseError, match="missing goal"):
        load_scenario(edited(tmp_path, "  goal: [0.8, 0.2, 0.3]\n", ""))
    with pytest.raises(ParseError, match="expected 'file' or 'generator'"):
        load_scenario(edited(tmp_path, "  generator: standing\n", ""))


def test_infeasible_endpoints(tmp_path):
    with pytest.raises(ConstraintError):
        load_scenario(edited(tmp_path, "start: [-0.8, 0.0, 0.3]", "start: [-3.0, 0.0, 0.3]"))


def test_relative_file_references(tmp_path):
    data = yaml.safe_load((DATA_DIR / "scenario_sweep.yaml").read_text())
    (tmp_path / "robot_7dof.yaml").write_text((DATA_DIR / "robot_7dof.yaml").read_text())
    path = tmp_path / "copy.yaml"
    path.write_text(yaml.safe_dump(data))
    assert load_scenario(path).model.dof == 7
    data["robot"]["file"] = "robot_missing.yaml"
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(ParseError, match="robot.file"):
        load_scenario(path)
