import json
import math
from pathlib import Path

import pytest

from robinsym.cli import main
from robinsym.scenario import (
    ScenarioError,
    convergence_study,
    parse_scenario,
    run_scenario,
    to_json,
)

SQUARE = {"name": "square", "geometry": {"kind": "rectangle", "width": 1, "height": 1, "h": 0.25},
          "beta": {"default": 1}}
DISK = {"name": "disk", "geometry": {"kind": "disk", "radius": 1, "segments": 32, "h": 0.25},
        "beta": {"default": 2}}


def write(tmp_path, obj, name="s.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


def test_defaults_filled():
    s = parse_scenario(json.dumps(SQUARE))
    assert s.levels == 3 and s.N == 2
    assert s.checks == ("l1", "pointwise", "boundary_min", "fubini", "uv", "fcond")
    assert s.tol == {"cg": 1e-10, "fubini": 0.02, "t_levels": 256}
    assert s.source.is_constant and s.source.amplitude == 1.0


@pytest.mark.parametrize("patch,fragment", [
    ({"beta": {"default": 0}}, "beta.default"),
    ({"beta": {"default": -2}}, "beta.default"),
    ({"colour": "red"}, "unknown key"),
    ({"geometry": {"kind": "rectangle", "width": 1, "height": 1, "h": 0.25, "depth": 1}}, "depth"),
    ({"N": 3}, "N:"),
    ({"levels": 1}, "levels"),
    ({"checks": ["l1", "l7"]}, "checks"),
    ({"beta": {"north": 1}}, "beta.north"),
    ({"beta": {"9": 1}}, "beta.9"),
    ({"source": {"kind": "gaussian", "width": -1}}, "source.width"),
    ({"tol": {"cg": 0}}, "tol.cg"),
])
def test_rejections(patch, fragment):
    with pytest.raises(ScenarioError, match=fragment.replace(".", r"\.")):
        parse_scenario(json.dumps({**SQUARE, **patch}))


def test_malformed_json_reports_line():
    with pytest.raises(ScenarioError, match="line 2"):
        parse_scenario('{"name": "x",\n "geometry": }')


def test_named_pieces_and_dirichlet():
    s = parse_scenario(json.dumps({**SQUARE, "beta": {"bottom": "dirichlet", "default": 1.0},
                                   "markers": {"top": 9}}))
    assert s.beta.rules[1] == math.inf and s.beta.rules[0] == 1.0
    assert s.geometry.marker_ids()["top"] == 9


def test_pointwise_downgraded_for_varying_source():
    s = parse_scenario(json.dumps({**SQUARE, "checks": ["pointwise"],
                                   "source": {"kind": "gaussian", "width": 0.3, "center": [0.5, 0.5]}}))
    assert s.informational_checks() == ["pointwise"]


def test_json_output_is_deterministic():
    doc = {"a": 0.1, "b": [1.0, math.inf, math.nan], "c": {"d": 3}}
    text = to_json(doc)
    assert text == to_json(doc)
    back = json.loads(text)
    assert back["a"] == 0.1 and back["b"] == [1.0, "inf", None] and back["c"] == {"d": 3}
    assert "0.10000000000000001" in text


def test_compare_disk(tmp_path):
    out = tmp_path / "out"
    assert main(["compare", "--scenario", str(write(tmp_path, DISK)), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["curves.csv", "mesh_0.txt", "mesh_1.txt", "mesh_2.txt", "radial.csv", "report.json"]
    rep = json.loads((out / "report.json").read_text())
    assert rep["exit_status"] == 0
    assert abs(rep["checks"]["l1"]["margin"]) <= rep["checks"]["l1"]["tolerance"]
    assert (out / "curves.csv").read_text().splitlines()[0] == "t,mu,phi,U,V"
    # byte-identical on rerun
    out2 = tmp_path / "again"
    main(["compare", "--scenario", str(write(tmp_path, DISK)), "--out", str(out2)])
    assert (out / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


def test_counterexample_exit_code(tmp_path):
    sc = write(tmp_path, {"name": "ce", "geometry": {"kind": "counterexample", "n": 3, "r": 0.1}})
    assert main(["compare", "--scenario", str(sc), "--out", str(tmp_path / "a")]) == 2
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["u_l1"] == pytest.approx(41.90884599888784, rel=1e-12)
    assert rep["v_l1"] == pytest.approx(2 * math.pi)
    assert rep["checks"]["fcond"]["verdict"] == "violated"
    assert main(["counterexample", "--n", "3", "--r", "0.1", "--out", str(tmp_path / "b")]) == 2


def test_malformed_config_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    sc = write(tmp_path, '{"name": "x", "geometry": {"kind": "rectangle"')
    assert main(["compare", "--scenario", str(sc), "--out", str(out)]) == 1
    assert not out.exists()
    assert main(["compare", "--scenario", str(tmp_path / "missing.json"), "--out", str(out)]) == 1


def test_failure_during_run_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    bad = {**SQUARE, "beta": {"default": 1}, "tol": {"cg": 1e-10},
           "source": {"kind": "radial_power", "exponent": -1, "center": [0.125, 0.0]}}
    assert main(["compare", "--scenario", str(write(tmp_path, bad)), "--out", str(out)]) == 1
    assert not out.exists()


def test_fcond_command(tmp_path):
    sc = write(tmp_path, {"name": "b", "geometry": {"kind": "ball", "measure": 1}, "N": 3,
                          "beta": {"default": 1}, "source": {"kind": "disk_indicator", "radius": 0.05,
                                                             "amplitude": 100}})
    assert main(["fcond", "--scenario", str(sc), "--out", str(tmp_path / "f")]) == 2
    assert main(["compare", "--scenario", str(sc), "--out", str(tmp_path / "c")]) == 2
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert rep["checks"]["l1"]["verdict"] == "not-applicable"
    assert main(["fcond", "--scenario", str(write(tmp_path, SQUARE)), "--out", str(tmp_path / "g")]) == 0


def test_solve_command(tmp_path):
    out = tmp_path / "s"
    assert main(["solve", "--scenario", str(write(tmp_path, SQUARE)), "--out", str(out), "--levels", "2",
                 "--tol", "1e-12"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert [r["level"] for r in rep["levels"]] == [0, 1]
    assert (out / "u_1.csv").exists() and (out / "mesh_1.txt").exists()


def test_convergence(tmp_path):
    s = parse_scenario(json.dumps(DISK))
    rows = convergence_study(s, 3)
    assert rows[0]["mode"] == "exact_l2"
    assert 1.8 < rows[-1]["order"] < 2.2
    with pytest.raises(ScenarioError):
        convergence_study(s, 2)
    sq = parse_scenario(json.dumps(SQUARE))
    diffs = [r["error"] for r in convergence_study(sq, 4)[1:]]
    assert all(a > b for a, b in zip(diffs, diffs[1:]))
    assert main(["convergence", "--scenario", str(write(tmp_path, DISK)), "--out", str(tmp_path / "c"),
                 "--levels", "2"]) == 1
    assert main(["convergence", "--scenario", str(write(tmp_path, DISK)), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "convergence.csv").read_text().startswith("level,h,n_vertices,mode,u_l1")


SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
EXPECTED_STATUS = {"counterexample": 2, "ball_indicator_3d": 2}


@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_scenarios(path, tmp_path):
    parse_scenario(path.read_text())
    if path.stem in ("disk", "counterexample", "ball_indicator_3d", "gaussian"):
        assert main(["compare", "--scenario", str(path), "--out", str(tmp_path)]) == EXPECTED_STATUS.get(path.stem, 0)
