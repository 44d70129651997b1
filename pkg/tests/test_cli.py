from __future__ import annotations

import json
import math
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from geomeasure.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, main
from geomeasure.io import builtin_path

SCHEMA = json.loads(resources.files("geomeasure").joinpath("report.schema.json").read_text())


def b(name):
    return str(builtin_path(name))


def run(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(argv + ["--out", str(out)])
    doc = json.loads(out.read_text()) if out.exists() else None
    if doc is not None:
        jsonschema.validate(doc, SCHEMA)
    return code, doc


# ---------------------------------------------------------------- successful commands


def test_measure_area(tmp_path):
    code, doc = run(["measure", "--e", "1", b("circle.scene.json")], tmp_path)
    assert code == EXIT_OK
    assert doc["method"] == "area"
    assert doc["value"] == pytest.approx(2 * math.pi, abs=1e-6)


def test_measure_area_scene_flag(tmp_path):
    code, doc = run(["measure", "--e", "1", "--no-partition", "--scene", b("segment.scene.json")], tmp_path)
    assert code == EXIT_OK
    assert doc["value"] == pytest.approx(1.0, abs=1e-9)


def test_measure_crofton(tmp_path):
    argv = ["measure", "--method", "crofton", "--e", "1", "--samples", "20000", "--seed", "3",
            b("segment.scene.json")]
    code, doc = run(argv, tmp_path)
    assert code == EXIT_OK
    assert doc["method"] == "crofton" and doc["samples"] == 20000 and doc["seed"] == 3
    assert abs(doc["value"] - 1.0) <= 4 * doc["stderr"]


def test_crofton_alias_matches_measure(tmp_path):
    common = ["--e", "1", "--samples", "5000", "--seed", "9", b("circle.scene.json")]
    c1, d1 = run(["crofton"] + common, tmp_path, "a.json")
    c2, d2 = run(["measure", "--method", "crofton"] + common, tmp_path, "b.json")
    assert c1 == c2 == EXIT_OK
    assert d1 == d2


def test_partition(tmp_path):
    code, doc = run(["partition", b("circle.scene.json")], tmp_path)
    assert code == EXIT_OK
    assert doc["summary"]["pieces"] >= 17
    assert doc["summary"]["e"] == 1


def test_coarea_check(tmp_path):
    code, doc = run(["coarea-check", b("coarea_annulus.json")], tmp_path)
    assert code == EXIT_OK and doc["pass"]
    assert doc["lhs"] == pytest.approx(math.pi / 8, abs=1e-4)


def test_cov_check(tmp_path):
    code, doc = run(["cov-check", "--spec", b("cov_polar.json")], tmp_path)
    assert code == EXIT_OK and doc["pass"]
    assert doc["rhs"] == pytest.approx(15 * math.pi / 256, abs=1e-9)


def test_fubini_check(tmp_path):
    code, doc = run(["fubini-check", b("fubini_sin.json")], tmp_path)
    assert code == EXIT_OK and doc["pass"]
    assert doc["joint"] == pytest.approx(2 * math.sin(1) - math.sin(2), abs=1e-12)


def test_whitney(tmp_path):
    code, doc = run(["whitney", "--cell", b("cell_roof.json"), "--trials", "100"], tmp_path)
    assert code == EXIT_OK and doc["pass"]
    assert doc["trials"] == 100


def test_selftest_single_criterion(tmp_path):
    code, doc = run(["selftest", "--criteria", "1"], tmp_path)
    assert code == EXIT_OK
    assert [c["criterion"] for c in doc["criteria"]] == [1]


def test_stdout_report():
    cmd = [sys.executable, "-m", "geomeasure.cli", "measure", "--e", "1", b("segment.scene.json")]
    proc = subprocess.run(cmd, capture_output=True, text=True, check=False)
    assert proc.returncode == EXIT_OK
    doc = json.loads(proc.stdout)
    jsonschema.validate(doc, SCHEMA)
    assert doc["value"] == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- validation failures


@pytest.mark.parametrize(
    "argv",
    [
        ["measure", "--e", "1", "missing.json"],
        ["measure", "--e", "1"],
        ["measure", "--e", "1", "--samples", "10", "CIRCLE"],
        ["measure", "--method", "crofton", "--e", "1", "--eps", "0.1", "CIRCLE"],
        ["measure", "--method", "crofton", "--e", "1", "--samples", "0", "CIRCLE"],
        ["measure", "--e", "5", "CIRCLE"],
        ["measure", "--e", "1", "--scene", "SEGMENT", "CIRCLE"],
        ["partition", "--eps", "0.9", "CIRCLE"],
        ["whitney", "--cell", "ROOF", "--trials", "0"],
        ["whitney", "--cell", "nowhere.json"],
        ["nonsense"],
        ["measure", "CIRCLE"],
    ],
)
def test_invalid_usage(argv, tmp_path, capsys):
    names = {"CIRCLE": b("circle.scene.json"), "SEGMENT": b("segment.scene.json"), "ROOF": b("cell_roof.json")}
    argv = [names.get(a, a) for a in argv]
    code = main(argv + ["--out", str(tmp_path / "x.json")]) if argv[0] != "nonsense" else main(argv)
    assert code == EXIT_INVALID
    assert not (tmp_path / "x.json").exists()
    assert capsys.readouterr().err


def test_malformed_scene_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"ambient_dim": 2,\n  "patches": [\n')
    assert main(["measure", "--e", "1", str(bad)]) == EXIT_INVALID
    assert "line" in capsys.readouterr().err


def test_bad_expression_in_scene(tmp_path):
    doc = json.loads(builtin_path("segment.scene.json").read_text())
    doc["patches"][0]["map"] = ["x +* 1"]
    bad = tmp_path / "bad.scene.json"
    bad.write_text(json.dumps(doc))
    assert main(["measure", "--e", "1", str(bad)]) == EXIT_INVALID


def test_bad_spec_region(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"map": ["x"], "region": {"interval": [1, 0]}}))
    assert main(["coarea-check", str(spec)]) == EXIT_INVALID


# ---------------------------------------------------------------- numerical failures


def test_whitney_bound_violation_exit_code(tmp_path):
    code, doc = run(["whitney", "--cell", b("cell_roof.json"), "--trials", "100", "--K", "1"], tmp_path)
    assert code == EXIT_NUMERIC
    assert doc is not None and doc["pass"] is False
    assert doc["max_ratio"] > 1.0
