import csv
import json
import math
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from curvlab.cli import VERBS, RunConfig, constant_gauss_root, main, make_data
from curvlab.errors import PreconditionError
from curvlab.io import IOFailure, dumps_json, sha256_file, tag, to_jsonable, write_csv, write_json

MESH = "regular-octagon-genus2(4)"


def run_verb(verb, out, *extra):
    return main([verb, "--mesh", MESH, "--out", str(out), *extra])


# io helpers

def test_to_jsonable():
    obj = {"a": np.float64(1.5), "b": np.arange(3), "c": Fraction(-4, 3), "d": math.inf, "e": np.bool_(True),
           "f": float("nan"), 3: None}
    out = to_jsonable(obj)
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": "-4/3", "d": "inf", "e": True, "f": "nan", "3": None}
    with pytest.raises(TypeError):
        to_jsonable(object())


def test_dumps_json_deterministic():
    a = dumps_json({"b": 1, "a": [0.1, 2]})
    b = dumps_json({"a": [0.1, 2], "b": 1})
    assert a == b and a.endswith("\n")
    assert json.loads(a)["a"][0] == 0.1


def test_tag_provenance():
    t = tag({"x": 1.0, "k": {"y": 2, "z": "s"}, "flag": True, "rows": [{"w": 3.0}]},
            special={"k": "exact", "rows.w": "input"})
    assert t["x"] == {"value": 1.0, "provenance": "measured"}
    assert t["k"]["y"] == {"value": 2, "provenance": "exact"}
    assert t["k"]["z"] == "s" and t["flag"] is True
    assert t["rows"][0]["w"]["provenance"] == "input"


def test_write_csv_roundtrip(tmp_path):
    x = np.array([0.1, 1 / 3, -2e-300])
    write_csv(tmp_path / "a.csv", {"i": np.arange(3), "x": x, "ok": [True, False, True]})
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["i", "x", "ok"]
    assert [float(r[1]) for r in rows[1:]] == list(x)
    assert rows[2][2] == "false"
    with pytest.raises(ValueError):
        write_csv(tmp_path / "b.csv", {"a": [1, 2], "b": [1]})


def test_write_failures(tmp_path):
    with pytest.raises(IOFailure):
        write_json(tmp_path / "missing" / "x.json", {})
    with pytest.raises(IOFailure):
        write_csv(tmp_path / "missing" / "x.csv", {"a": [1]})
    assert IOFailure.exit_code == 3


def test_sha256(tmp_path):
    p = tmp_path / "f"
    p.write_bytes(b"abc")
    assert sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


# config and data

def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"verb": "gauss", "etaa": 0.3}))
    with pytest.raises(PreconditionError):
        RunConfig.load(p)
    with pytest.raises(IOFailure):
        RunConfig.load(tmp_path / "absent.json")


def test_make_data(oct6):
    assert np.all(make_data(oct6, "constant:0.25") == 0.25)
    r = make_data(oct6, "random", seed=3)
    assert np.array_equal(r, make_data(oct6, "random", seed=3))
    assert r.min() >= 0.5 and r.max() <= 1.0
    assert make_data(oct6, "section:0").max() == pytest.approx(1.0)
    assert make_data(oct6, "bump").min() >= 0.5
    for bad in ("constant:-1", "gaussian"):
        with pytest.raises(PreconditionError):
            make_data(oct6, bad)


def test_constant_gauss_root():
    u = constant_gauss_root(0.01, 0.5)
    assert 2 * math.exp(2 * u) - 1 + math.exp(-4 * u) * 0.01 == pytest.approx(0.0, abs=1e-15)
    assert constant_gauss_root(0.0, 0.5) == -0.5 * math.log(2)


# command line

@pytest.mark.parametrize("verb", [v for v in VERBS if v != "reproduce-theorem-a"])
def test_verbs_rerun_byte_identical(verb, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_verb(verb, a) == 0
    assert main([verb, "--config", str(a / "config.json"), "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert "MANIFEST" in names and "config.json" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
    manifest = (a / "MANIFEST").read_text()
    for n in names:
        if n != "MANIFEST":
            assert "%s  %s" % (sha256_file(a / n), n) in manifest


def test_json_values_tagged(tmp_path):
    assert run_verb("gauss", tmp_path) == 0
    rep = json.loads((tmp_path / "gauss.json").read_text())
    leaves = []

    def walk(x):
        if isinstance(x, dict):
            if set(x) == {"value", "provenance"}:
                leaves.append(x)
            else:
                for v in x.values():
                    walk(v)
        elif isinstance(x, list):
            for v in x:
                walk(v)

    walk(rep)
    assert leaves and all(l["provenance"] in ("measured", "exact", "overridden", "input") for l in leaves)


def test_exit_codes(tmp_path):
    assert run_verb("fixedpoint", tmp_path / "p", "--R", "0.1") == 1
    assert main(["surface", "--mesh", "flat-torus(6)", "--out", str(tmp_path / "t")]) == 1
    assert main(["surface", "--mesh", str(tmp_path / "nope.off"), "--out", str(tmp_path / "m")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run_verb("surface", blocker / "sub") == 3


def test_override_stamped(tmp_path):
    assert run_verb("fixedpoint", tmp_path, "--R", "0.1", "--override-hypothesis") == 0
    rep = json.loads((tmp_path / "certificate.json").read_text())
    assert rep["certificate"]["HYPOTHESIS_OVERRIDDEN"] is True
    assert rep["certificate"]["af_bound"]["provenance"] == "overridden"


def test_subprocess_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "curvlab.cli", "criterion", "--g-max", "2000", "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    rep = json.loads((tmp_path / "criterion.json").read_text())
    assert rep["scan"]["g0"]["value"] == 726
    bad = subprocess.run([sys.executable, "-m", "curvlab.cli", "gauss", "--eta", "2", "--out",
                          str(tmp_path / "x")], capture_output=True, text=True)
    assert bad.returncode == 1 and "eta" in bad.stderr
