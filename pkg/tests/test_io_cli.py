import csv
import io
import json

import numpy as np
import pytest

from multipass.cli import main
from multipass.errors import ParseError
from multipass.io import (
    config_from_dict,
    dumps,
    load_model,
    molecule_from_dict,
    molecule_to_dict,
    read_json,
    rotation_from_json,
)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------------------
# readers


def test_molecule_round_trip():
    obj = {"label": "m", "points": [{"q": 1, "x": [0, 0, 1]}, {"q": -1, "x": [0, 0, -1]}]}
    mol = molecule_from_dict(obj)
    again = molecule_from_dict(molecule_to_dict(mol))
    np.testing.assert_array_equal(mol.positions, again.positions)
    assert again.label == "m"


@pytest.mark.parametrize("obj, where", [
    ({"points": [{"q": 1, "x": [0, 0]}]}, "points[0].x"),
    ({"points": [{"x": [0, 0, 0]}]}, "'q'"),
    ({"points": [{"q": "a", "x": [0, 0, 0]}]}, "points[0].q"),
    ({"points": []}, "points"),
])
def test_molecule_errors_name_the_field(obj, where):
    with pytest.raises(ParseError, match=where.replace("[", r"\[").replace("]", r"\]")):
        molecule_from_dict(obj)


def test_rotation_and_config_forms():
    quat = rotation_from_json([0.0, 0.0, 0.0, 1.0]).matrix
    mat = rotation_from_json(np.diag([-1.0, -1.0, 1.0]).tolist()).matrix
    ax = rotation_from_json("0:0:1:3.141592653589793").matrix
    np.testing.assert_allclose(quat, mat, atol=1e-12)
    np.testing.assert_allclose(ax, mat, atol=1e-12)
    cfg = config_from_dict({"L": 4.0})
    assert cfg.L == 4.0
    with pytest.raises(ParseError):
        config_from_dict({})
    with pytest.raises(ParseError):
        rotation_from_json([1, 2])


def test_read_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"a": 1,\n "b": }')
    with pytest.raises(ParseError, match="line 2"):
        read_json(p)


def test_dumps_is_deterministic():
    a = dumps({"b": np.float64(1.5), "a": np.arange(2)})
    assert a == dumps({"a": [0, 1], "b": 1.5})
    assert list(json.loads(a)) == ["a", "b"]


def test_model_file_resolves_relative_paths(data_dir):
    me = load_model(data_dir / "quad_model.json")
    np.testing.assert_allclose(me.m1.Q, np.diag([2.0, -1, -1]), atol=1e-14)
    assert me.leading_orders() == (2, 2)


# ---------------------------------------------------------------------------
# command line


def test_multipoles_command(capsys, data_dir):
    code, out, _ = run(capsys, "multipoles", data_dir / "lin3.json", "--order", 2)
    assert code == 0
    obj = json.loads(out)
    np.testing.assert_allclose(obj["Q"], np.diag([2.0, -1, -1]), atol=1e-14)
    assert "O" not in obj


def test_interact_output_is_byte_identical(capsys, data_dir):
    args = ("interact", data_dir / "polar.json", data_dir / "tetra.json", "--L", 12.0,
            "--U", "0:1:0:0.3", "--order", 5)
    first = run(capsys, *args)
    second = run(capsys, *args)
    assert first[0] == 0 and first[1] == second[1]
    assert set(json.loads(first[1])["table"]) >= {"1,1", "1,3", "2,3"}


def test_interact_sweep_csv(capsys, data_dir):
    code, out, _ = run(capsys, "interact", data_dir / "polar.json", data_dir / "lin3.json", "--sweep", "10:80:3")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 4
    L = [float(r["L"]) for r in rows]
    np.testing.assert_allclose(L, [10, 20, 40, 80])
    for r in rows:
        assert abs(float(r["value"]) - float(r["direct_coulomb"])) < 1e-3


def test_critical_commands(capsys, data_dir, tmp_path):
    code, out, _ = run(capsys, "critical", "qq")
    qq = json.loads(out)
    assert code == 0 and qq["g_min"] == pytest.approx(-12.0) and qq["h_max"] == pytest.approx(24.0)
    code, out, _ = run(capsys, "critical", "scan", "--nm", "1,1", "--samples", 2000, "--seed", 7)
    assert code == 0 and json.loads(out)["counterexamples"] == []
    code, out, _ = run(capsys, "critical", "connect", "--nm", "1,1",
                       "--from", data_dir / "dd_from.json", "--to", data_dir / "dd_to.json", "--delta", 0.3)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and len(rows) > 2
    code, out, _ = run(capsys, "critical", "octopole", data_dir / "tetra.json")
    assert code == 0 and json.loads(out)["nondegenerate"] is True


def test_vdw_and_dress_commands(capsys, data_dir, tmp_path):
    code, out, _ = run(capsys, "vdw-toy", "--a", data_dir / "toy_a.json", "--b", data_dir / "toy_b.json",
                       "--samples", 200)
    assert code == 0 and json.loads(out)["ok"] is True
    target = tmp_path / "dress.csv"
    code, _, _ = run(capsys, "dress", "--family", data_dir / "family.json", "--out", target)
    rows = list(csv.DictReader(target.open()))
    assert code == 0 and rows[0].keys() == {"t", "rayleigh", "E"}


def test_mountain_pass_command(capsys, data_dir, tmp_path):
    code, out, _ = run(capsys, "mountain-pass", "--model", data_dir / "quad_model.json",
                       "--from", data_dir / "t_shape_a.json", "--to", data_dir / "t_shape_b.json",
                       "--nodes", 32, "--out-dir", tmp_path)
    assert code == 0
    summary = json.loads(out)
    ts = json.loads((tmp_path / "transition_state.json").read_text())
    assert ts["negative_count"] == 1
    assert ts["energy"] >= summary["max_energy"] - 1e-3
    assert (tmp_path / "path.csv").read_text().startswith("t,L,")


def test_exit_codes(capsys, data_dir, tmp_path):
    assert run(capsys, "no-such-command")[0] == 64
    assert run(capsys)[0] == 64
    assert run(capsys, "critical", "scan", "--nm", "1,1")[0] == 64
    code, _, err = run(capsys, "interact", data_dir / "polar.json", data_dir / "lin3.json", "--L", 1.0)
    assert code == 2 and json.loads(err)["error"]
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, _, err = run(capsys, "multipoles", bad)
    assert code == 2 and "line 1" in json.loads(err)["message"]
    code, _, err = run(capsys, "critical", "scan", "--nm", "2,3", "--seed", 1, "--samples", 10)
    assert code == 2


def test_thread_variable(capsys, data_dir, monkeypatch):
    monkeypatch.setenv("MULTIPASS_THREADS", "1")
    assert run(capsys, "multipoles", data_dir / "lin3.json")[0] == 0
    monkeypatch.setenv("MULTIPASS_THREADS", "zero")
    assert run(capsys, "multipoles", data_dir / "lin3.json")[0] == 64
