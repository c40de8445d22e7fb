import csv
import io
import json

import numpy as np
import pytest

from regstruct.cli import derive_seed, load_document, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("lift")
    assert main(["lift", "--d", "1", "--n", "16", "--n-t", "64", "--gamma", "2", "--noise", "white",
                 "--out", str(d)]) == 0
    return d


def test_symbols_census_json(capsys):
    code, out, _ = run(capsys, "symbols", "--gamma", "0")
    data = json.loads(out)
    assert code == 0
    renders = {r["render"] for r in data["symbols"]} if isinstance(data, dict) else {r["render"] for r in data}
    assert {"Xi", "I(Xi)^3", "I(Xi)^2"} <= renders


def test_csv_has_header(capsys):
    code, out, _ = run(capsys, "symbols", "--gamma", "0", "--format", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0][:2] == ["render", "homogeneity"] and len(rows) > 2


@pytest.mark.parametrize("argv,code", [
    (["symbols", "--bogus"], 2),
    (["nosuch"], 2),
    (["check-model", "/nonexistent/model"], 1),
    (["lift", "--d", "1"], 2),
    (["converge", "--spec", "x", "--eps", "0.1"], 1),
])
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_manifest(capsys, tmp_path):
    code, _, _ = run(capsys, "wick", "--n", "4", "--out", str(tmp_path), "--seed", "9")
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert code == 0
    assert man["seed"] == 9 and man["outputs"][0] == "wick.json"
    assert len(man["config_hash"]) == 64
    assert json.loads((tmp_path / "wick.json").read_text())["polynomial"] == "3*c**2 - 6*c*x**2 + x**4"


def test_config_hash_is_stable(capsys, tmp_path):
    run(capsys, "wick", "--n", "3", "--out", str(tmp_path / "a"))
    run(capsys, "wick", "--n", "3", "--out", str(tmp_path / "b"))
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["config_hash"] == b["config_hash"]


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("n = 2\nvariance = 5\n")
    code, out, _ = run(capsys, "wick", "--config", str(cfg))
    assert code == 0 and json.loads(out)["polynomial"] == "x**2 - 5"
    code, out, _ = run(capsys, "wick", "--config", str(cfg), "--n", "1")
    assert json.loads(out)["n"] == 1
    cfg.write_text("bogus = 1\n")
    assert run(capsys, "wick", "--config", str(cfg))[0] == 2


def test_load_document_dotted_keys(tmp_path):
    p = tmp_path / "s.conf"
    p.write_text("d = 1\npotential.kind = cubic\npotential.mass = 0.5\n# comment\n")
    assert load_document(str(p)) == {"d": 1, "potential": {"kind": "cubic", "mass": 0.5}}


def test_derive_seed():
    assert derive_seed(3, 1) == derive_seed(3, 1)
    assert derive_seed(3, 1) != derive_seed(3, 2)


def test_renorm_eq_constant_conflict(capsys):
    code, out, _ = run(capsys, "renorm-eq", "--c2", "1", "--c4", "2")
    data = json.loads(out)
    assert code == 0
    assert float(data["constant_derived"]) == -5 and float(data["constant_stated"]) == -7


def test_check_model(capsys, model_dir):
    code, out, _ = run(capsys, "check-model", str(model_dir), "--lambdas", "0.25,0.125")
    data = json.loads(out)
    assert code == 0 and data["algebraic_residual"] < 1e-10


def test_reconstruct_phi4(capsys, model_dir, tmp_path):
    code, out, _ = run(capsys, "reconstruct", str(model_dir), "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["relative_error"] < 1e-12
    assert (tmp_path / "reconstruction.bin").stat().st_size == 64 * 16 * 8


def test_simulate_is_deterministic(capsys, tmp_path):
    spec = tmp_path / "spec.conf"
    spec.write_text("d = 1\nn = 16\ndt = 0.001\nT = 0.01\nnoise = white\nsaves = 2\n")
    _, a, _ = run(capsys, "simulate", "--spec", str(spec), "--seed", "4", "--format", "csv")
    _, b, _ = run(capsys, "simulate", "--spec", str(spec), "--seed", "4", "--format", "csv")
    _, c, _ = run(capsys, "simulate", "--spec", str(spec), "--seed", "5", "--format", "csv")
    assert a == b and a != c


def test_rough_area(capsys, tmp_path):
    t = np.linspace(0, 1, 65)
    p = tmp_path / "path.csv"
    p.write_text("t,w1,w2\n" + "\n".join(f"{a},{np.cos(2 * np.pi * a)},{np.sin(2 * np.pi * a)}" for a in t))
    code, out, _ = run(capsys, "rough", "--input", str(p), "--op", "area")
    assert code == 0
    data = json.loads(out)
    ww = np.array(data["endpoint"])
    assert 0.5 * (ww[0, 1] - ww[1, 0]) == pytest.approx(np.pi, rel=1e-2)
    assert data["chen_defect"] < 1e-12
