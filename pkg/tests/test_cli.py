import csv
import json
import math

import pytest

from cone_certify import __version__, config
from cone_certify.cli import csv_text, jsonable, main

FAST = ["--grid", "1024"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_certify_doubling(capsys):
    code, out, _ = run(capsys, "certify", "--map", "doubling", "--obs", "cos1", *FAST)
    assert code == 0
    doc = json.loads(out)
    assert doc["tool"] == "cone-certify" and doc["version"] == __version__
    assert len(doc["config_sha256"]) == 64
    fields = doc["certificate"]["fields"]
    assert fields["D_R"] == pytest.approx(1 + 2 * math.log(3), rel=1e-15)
    assert any("G" in fl for fl in doc["certificate"]["flags"])
    assert set(fields) <= set(doc["certificate"]["provenance"])


def test_certify_gauss(capsys):
    code, out, _ = run(capsys, "certify", "--map", "gauss", "--alpha", "0.2", "--obs", "gauss_x", *FAST)
    assert code == 0
    fields = json.loads(out)["certificate"]["fields"]
    assert fields["gamma"] == pytest.approx(4 / 3, rel=1e-14)
    assert fields["G"] == pytest.approx(10 / 3, rel=1e-14)


def test_missing_observable_is_config_error(capsys):
    code, _, err = run(capsys, "certify", "--map", "doubling")
    assert code == 1 and "observable" in err


def test_bad_tolerance_is_config_error(capsys):
    code, _, err = run(capsys, "certify", "--map", "doubling", "--obs", "cos1", "--tol", "abs=1")
    assert code == 1 and "tolerance" in err


def test_unknown_config_key(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"map": "doubling", "colour": 3}))
    code, _, err = run(capsys, "certify", "--config", str(p))
    assert code == 1 and "colour" in err


def test_cocycle_is_domain_error(capsys):
    code, _, err = run(capsys, "certify", "--map", "doubling", "--obs", "cocycle", *FAST)
    assert code == 2 and "coboundary" in err


def test_cocycle_experiment_is_domain_error(capsys):
    code, _, _ = run(capsys, "experiment", "--map", "doubling", "--obs", "cocycle", "--samples", "10000", *FAST)
    assert code == 2


def test_nonmarkov_certificate(capsys):
    code, out, _ = run(capsys, "certify", "--nonmarkov",
                       "gamma=3,A=1,Nstar=4,DR=2,varf=1,cardA0=2,supf=1,sigma=0.5", "--n-list", "8,16")
    assert code == 0
    rows = json.loads(out)["nonmarkov"]
    assert [r["fields"]["n"] for r in rows] == [8, 16]
    assert rows[0]["fields"]["Delta0_nm"] == 3.51


def test_nonmarkov_needs_sigma(capsys):
    code, _, _ = run(capsys, "certify", "--nonmarkov", "gamma=3,A=1,Nstar=4,DR=2,varf=1,cardA0=2")
    assert code == 1


def test_spectrum_outputs(tmp_path, capsys):
    code, _, _ = run(capsys, "spectrum", "--map", "doubling", "--obs", "cos1", *FAST, "--out", str(tmp_path))
    assert code == 0
    raw = (tmp_path / "spectrum.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(raw.decode().splitlines()))
    first = rows[0]
    assert float(first["z_re"]) == 0 and float(first["lambda_re"]) == pytest.approx(1.0, abs=1e-10)
    P = {(float(r["z_re"]), float(r["z_im"])): (float(r["P_re"]), float(r["P_im"])) for r in rows}
    for (x, y), (pr, pi) in P.items():
        if y != 0:
            qr, qi = P[(x, -y)]
            assert qr == pytest.approx(pr, abs=1e-12) and qi == pytest.approx(-pi, abs=1e-12)
    spectral = json.loads((tmp_path / "spectral.json").read_text())
    assert spectral["sigma2_agreement"] <= 1e-3


def test_check_lemmas_only_filter(capsys):
    code, out, _ = run(capsys, "check-lemmas", "--map", "doubling", "--obs", "cos1", "--only", "6.4", *FAST)
    assert code == 0
    doc = json.loads(out)
    assert [c["id"] for c in doc["checks"]] == ["pressure-real-part"]
    assert doc["assumptions"]["ok"]


def test_check_lemmas_negative_control(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"map": "doubling", "observable": {"preset": "cos1", "sup_norm": 0.5},
                             "grid": 1024, "z_count": 10}))
    code, out, _ = run(capsys, "check-lemmas", "--config", str(p), "--only", "5.1")
    assert code == 4
    doc = json.loads(out)
    check = doc["checks"][0]
    assert doc["violations"] > 0 and check["worst_case"]["violation"]
    assert "sup norm" in check["worst_case"]["reason"]


def test_cone_lab_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["cone-lab", "--dim", "4", "--matrices", "40", "--seed", "7"]
    assert run(capsys, *args, "--out", str(a))[0] == 0
    assert run(capsys, *args, "--out", str(b))[0] == 0
    assert (a / "checks.json").read_bytes() == (b / "checks.json").read_bytes()


def test_experiment_files(tmp_path, capsys):
    out = tmp_path / "e"
    code, _, _ = run(capsys, "experiment", "--map", "doubling", "--obs", "cos1", "--n-list", "4,16",
                     "--samples", "10000", "--seed", "3", *FAST, "--out", str(out))
    assert code in (0, 4)
    raw = (out / "curves.csv").read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "n,distance,slack,feller,certificate,certificate_over_distance"
    assert len(lines) == 3
    doc = json.loads((out / "experiment.json").read_text())
    assert float(lines[1].split(",")[1]) == doc["rows"][0]["distance"]
    assert "config" in doc and "out" not in doc["config"]


def test_print_schema(capsys):
    code, out, _ = run(capsys, "--print-schema")
    assert code == 0 and json.loads(out) == config.SCHEMA


def test_no_command_prints_help(capsys):
    code, _, err = run(capsys)
    assert code == 1 and "usage" in err


def test_config_flags_override_file(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"map": "gauss", "observable": "gauss_x", "grid": 1024}))
    code, out, _ = run(capsys, "certify", "--config", str(p), "--map", "doubling", "--obs", "cos1")
    assert code == 0
    assert json.loads(out)["map"]["name"] == "doubling"


def test_config_hash_ignores_out():
    a = config.validate({"map": "doubling", "out": "x"})
    b = config.validate({"map": "doubling", "out": "y"})
    assert a.sha256 == b.sha256
    assert config.validate({"map": "doubling", "seed": 1}).sha256 != a.sha256


def test_jsonable_and_csv_formatting():
    assert jsonable({"a": math.inf, "b": 1 + 2j, 3: float("nan")}) == {
        "a": "inf", "b": {"re": 1.0, "im": 2.0}, "3": "nan"}
    text = csv_text(["x"], [[0.1]])
    assert text == "x\n0.10000000000000001\n"
