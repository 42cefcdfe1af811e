import json
from importlib import resources

import jsonschema
import pytest

from scenvi.cli import main


def schema(name):
    return json.loads(resources.files("scenvi").joinpath(f"schemas/{name}.schema.json").read_text())


def run(argv, capsys):
    rc = main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


BOX = {"operator": {"type": "affine", "A": [[1, 0], [0, 1]], "b": [-3, 2]},
       "scenarios": [{"dim": 2, "constraints": [{"type": "box", "lower": [0, 0], "upper": [1, 1]}]}]}
TWO = {"operator": {"type": "affine", "A": [[1, 0], [0, 1]], "b": [-2, -2]},
       "scenarios": [{"dim": 2, "constraints": [{"type": "halfspace", "a": [1, 0], "b": 1}]},
                     {"dim": 2, "constraints": [{"type": "halfspace", "a": [1, 0], "b": 2}]}]}
QVI = {"operator": {"type": "affine", "A": [[1]], "b": [0]},
       "scenarios": [{"dim": 1, "constraints": [{"type": "box", "lower": [-1], "upper": [None]},
                                                 {"type": "halfspace", "a": [1], "b": 1, "anchor_coef": [0.5]}]}]}


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def test_certify(capsys):
    rc, out, err = run(["certify", "--k", "7", "--n-samples", "500", "--beta", "1e-6"], capsys)
    assert rc == 0
    d = json.loads(out)
    jsonschema.validate(d, schema("certify"))
    jsonschema.validate(json.loads(err), schema("manifest"))
    assert abs(d["epsilon"] - 0.0649) < 5e-4


def test_certify_invalid(capsys):
    rc, out, err = run(["certify", "--k", "-1", "--n-samples", "500", "--beta", "1e-6"], capsys)
    assert rc == 1 and out == ""
    e = json.loads(err)
    jsonschema.validate(e, schema("error"))
    assert e["code"] == "invalid-query"


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_solve_vi(tmp_path, capsys):
    rc, out, _ = run(["solve-vi", "--problem", write(tmp_path, "p.json", BOX)], capsys)
    d = json.loads(out)
    jsonschema.validate(d, schema("solve-vi"))
    assert d["x"] == pytest.approx([1.0, 0.0], abs=1e-6)


def test_solve_qvi(tmp_path, capsys):
    rc, out, _ = run(["solve-vi", "--qvi", "--problem", write(tmp_path, "q.json", QVI)], capsys)
    d = json.loads(out)
    assert rc == 0 and d["mode"] == "QVI"
    assert d["x"][0] == pytest.approx(0.0, abs=1e-6)


def test_support(tmp_path, capsys):
    rc, out, _ = run(["support", "--problem", write(tmp_path, "t.json", TWO)], capsys)
    d = json.loads(out)
    jsonschema.validate(d, schema("support"))
    assert d["support_indices"] == [0] and d["degeneracy_check"] == "passed"


def test_bad_problem(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    rc, _, err = run(["solve-vi", "--problem", str(p)], capsys)
    assert rc == 1 and json.loads(err)["code"] == "parse-error"
    rc, _, err = run(["solve-vi", "--problem", str(tmp_path / "missing.json")], capsys)
    assert rc == 1 and json.loads(err)["code"] == "io-error"


@pytest.mark.parametrize("mode", ["mc", "gaussian"])
def test_risk(tmp_path, capsys, mode):
    spec = {"a": [1.0, 0.0], "threshold": 0.0, "mu": [0.0, 0.0], "Sigma": [[1.0, 0.0], [0.0, 1.0]]}
    rc, out, _ = run(["risk", "--mode", mode, "--spec", write(tmp_path, "r.json", spec), "--samples", "10000"], capsys)
    d = json.loads(out)
    jsonschema.validate(d, schema("risk"))
    assert d["value"] == pytest.approx(0.5, abs=0.02)


def test_risk_non_psd(tmp_path, capsys):
    spec = {"a": [1.0], "threshold": 0.0, "mu": [0.0], "Sigma": [[-1.0]]}
    rc, _, err = run(["risk", "--mode", "mc", "--spec", write(tmp_path, "r.json", spec)], capsys)
    assert rc == 1 and json.loads(err)["code"] == "non-psd-covariance"


def test_coverage_and_manifest(tmp_path, capsys):
    csvp, man = tmp_path / "c.csv", tmp_path / "m.json"
    rc, out, err = run(["coverage", "--instance", "builtin-1d", "--trials", "5", "--csv", str(csvp),
                        "--manifest", str(man)], capsys)
    assert rc == 0 and err == ""
    jsonschema.validate(json.loads(out), schema("coverage"))
    m = json.loads(man.read_text())
    jsonschema.validate(m, schema("manifest"))
    assert str(csvp) in m["outputs"]
    assert csvp.read_text().startswith("trial,s_star,epsilon,risk,violated\n")


def test_dr_experiment(tmp_path, capsys):
    cfg = write(tmp_path, "cfg.json", {"M": 2, "T": 4, "N": 15, "mc_draws": 1000, "cost_samples": 20})
    rc, out, _ = run(["dr-experiment", "--config", cfg, "--seed", "3", "--out-dir", str(tmp_path / "o"),
                      "--output", str(tmp_path / "res.json")], capsys)
    assert rc == 0
    d = json.loads(out)
    jsonschema.validate(d, schema("dr-experiment"))
    assert (tmp_path / "o" / "report.json").read_text() == out
    assert (tmp_path / "res.json").read_text() == out


def test_dr_experiment_stage_error(tmp_path, capsys):
    cfg = write(tmp_path, "cfg.json", {"M": 2, "T": 4, "N": 15, "data": {"type": "csv", "path": "none.csv"}})
    rc, _, err = run(["dr-experiment", "--config", cfg], capsys)
    assert rc == 1
    e = json.loads(err)
    jsonschema.validate(e, schema("error"))
