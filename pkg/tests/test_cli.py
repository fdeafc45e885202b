import json

import pytest
import yaml

from sade.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main

from conftest import needs_solver

pytestmark = needs_solver


def _config(tmp_path, name="run.yaml", **raw):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    cfg = _config(root, synth={"name": "binary-denial", "n": 60, "violation_rate": 0.1})
    assert main(["synth", "--config", cfg, "--out", str(root / "data"), "--seed", "4"]) == EXIT_OK
    return root / "data"


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    cfg = _config(
        root,
        data=str(synth_dir / "data.csv"),
        schema=str(synth_dir / "schema.yaml"),
        constraints=str(synth_dir / "constraints.smt"),
        train={"epochs": 2},
        model=str(root / "out" / "model.json"),
        test=str(synth_dir / "data.csv"),
        deltas=[0.01, 0.1],
        cv={"k": 2, "grid": {"alpha": [0.5, 1.0, 2.0]}},
    )
    code = main(["train", "--config", cfg, "--out", str(root / "out")])
    return root, cfg, code


def test_synth_outputs(synth_dir):
    assert {p.name for p in synth_dir.iterdir()} == {"data.csv", "constraints.smt", "schema.yaml", "synth.json"}
    meta = json.loads((synth_dir / "synth.json").read_text())
    assert len(meta["violating_rows"]) == 6 and meta["seed"] == 4


def test_train_is_proven(trained, capsys):
    root, _, code = trained
    assert code == EXIT_OK
    out = root / "out"
    assert json.loads((out / "certificate.json").read_text())["status"] == "proven"
    model = json.loads((out / "model.json").read_text())
    assert "preprocessing" in model and model["feature_names"]
    report = json.loads((out / "run_report.json").read_text())
    assert report["iterations"] == 24 and report["config"]["epochs"] == 2


def test_verify(trained, capsys):
    root, cfg, _ = trained
    assert main(["verify", "--config", cfg, "--out", str(root / "verify")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["status"] == "proven"


def test_adi_is_zero(trained, capsys):
    root, cfg, _ = trained
    assert main(["adi", "--config", cfg, "--out", str(root / "adi")]) == EXIT_OK
    reports = json.loads((root / "adi" / "adi.json").read_text())["reports"]
    assert [r["adi"] for r in reports] == [0.0, 0.0]


def test_eval(trained):
    root, cfg, _ = trained
    assert main(["eval", "--config", cfg, "--out", str(root / "eval")]) == EXIT_OK
    rep = json.loads((root / "eval" / "eval.json").read_text())
    assert rep["metric"] == "accuracy" and rep["n_test_total"] == 60 and rep["excluded_count"] == 6
    assert 0 <= rep["value"] <= 1


def test_cv_selects_from_grid(trained):
    root, cfg, _ = trained
    assert main(["cv", "--config", cfg, "--out", str(root / "cv"), "--jobs", "1"]) == EXIT_OK
    res = json.loads((root / "cv" / "cv.json").read_text())
    assert res["selected"]["alpha"] in (0.5, 1.0, 2.0)
    assert (root / "cv" / "cv.csv").is_file()


def test_train_is_deterministic(trained):
    root, cfg, _ = trained
    assert main(["train", "--config", cfg, "--out", str(root / "again")]) == EXIT_OK
    assert (root / "again" / "model.json").read_text() == (root / "out" / "model.json").read_text()


def test_exact_train(synth_dir, tmp_path):
    cfg = _config(
        tmp_path,
        data=str(synth_dir / "data.csv"),
        schema=str(synth_dir / "schema.yaml"),
        constraints=str(synth_dir / "constraints.smt"),
        train={"exact_max_instances": 60},
    )
    assert main(["exact-train", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "run_report.json").read_text())
    assert rep["certificate"]["status"] == "proven" and rep["satisfied_soft"] <= rep["n_soft"]


def test_unsat_constraints(synth_dir, tmp_path, capsys):
    (tmp_path / "bad.smt").write_text("(constraint c (forall (x) (< (pred x approved) (pred x approved))))")
    cfg = _config(
        tmp_path,
        data=str(synth_dir / "data.csv"),
        schema=str(synth_dir / "schema.yaml"),
        constraints="bad.smt",  # relative to the config file
    )
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_ERROR
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "no-admissible-model" and "no admissible model found" in err["message"]


def test_missing_constraint_file(synth_dir, tmp_path, capsys):
    cfg = _config(tmp_path, data=str(synth_dir / "data.csv"), schema=str(synth_dir / "schema.yaml"), constraints="nope.smt")
    assert main(["train", "--config", cfg]) == EXIT_ERROR
    assert json.loads(capsys.readouterr().err)["error"] == "file-not-found"


def test_bad_inputs(synth_dir, tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == EXIT_ERROR
    cfg = _config(tmp_path, "a.yaml", data=str(synth_dir / "data.csv"), schema=str(synth_dir / "schema.yaml"),
                  constraints=str(synth_dir / "constraints.smt"), train={"alpha": -1})
    assert main(["train", "--config", cfg]) == EXIT_ERROR
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "invalid-input"
    (tmp_path / "broken.smt").write_text("(constraint c (forall (x) (> (pred x nope) 0)))")
    cfg = _config(tmp_path, "b.yaml", data=str(synth_dir / "data.csv"), schema=str(synth_dir / "schema.yaml"),
                  constraints="broken.smt")
    assert main(["train", "--config", cfg]) == EXIT_ERROR
    assert json.loads(capsys.readouterr().err)["error"] == "constraint-error"


def test_verify_fails_on_bad_model(trained, tmp_path):
    root, cfg, _ = trained
    raw = yaml.safe_load(open(cfg))
    model = json.loads((root / "out" / "model.json").read_text())
    model["weights"] = [["0", "0", "0", "0", "1"]]  # approve everyone
    (tmp_path / "m.json").write_text(json.dumps(model))
    raw["model"] = str(tmp_path / "m.json")
    cfg2 = _config(tmp_path, **raw)
    assert main(["verify", "--config", cfg2, "--out", str(tmp_path / "v")]) == EXIT_FAIL
    cert = json.loads((tmp_path / "v" / "certificate.json").read_text())
    assert cert["status"] == "counterexample" and cert["counterexample"]["original"]
    assert main(["adi", "--config", cfg2, "--out", str(tmp_path / "a")]) == EXIT_OK
    reports = json.loads((tmp_path / "a" / "adi.json").read_text())["reports"]
    assert reports[1]["adi"] > 0
