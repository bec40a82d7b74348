import csv
import json
import subprocess
import sys

import pytest

from survunc.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A small end-to-end pipeline shared by the tests below."""
    w = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--n", 800, "--seed", 3, "--out", w / "sim") == 0
    assert run("simulate", "--n", 300, "--seed", 3, "--ood", "--out", w / "simood") == 0
    data = w / "sim" / "data.csv"
    assert run("fit", "--data", data, "--model", "deepsurv", "--epochs", 10, "--out", w / "ds") == 0
    assert run("fit", "--data", data, "--model", "rsf", "--n-estimators", 10, "--out", w / "rsf") == 0
    model = w / "ds" / "model.survmodel.json"
    for uq in ("survunc-rf", "survunc-mlp", "ensemble", "mcdropout"):
        assert run("uq-fit", "--data", data, "--model", model, "--uq", uq, "--ensemble-size", 2, "--mc-passes", 5,
                   "--meta-n-estimators", 10, "--out", w / f"uq_{uq}") == 0
    q = w / "uq_survunc-rf" / "quantifier.json"
    assert run("eval", "selective", "--data", data, "--model", model, "--quantifier", q, "--bootstrap", 5,
               "--out", w / "sel") == 0
    assert run("eval", "mispredict", "--data", data, "--model", model, "--quantifier", q, "--out", w / "mis") == 0
    assert run("eval", "ood", "--data", data, "--ood-data", w / "simood" / "ood.csv", "--quantifier",
               w / "uq_ensemble" / "quantifier.json", "--out", w / "ood") == 0
    assert run("predict", "--data", data, "--model", w / "rsf" / "model.survmodel.json", "--out", w / "pred") == 0
    assert run("uq-score", "--data", data, "--quantifier", q, "--out", w / "score") == 0
    assert run("metrics", "--data", data, "--model", model, "--bootstrap", 5, "--out", w / "met") == 0
    return w


RUNS = ("sim", "simood", "ds", "rsf", "uq_survunc-rf", "uq_survunc-mlp", "uq_ensemble", "uq_mcdropout", "sel", "mis",
        "ood", "pred", "score", "met")


def test_reports_written(work):
    expected = {"sim": ["data.csv", "oracle.json"], "sel": ["selective.csv", "selective_replicates.csv"],
                "mis": ["mispredict.csv", "scatter.csv"], "ood": ["ood.csv", "hist.csv"], "pred": ["survival.csv"],
                "score": ["scores.csv"], "met": ["metrics.csv", "metrics.json"], "ds": ["model.survmodel.json"]}
    for d, files in expected.items():
        for f in files + ["run.json"]:
            assert (work / d / f).is_file(), f"{d}/{f}"
    rows = list(csv.DictReader(open(work / "sel" / "selective.csv")))
    assert len(rows) == 6
    doc = json.loads((work / "sel" / "run.json").read_text())
    assert doc["command"] == "eval" and doc["args"]["protocol"] == "selective" and "seeds" in doc


@pytest.mark.parametrize("name", RUNS)
def test_rerun_from_run_json_is_bitwise_identical(work, name, tmp_path):
    src = work / name
    doc = json.loads((src / "run.json").read_text())
    for threads in (1, 3):
        out = tmp_path / f"t{threads}"
        assert run(doc["command"], "--config", src / "run.json", "--threads", threads, "--out", out) == 0
        for f in src.iterdir():
            if f.name != "run.json":
                assert (out / f.name).read_bytes() == f.read_bytes(), f"{name}/{f.name} threads={threads}"


def test_exit_codes(work, tmp_path, capsys):
    data = work / "sim" / "data.csv"
    assert run("fit", "--model", "cox", "--out", tmp_path / "a") == 2
    assert run("fit", "--data", tmp_path / "missing.csv", "--model", "cox", "--out", tmp_path / "b") == 2
    assert run("simulate", "--censoring", 1.5, "--out", tmp_path / "c") == 2
    assert run("uq-fit", "--data", data, "--model", work / "rsf" / "model.survmodel.json", "--uq", "mcdropout",
               "--out", tmp_path / "d") == 1
    assert "does not support dropout" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("duration,event,x\n1.0,2,0.5\n")
    assert run("fit", "--data", bad, "--model", "cox", "--out", tmp_path / "e") == 1
    assert "row" in capsys.readouterr().err


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "survunc.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("survunc")
