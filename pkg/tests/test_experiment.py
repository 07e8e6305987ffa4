import json

import numpy as np
import pytest
import yaml

from stochact.cli import main
from stochact.ensemble import ExperimentReport
from stochact.errors import ConfigurationError
from stochact.experiment import (accuracy_csv, emit_report, load_config, materialize, parse_config, plan_method,
                                 run_experiment)
from stochact.model import Act

TINY = {
    "seed": 3,
    "methods": ["relu", "FusRelu2", "StoOldAS2(255)"],
    "train": {"max_epochs": 1, "batch_size": 10, "learning_rate": 0.01},
    "backbone": {"widths": [2], "hidden": 4},
    "datasets": [
        {"name": "blobs", "protocol": "tr-te", "synth": {"recipe": "blobs", "n": 40, "classes": 2, "image_size": 6}},
        {"name": "rings", "protocol": "5cv", "synth": {"recipe": "rings", "n": 40, "classes": 2, "image_size": 6}},
    ],
}


def write_cfg(tmp_path, doc=TINY):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_method_grammar():
    assert plan_method("FusRelu5") == plan_method("FusRelu5")
    assert [p.fixed for p in plan_method("FusRelu5")] == [Act("relu")] * 5
    sto = plan_method("StoFullAS10(255)")
    assert len(sto) == 10 and all(p.draw_from == "FullAS" and p.max_input == 255 for p in sto)
    assert len(plan_method("SOldAS(255)")) == 1
    fus = plan_method("FusFullAS16(255)")
    assert len({p.fixed for p in fus}) == 16
    mixed = plan_method("StoBaseAS8(255)+StoFullAS7(255)")
    assert [p.draw_from for p in mixed] == ["BaseAS"] * 8 + ["FullAS"] * 7
    assert plan_method("melu_k8_255")[0].fixed == Act("melu_k8", 255.0)
    assert plan_method("melu_k8(255)")[0].fixed == Act("melu_k8", 255.0)
    for bad in ("StoNopeAS3", "nonsense", "relu+", "FusRelu"):
        with pytest.raises(ConfigurationError):
            plan_method(bad)


def test_config_validation(tmp_path):
    cfg = load_config(write_cfg(tmp_path))
    assert cfg.seed == 3 and cfg.backbone.widths == (2,) and cfg.train.max_epochs == 1
    for broken in ({**TINY, "methods": ["bogus"]}, {**TINY, "extra": 1}, {**TINY, "datasets": []},
                   {**TINY, "train": {"lr": 1}},
                   {**TINY, "datasets": [{"name": "x", "protocol": "3x", "synth": TINY["datasets"][0]["synth"]}]}):
        with pytest.raises(ConfigurationError):
            parse_config(broken)


def test_run_is_deterministic_and_disjoint(tmp_path):
    cfg = load_config(write_cfg(tmp_path))
    rep1, raw1 = run_experiment(cfg)
    rep2, raw2 = run_experiment(cfg)
    assert json.dumps(raw1, sort_keys=True) == json.dumps(raw2, sort_keys=True)
    assert raw1["disjointness_audits"] == 3 * (1 + 5)
    seeds = [m["seed"] for m in raw1["members"]]
    assert len(set(seeds)) == len(seeds)
    assert rep1.accuracy.shape == (3, 2) and np.all((rep1.accuracy >= 0) & (rep1.accuracy <= 100))
    x, y, split = materialize(cfg.datasets[1], cfg.seed)
    assert split.n_folds == 5 and len(x) == 40


def test_parallel_matches_serial(tmp_path):
    doc = {**TINY, "datasets": TINY["datasets"][:1], "methods": ["FusRelu2"]}
    cfg = load_config(write_cfg(tmp_path, doc))
    _, serial = run_experiment(cfg)
    cfg.jobs = 2
    _, parallel = run_experiment(cfg)
    assert serial["accuracy"] == parallel["accuracy"]


def test_singleton_report_layout(tmp_path):
    rep = ExperimentReport(["relu"], ["blobs"], np.array([[87.5]]))
    emit_report(rep, tmp_path)
    assert (tmp_path / "accuracy.csv").read_text() == "method,blobs,Avg,Rank\nrelu,87.5000,87.5000,1\n"


def test_report_layout_and_reemission(tmp_path):
    rep = ExperimentReport(["a", "b"], ["x", "y", "z"], np.array([[90.0, 80.0, 70.0], [85.0, 86.0, 60.0]]))
    emit_report(rep, tmp_path / "one")
    emit_report(rep, tmp_path / "two")
    rows = [line.split(",") for line in accuracy_csv(rep).splitlines()]
    assert rows[0] == ["method", "x", "y", "z", "Avg", "Rank"] and len(rows) == 3
    assert all(len(r) == 6 for r in rows)
    for name in ("accuracy.csv", "pvalues.csv", "pvalues_greater.csv", "report.txt"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    assert b"\r" not in (tmp_path / "one" / "accuracy.csv").read_bytes()


def test_cli_end_to_end(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["experiment", "--config", str(cfg), "--seed", "11", "--out", str(out), "--jobs", "1"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11 and "numpy" in manifest["versions"]
    assert '"seed": 11' in (out / "manifest.json").read_text()
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["report", str(out)]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == before
    assert "Rank" in capsys.readouterr().out

    train_out = tmp_path / "train"
    assert main(["train", "--config", str(cfg), "--out", str(train_out), "--method", "aplu"]) == 0
    assert (train_out / "model.sact").exists() and (train_out / "loss_curve.csv").exists()
    assert main(["gradcheck", "--points", "20", "--configs", "3"]) == 0
    assert main(["experiment", "--config", str(write_cfg(tmp_path, {**TINY, "methods": ["x"]}))]) == 2
