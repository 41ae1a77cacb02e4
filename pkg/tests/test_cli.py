from __future__ import annotations

import dataclasses
import json

import pytest

from srfm.cli import RunConfig, apply_overrides, load_run_config, main
from srfm.config import ConfigError
from srfm.pipeline import load_checkpoint, read_embeddings

from conftest import small_model_config, small_synth


@pytest.fixture
def run_config(tmp_path):
    sc = small_synth(num_domains=4, domain_kinds=["S", "R", "SR", "S"], cold_domain=4, n_cold_train=40)
    model = dataclasses.asdict(small_model_config(sc, num_domains=3))
    doc = {
        "synth": dataclasses.asdict(sc),
        "model": model,
        "train": {"epochs": 1, "batch_size": 32, "lr": 3e-3},
        "paths": {"data_dir": str(tmp_path / "data"), "checkpoint": str(tmp_path / "pre.srfm"),
                  "finetuned": str(tmp_path / "ft.srfm"), "metrics": str(tmp_path / "m.jsonl"),
                  "embeddings": str(tmp_path / "emb.txt")},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path, tmp_path


def test_full_workflow(run_config, capsys):
    cfg, root = run_config
    args = ["--config", str(cfg)]
    assert main(["gen-data", *args]) == 0
    assert (root / "data").is_dir()
    assert main(["pretrain", *args]) == 0
    assert load_checkpoint(root / "pre.srfm").model.domains == [1, 2, 3]
    rows = [json.loads(l) for l in (root / "m.jsonl").read_text().splitlines()]
    assert rows and {r["metric"] for r in rows} >= {"auc", "alignment_js"}

    assert main(["finetune", *args]) == 0
    assert load_checkpoint(root / "ft.srfm").model.domains == [1, 2, 3, 4]

    capsys.readouterr()
    assert main(["evaluate", *args]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["domains"]) == {"1", "2", "3"}

    assert main(["evaluate", *args, "--set", f"evaluate.checkpoint={root / 'ft.srfm'}",
                 "--set", "evaluate.domains=[4]", "--set", f"evaluate.metrics={root / 'e.jsonl'}"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["domains"]) == {"4"}
    assert (root / "e.jsonl").read_text().strip()

    assert main(["export-emb", *args]) == 0
    dom, vecs = read_embeddings(root / "emb.txt")
    assert set(dom.tolist()) == {1, 2, 3} and vecs.shape[1] == 4


def test_resolved_config_on_stderr(run_config, capsys):
    cfg, root = run_config
    assert main(["gen-data", "--config", str(cfg), "--set", "synth.seed=5"]) == 0
    err = capsys.readouterr().err
    start = err.index("{")
    resolved, _ = json.JSONDecoder().raw_decode(err[start:])
    assert resolved["synth"]["seed"] == 5
    assert resolved["paths"]["data_dir"] == str((root / "data").resolve())


def test_config_file_not_mutated(run_config):
    cfg, _ = run_config
    before = cfg.read_bytes()
    main(["gen-data", "--config", str(cfg), "--set", "synth.seed=9"])
    assert cfg.read_bytes() == before


@pytest.mark.parametrize("argv", [
    [],
    ["nonsense"],
    ["pretrain", "--bogus"],
    ["gen-data", "--set", "synth"],
    ["gen-data", "--set", "nosuch.key=1"],
    ["gen-data", "--set", "synth.nosuch=1"],
    ["gen-data", "--set", "model.hidden_dim=0"],
    ["gen-data", "--config", "/nonexistent/run.json"],
    ["finetune", "--set", "finetune.split=freeze_all"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_invalid_json_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["gen-data", "--config", str(bad)]) == 2
    bad.write_text("[1, 2]")
    assert main(["gen-data", "--config", str(bad)]) == 2
    bad.write_text('{"extra": {}}')
    assert main(["gen-data", "--config", str(bad)]) == 2


def test_runtime_errors_exit_1(run_config, capsys):
    cfg, root = run_config
    args = ["--config", str(cfg)]
    # no data yet
    assert main(["pretrain", *args]) == 1
    assert "missing data file" in capsys.readouterr().err
    assert main(["gen-data", *args]) == 0
    # no checkpoint yet
    assert main(["evaluate", *args]) == 1
    (root / "pre.srfm").write_bytes(b"garbage")
    assert main(["evaluate", *args]) == 1
    assert main(["finetune", *args]) == 1


def test_finetune_needs_a_domain(run_config):
    cfg, _ = run_config
    assert main(["finetune", "--config", str(cfg), "--set", "synth.cold_domain=0"]) == 2


def test_gradcheck_command(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("max_relative_error ")
    assert float(out.split()[1]) < 1e-4
    assert main(["gradcheck", "--set", "gradcheck.tolerance=0"]) == 1


def test_apply_overrides_is_pure():
    doc = {"train": {"epochs": 3}}
    out = apply_overrides(doc, ["train.epochs=7", "train.lr=0.01", "paths.data_dir=somewhere"])
    assert doc == {"train": {"epochs": 3}}
    assert out["train"] == {"epochs": 7, "lr": 0.01}
    assert out["paths"]["data_dir"] == "somewhere"


def test_roundtrip_to_dict(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = load_run_config(None)
    again = RunConfig.from_dict(rc.to_dict())
    assert again.to_dict() == rc.to_dict()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"train": []})
