import json

import pytest

from celt.checkpoint import read_manifest
from celt.cli import EXIT_IO, EXIT_USAGE, EXIT_VALIDATION, main, parse_history
from celt.data import load_corpus
from pipeline import TINY, run, scripted_pipeline


def test_gen_data_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("gen-data", "--seed", 7, "--num-dialogues", 20, "--out", a) == 0
    assert run("gen-data", "--seed", 7, "--num-dialogues", 20, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(load_corpus(a).dialogues) == 20
    assert json.loads((tmp_path / "a.json.config.json").read_text())["settings"]["seed"] == 7


@pytest.mark.parametrize("argv", [[], ["train"], ["eval", "--no-such-flag"], ["gen-data", "--seed", "x"]])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_eval_without_checkpoint_is_a_usage_error(tmp_path, capsys):
    assert run("eval", "--corpus", tmp_path / "c.json", "--vocab", tmp_path / "v.txt") == EXIT_USAGE
    assert "checkpoint-in" in capsys.readouterr().err


def test_missing_file_is_an_io_error(tmp_path, capsys):
    assert run("build-vocab", "--corpus", tmp_path / "absent.json", "--out", tmp_path / "v.txt") == EXIT_IO


def test_bad_config_is_a_validation_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "c.json") == EXIT_VALIDATION
    cfg.write_text("{broken")
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "c.json") == EXIT_VALIDATION


def test_flag_beats_config_beats_default(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "num_dialogues": 12}))
    assert run("gen-data", "--config", cfg, "--seed", 9, "--out", tmp_path / "c.json") == 0
    settings = json.loads((tmp_path / "c.json.config.json").read_text())["settings"]
    assert settings["seed"] == 9
    assert settings["num_dialogues"] == 12
    assert settings["vocab_size"] == 800


def test_parse_history():
    turns = parse_history(["user: hi there", "System: which day"])
    assert [t.speaker for t in turns] == ["user", "system"]
    assert turns[1].utterance == "which day"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    metrics = scripted_pipeline(root)
    return root, metrics


def test_pipeline_writes_lineage_and_effective_config(trained):
    root, metrics = trained
    manifest = read_manifest(root / "final")
    assert manifest.lineage["tag"] == "FINAL" and manifest.lineage["parent"] == "THETA_C"
    assert len(manifest.lineage["history"]) == 4
    assert manifest.extra["effective_config"]["settings"]["hidden_size"] == 16
    assert manifest.extra["t_u"] in (0.3, 0.4, 0.5)
    report = json.loads(metrics)
    assert report["effective_config"]["paths"]["checkpoint_in"] == "final"
    assert 0.0 <= report["metrics"]["frame_accuracy"] <= 1.0


def test_predict_prints_one_frame(trained, monkeypatch, capsys):
    root, _ = trained
    monkeypatch.chdir(root)
    capsys.readouterr()
    code = run("predict", "--checkpoint-in", "final", "--vocab", "vocab.txt", "--history", "system: which day",
               "--utterance", "friday please")
    assert code == 0
    frame = json.loads(capsys.readouterr().out)
    assert set(frame) == {"intent", "user_acts", "slots"}
    assert all(s["end_word"] <= 2 for s in frame["slots"])


def test_stage_order_is_enforced(trained, monkeypatch, capsys):
    root, _ = trained
    monkeypatch.chdir(root)
    code = run("adapt-unsup", "--corpus", "corpus.json", "--vocab", "vocab.txt", "--epochs", 1,
               "--checkpoint-in", "final", "--checkpoint-out", "bad", *TINY)
    assert code == EXIT_VALIDATION


def test_vocab_mismatch_is_rejected(trained, monkeypatch, capsys):
    root, _ = trained
    monkeypatch.chdir(root)
    assert run("build-vocab", "--corpus", "corpus.json", "--vocab-size", 200, "--out", "other.txt") == 0
    assert run("eval", "--corpus", "corpus.json", "--vocab", "other.txt", "--checkpoint-in", "final") == EXIT_VALIDATION


def test_pipeline_is_deterministic(trained, tmp_path):
    _, first = trained
    assert scripted_pipeline(tmp_path) == first


def test_grad_check_command(tmp_path):
    out = tmp_path / "g.json"
    assert run("grad-check", "--out", out) == 0
    report = json.loads(out.read_text())
    assert not report["failures"]
    assert max(report["worst"].values()) < report["tolerance"]
