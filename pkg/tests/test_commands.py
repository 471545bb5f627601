import json

import pytest
from typer.testing import CliRunner

from sefre.checkpoint import load_checkpoint, save_checkpoint
from sefre.corpus import NONE_RELATION, RelationSchema, write_schema
from sefre.main import app

runner = CliRunner()

TINY_CONFIG = {
    "architecture": "cnn",
    "batch_size": 16,
    "max_epochs": 2,
    "ramp_epochs": 1,
    "word_dim": 8,
    "pos_dim": 2,
    "max_distance": 10,
    "filters": 8,
    "kernel": 3,
    "gru_hidden": 4,
    "attention_dim": 4,
    "learning_rate": 0.05,
    "seed": 3,
}

SYNTH_ARGS = [
    "--relations", "3", "--samples-per-class", "12", "--none-ratio", "1.0", "--vocab-size", "40",
    "--min-length", "6", "--max-length", "10",
]


def _invoke(*args, env=None):
    return runner.invoke(app, ["--color", "off", *map(str, args)], env=env)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    result = _invoke("synth", "--out", out, "--seed", "0", *SYNTH_ARGS)
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus_dir, config_file):
    out = tmp_path_factory.mktemp("run")
    result = _invoke("train", corpus_dir / "corpus.jsonl", "--schema", corpus_dir / "schema.json", "--out", out, "--config", config_file)
    assert result.exit_code == 0, result.output
    return out


def test_synth_writes_corpus_schema_and_manifest(corpus_dir):
    lines = (corpus_dir / "corpus.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 72
    assert all("noise_truth" in json.loads(line) for line in lines)
    assert json.loads((corpus_dir / "schema.json").read_text(encoding="utf-8"))["relations"][0] == NONE_RELATION
    manifest = json.loads((corpus_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 0


def test_synth_rejects_invalid_noise_rate(tmp_path):
    result = _invoke("synth", "--out", tmp_path, "--pos-noise", "1.5")
    assert result.exit_code == 2


def test_train_writes_run_artifacts(trained):
    for name in ("checkpoint.json", "train_log.jsonl", "manifest.json", "filter_report.jsonl", "filter_summary.json", "validation.jsonl"):
        assert (trained / name).exists(), name
    records = [json.loads(line) for line in (trained / "train_log.jsonl").read_text(encoding="utf-8").splitlines()]
    assert [r["epoch"] for r in records] == [1, 2]
    manifest = json.loads((trained / "manifest.json").read_text(encoding="utf-8"))
    assert len(manifest["epoch_seconds"]) == 2
    assert all(r["run_id"] == manifest["id"] for r in records)


def test_train_is_byte_reproducible(tmp_path, corpus_dir, config_file, trained):
    result = _invoke("train", corpus_dir / "corpus.jsonl", "--schema", corpus_dir / "schema.json", "--out", tmp_path, "--config", config_file)
    assert result.exit_code == 0, result.output
    for name in ("train_log.jsonl", "checkpoint.json", "filter_report.jsonl"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes(), name


def test_eval_reproduces_best_validation_score(tmp_path, trained):
    records = [json.loads(line) for line in (trained / "train_log.jsonl").read_text(encoding="utf-8").splitlines()]
    checkpoint = load_checkpoint(trained / "checkpoint.json")
    best = next(r for r in records if r["epoch"] == checkpoint.best_epoch)

    report_path = tmp_path / "report.json"
    result = _invoke("eval", trained / "checkpoint.json", trained / "validation.jsonl", "--out", report_path)
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["f1"] == best["val_f1"]
    assert report["threshold"] == checkpoint.threshold
    assert report["run_id"] == checkpoint.run_id


def test_eval_threshold_one_predicts_only_none(tmp_path, trained, corpus_dir):
    report_path = tmp_path / "report.json"
    result = _invoke("eval", trained / "checkpoint.json", corpus_dir / "corpus.jsonl", "-t", "1.0", "--out", report_path)
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["recall"] == 0.0
    assert report["tp"] == 0


def test_eval_clean_only_and_usage_errors(tmp_path, trained, corpus_dir):
    report_path = tmp_path / "report.json"
    result = _invoke("eval", trained / "checkpoint.json", corpus_dir / "corpus.jsonl", "--clean-only", "--out", report_path)
    assert result.exit_code == 0, result.output
    lines = (corpus_dir / "corpus.jsonl").read_text(encoding="utf-8").splitlines()
    clean = sum(not json.loads(line)["noise_truth"] for line in lines)
    assert json.loads(report_path.read_text(encoding="utf-8"))["samples"] == clean

    checkpoint, corpus = trained / "checkpoint.json", corpus_dir / "corpus.jsonl"
    assert _invoke("eval", checkpoint, corpus, "-t", "1.5").exit_code == 2
    assert _invoke("eval", checkpoint, corpus, "-t", "0.5", "--validation", trained / "validation.jsonl").exit_code == 2


def test_eval_rejects_mismatched_schema(tmp_path, trained, corpus_dir):
    other = tmp_path / "schema.json"
    write_schema(RelationSchema((NONE_RELATION, "x", "y", "z")), other)
    result = _invoke("eval", trained / "checkpoint.json", corpus_dir / "corpus.jsonl", "--schema", other)
    assert result.exit_code == 1


def test_train_usage_errors(tmp_path, corpus_dir, config_file):
    base = ["train", corpus_dir / "corpus.jsonl", "--schema", corpus_dir / "schema.json", "--out", tmp_path, "--config", config_file]
    assert _invoke(*base, "--no-filter", "--mode", "sef").exit_code == 2
    assert _invoke(*base, "--k", "9").exit_code == 2
    assert _invoke(*base, "--batch", "0").exit_code == 2
    assert not (tmp_path / "checkpoint.json").exists()


def test_train_rejects_unknown_config_keys(tmp_path, corpus_dir):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({**TINY_CONFIG, "batch": 10}), encoding="utf-8")
    result = _invoke("train", corpus_dir / "corpus.jsonl", "--schema", corpus_dir / "schema.json", "--out", tmp_path / "run", "--config", config)
    assert result.exit_code == 2


def test_invalid_worker_count_is_an_error(tmp_path, trained, corpus_dir):
    result = _invoke(
        "eval", trained / "checkpoint.json", corpus_dir / "corpus.jsonl", env={"SEFRE_WORKERS": "zero"},
    )
    assert result.exit_code == 1


def test_filter_report_with_full_window_keeps_valid_samples(tmp_path, trained, corpus_dir):
    out = tmp_path / "decisions.jsonl"
    result = _invoke("filter-report", trained / "checkpoint.json", corpus_dir / "corpus.jsonl", "--out", out, "--k", "4")
    assert result.exit_code == 0, result.output
    decisions = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert len(decisions) == 72
    assert all(d["kept"] for d in decisions if d["ds_label"] != NONE_RELATION)
    assert all(len(d["teacher_top"]) == 4 for d in decisions)
    assert (tmp_path / "decisions.summary.json").exists()

    assert _invoke("filter-report", trained / "checkpoint.json", corpus_dir / "corpus.jsonl", "--out", out, "--k", "5").exit_code == 2


def test_checkpoint_round_trip_is_exact(tmp_path, trained):
    checkpoint = load_checkpoint(trained / "checkpoint.json")
    copy = tmp_path / "copy.json"
    save_checkpoint(checkpoint, copy)
    assert copy.read_bytes() == (trained / "checkpoint.json").read_bytes()


def test_corrupt_checkpoint_is_an_error(tmp_path, corpus_dir):
    broken = tmp_path / "checkpoint.json"
    broken.write_text('{"format_version": 99}', encoding="utf-8")
    assert _invoke("eval", broken, corpus_dir / "corpus.jsonl").exit_code == 1
