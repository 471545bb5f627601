import json
import logging
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Optional

import typer
from dataclasses_json.undefined import UndefinedParameterError

from .. import console as sefre_console
from ..checkpoint import Checkpoint, build_manifest, save_checkpoint, write_manifest
from ..corpus import CorpusSplit, Vocabulary, load_corpus, load_schema, split_train_valid, write_corpus
from ..data_types import EpochRecord
from ..errors import ConfigError, SefreError
from ..noise_filter import filter_decisions, summarize_filter
from ..self_ensemble import TrainConfig, TrainingMode, train
from ..students import load_embeddings, predict_probs
from . import workers_from_env

logger = logging.getLogger("sefre.train")

CHECKPOINT_FILE = "checkpoint.json"
LOG_FILE = "train_log.jsonl"
MANIFEST_FILE = "manifest.json"
FILTER_REPORT_FILE = "filter_report.jsonl"
FILTER_SUMMARY_FILE = "filter_summary.json"
VALIDATION_FILE = "validation.jsonl"


def resolve_config(config_file: Optional[Path], overrides: dict[str, Any], no_filter: bool) -> TrainConfig:
    """Dataclass defaults, then the JSON config file, then explicitly given flags."""
    config = TrainConfig()
    if config_file is not None:
        try:
            raw = json.loads(config_file.read_text(encoding="utf-8"))
            config = TrainConfig.from_dict(raw)
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError, UndefinedParameterError) as e:
            raise ConfigError(f"Invalid config file {config_file}: {e}") from e

    known = {f.name for f in fields(TrainConfig)}
    given = {name: value for name, value in overrides.items() if value is not None and name in known}
    if no_filter:
        if given.get("mode", TrainingMode.se) != TrainingMode.se:
            raise ConfigError("--no-filter cannot be combined with --mode sef or --mode student.")
        given["mode"] = TrainingMode.se
    config = replace(config, **given)
    config.validate()
    return config


def _epoch_table(records: list[EpochRecord]) -> None:
    rows = [
        (r.epoch, r.val_precision, r.val_recall, r.val_f1, r.threshold, r.active_size, r.filtered_none, r.filtered_valid, r.alpha_end)
        for r in records
    ]
    columns = ("Epoch", "P", "R", "F1", "Threshold", "Active", "Drop None", "Drop valid", "Alpha")
    sefre_console.get().main.print(sefre_console.results_table("Training", columns, rows))


def train_command(
    corpus: Path,
    schema_path: Path,
    out: Path,
    config_file: Optional[Path],
    overrides: dict[str, Any],
    no_filter: bool,
    validation: Optional[Path],
    embeddings: Optional[Path],
):
    """Train a model and write checkpoint, training log, filter report and manifest to `out`."""
    try:
        config = resolve_config(config_file, overrides, no_filter)
        schema = load_schema(schema_path)
        if config.top_k > len(schema):
            raise ConfigError(f"--k {config.top_k} exceeds the number of relations ({len(schema)}).")
    except SefreError as e:
        logging.error(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=2)

    try:
        workers = workers_from_env()
        samples = load_corpus(corpus, schema)
        if validation is not None:
            split = CorpusSplit(samples, load_corpus(validation, schema), config.seed)
        else:
            split = split_train_valid(samples, config.train_ratio, config.seed)

        vocab = Vocabulary.build(split.train, config.min_count)
        pretrained = load_embeddings(embeddings, vocab, config.word_dim) if embeddings is not None else None

        inputs = {"corpus": corpus, "schema": schema_path}
        if validation is not None:
            inputs["validation"] = validation
        if embeddings is not None:
            inputs["embeddings"] = embeddings
        manifest = build_manifest("train", config.to_dict(encode_json=True), inputs, config.seed)

        out.mkdir(parents=True, exist_ok=True)
        if validation is None:
            write_corpus(split.validation, schema, out / VALIDATION_FILE)

        started = time.perf_counter()
        with open(out / LOG_FILE, "w", encoding="utf-8") as log_file:
            def on_epoch(record: EpochRecord) -> None:
                nonlocal started
                log_file.write(record.to_json(sort_keys=True) + "\n")
                log_file.flush()
                now = time.perf_counter()
                manifest.epoch_seconds.append(round(now - started, 3))
                started = now

            result = train(config, split, schema, vocab, pretrained, manifest.id, workers, on_epoch)

        save_checkpoint(Checkpoint.from_result(result, config, manifest.id), out / CHECKPOINT_FILE)

        probs = predict_probs(result.state.student.config, result.best.tensors, split.train, vocab, workers)
        decisions = filter_decisions(probs, split.train, schema, config.top_k, result.best_epoch, manifest.id)
        with open(out / FILTER_REPORT_FILE, "w", encoding="utf-8") as f:
            for decision in decisions:
                f.write(decision.to_json(sort_keys=True) + "\n")
        summary = summarize_filter(decisions, config.top_k, manifest.id)
        if summary is not None:
            (out / FILTER_SUMMARY_FILE).write_text(summary.to_json(indent=2, sort_keys=True) + "\n", encoding="utf-8")

        write_manifest(manifest, out / MANIFEST_FILE)
        _epoch_table(result.log)
        sefre_console.get().main.print(
            f"Best epoch {result.best_epoch}: F1 {result.validation.f1:.4f} at threshold {result.threshold:.4f} "
            f"(run {manifest.id})"
        )

    except SefreError as e:
        logging.error(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=1)
