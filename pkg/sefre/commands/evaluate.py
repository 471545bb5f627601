import logging
from pathlib import Path
from typing import Optional

import numpy as np
import typer

from .. import console as sefre_console
from ..checkpoint import load_checkpoint
from ..corpus import load_corpus, load_schema
from ..data_types import EvalReport
from ..errors import CheckpointError, ConfigError, SefreError
from ..evaluation import apply_threshold, evaluate_predictions, relation_breakdown, select_threshold
from ..students import predict_probs
from . import workers_from_env

logger = logging.getLogger("sefre.eval")


def eval_command(
    checkpoint_path: Path,
    corpus: Path,
    threshold: Optional[float],
    validation: Optional[Path],
    schema_path: Optional[Path],
    clean_only: bool,
    out: Optional[Path],
):
    """Evaluate the checkpoint's best model on a corpus and report P/R/F1."""
    if threshold is not None and validation is not None:
        logging.error("[red]Error:[/red] --threshold and --validation are mutually exclusive.")
        raise typer.Exit(code=2)
    if threshold is not None and not 0.0 <= threshold <= 1.0:
        logging.error(f"[red]Error:[/red] --threshold must be in [0, 1], got {threshold}.")
        raise typer.Exit(code=2)

    try:
        workers = workers_from_env()
        checkpoint = load_checkpoint(checkpoint_path)
        schema = checkpoint.schema
        if schema_path is not None and load_schema(schema_path) != schema:
            raise CheckpointError(f"Schema {schema_path} does not match the checkpoint's relation order.")
        model = checkpoint.model_config

        if validation is not None:
            validation_samples = load_corpus(validation, schema)
            validation_labels = np.array([s.ds_label for s in validation_samples], dtype=np.int64)
            validation_probs = predict_probs(model, checkpoint.best_teacher, validation_samples, checkpoint.vocab, workers)
            threshold, _ = select_threshold(validation_probs, validation_labels, schema.none_index)
            logger.info(f"Selected threshold {threshold:.4f} on {validation}")
        elif threshold is None:
            threshold = checkpoint.threshold

        samples = load_corpus(corpus, schema)
        if clean_only:
            if any(s.noise_truth is None for s in samples):
                raise ConfigError("--clean-only needs a corpus whose samples all carry noise_truth.")
            samples = [s for s in samples if not s.noise_truth]
        if not samples:
            raise ConfigError(f"No samples to evaluate in {corpus}.")

        labels = np.array([s.ds_label for s in samples], dtype=np.int64)
        probs = predict_probs(model, checkpoint.best_teacher, samples, checkpoint.vocab, workers)
        predicted = apply_threshold(probs, schema.none_index, threshold)
        result = evaluate_predictions(labels, predicted, schema.none_index, threshold)
        report = EvalReport(
            run_id=checkpoint.run_id,
            corpus=str(corpus),
            samples=len(samples),
            precision=result.precision,
            recall=result.recall,
            f1=result.f1,
            threshold=result.threshold,
            tp=result.tp,
            fp=result.fp,
            fn=result.fn,
            per_relation=relation_breakdown(labels, predicted, schema),
        )

        if out is not None:
            out.write_text(report.to_json(indent=2, sort_keys=True) + "\n", encoding="utf-8")

        rows = [(name, s.tp, s.fp, s.fn, s.precision, s.recall, s.f1) for name, s in report.per_relation.items()]
        rows.append(("all", report.tp, report.fp, report.fn, report.precision, report.recall, report.f1))
        main = sefre_console.get().main
        main.print(sefre_console.results_table(
            f"{corpus.name}: {report.samples} samples, threshold {report.threshold:.4f}",
            ("Relation", "TP", "FP", "FN", "P", "R", "F1"),
            rows,
        ))

    except SefreError as e:
        logging.error(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=1)
