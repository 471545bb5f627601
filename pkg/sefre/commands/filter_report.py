import logging
from pathlib import Path
from typing import Optional

import typer

from .. import console as sefre_console
from ..checkpoint import load_checkpoint
from ..corpus import load_corpus
from ..errors import SefreError
from ..noise_filter import filter_decisions, summarize_filter
from ..students import predict_probs
from . import workers_from_env


def filter_report_command(checkpoint_path: Path, corpus: Path, k: Optional[int], out: Path):
    """Write the checkpoint teacher's keep/drop decision for every sample of `corpus`."""
    try:
        workers = workers_from_env()
        checkpoint = load_checkpoint(checkpoint_path)
        schema = checkpoint.schema
        k = checkpoint.train_config.top_k if k is None else k
        if not 1 <= k <= len(schema):
            logging.error(f"[red]Error:[/red] --k must be between 1 and {len(schema)}, got {k}.")
            raise typer.Exit(code=2)

        samples = load_corpus(corpus, schema)
        probs = predict_probs(checkpoint.model_config, checkpoint.best_teacher, samples, checkpoint.vocab, workers)
        decisions = filter_decisions(probs, samples, schema, k, checkpoint.best_epoch, checkpoint.run_id)
        with open(out, "w", encoding="utf-8") as f:
            for decision in decisions:
                f.write(decision.to_json(sort_keys=True) + "\n")

        main = sefre_console.get().main
        summary = summarize_filter(decisions, k, checkpoint.run_id)
        if summary is None:
            dropped = sum(not d.kept for d in decisions)
            main.print(f"Dropped {dropped} of {len(decisions)} samples at K={k}.")
            return

        summary_path = out.with_suffix(".summary.json")
        summary_path.write_text(summary.to_json(indent=2, sort_keys=True) + "\n", encoding="utf-8")
        main.print(sefre_console.results_table(
            f"Filter at K={k}",
            ("Total", "Dropped", "Noisy", "Dropped noisy", "Noise P", "Noise R"),
            [(summary.total, summary.dropped, summary.noisy, summary.dropped_noisy, summary.noise_precision, summary.noise_recall)],
        ))

    except SefreError as e:
        logging.error(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=1)
