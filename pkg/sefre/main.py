import logging
from pathlib import Path
from typing import Optional

import typer
from rich.logging import RichHandler

from . import console
from .autodiff import Precision
from .commands.evaluate import eval_command
from .commands.filter_report import filter_report_command
from .commands.synth import synth_command
from .commands.train import train_command
from .console import ColorMode
from .corpus import SynthConfig
from .self_ensemble import TrainingMode
from .students import Architecture

app = typer.Typer()


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-V", help="Enable verbose logging."),
    color: ColorMode = typer.Option(ColorMode.auto, "--color", help="Color output mode."),
):
    """SEFRE - self-ensemble training with noise filtering for distantly supervised relation extraction."""
    console.initialize(color)

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[
            RichHandler(
                console=console.get().error,
                show_time=False,
                show_level=False,
                show_path=False,
                markup=True,
                rich_tracebacks=True,
                tracebacks_suppress=[typer],
            )
        ],
        force=True,
    )


@app.command()
def train(
    corpus: Path = typer.Argument(..., help="Training corpus (JSONL).", exists=True, dir_okay=False),
    schema: Path = typer.Option(..., "--schema", "-s", help="Relation schema (JSON).", exists=True, dir_okay=False),
    out: Path = typer.Option(..., "--out", "-o", help="Directory for checkpoint, logs and reports."),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON file of training settings; flags override it.", exists=True, dir_okay=False),
    validation: Optional[Path] = typer.Option(None, "--validation", help="Validation corpus; by default the training corpus is split.", exists=True, dir_okay=False),
    embeddings: Optional[Path] = typer.Option(None, "--embeddings", help="Pretrained word vectors (text format).", exists=True, dir_okay=False),
    arch: Optional[Architecture] = typer.Option(None, "--arch", help="Student architecture."),
    mode: Optional[TrainingMode] = typer.Option(None, "--mode", help="sef (filtering), se (no filtering) or student (no teacher)."),
    no_filter: bool = typer.Option(False, "--no-filter", help="Self-ensemble without filtering (same as --mode se)."),
    k: Optional[int] = typer.Option(None, "--k", help="Top-K window of the filter for valid relations."),
    alpha_max: Optional[float] = typer.Option(None, "--alpha-max", help="Final EMA decay."),
    ramp_epochs: Optional[int] = typer.Option(None, "--ramp-epochs", help="Epochs over which the EMA decay ramps up."),
    batch: Optional[int] = typer.Option(None, "--batch", help="Mini-batch size."),
    lr: Optional[float] = typer.Option(None, "--lr", help="Adagrad learning rate."),
    dropout: Optional[float] = typer.Option(None, "--dropout", help="Dropout on the penultimate features."),
    max_epochs: Optional[int] = typer.Option(None, "--max-epochs", help="Upper bound on training epochs."),
    patience: Optional[int] = typer.Option(None, "--patience", help="Epochs without validation F1 gain before stopping."),
    precision: Optional[Precision] = typer.Option(None, "--precision", help="Floating point precision of the parameters."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for splitting, initialisation, shuffling and dropout."),
):
    """Train a student/teacher pair and keep the best teacher."""
    overrides = {
        "architecture": arch,
        "mode": mode,
        "top_k": k,
        "alpha_max": alpha_max,
        "ramp_epochs": ramp_epochs,
        "batch_size": batch,
        "learning_rate": lr,
        "dropout": dropout,
        "max_epochs": max_epochs,
        "patience": patience,
        "precision": precision,
        "seed": seed,
    }
    train_command(corpus, schema, out, config_file, overrides, no_filter, validation, embeddings)


@app.command(name="eval")
def evaluate(
    checkpoint: Path = typer.Argument(..., help="Checkpoint written by 'train'.", exists=True, dir_okay=False),
    corpus: Path = typer.Argument(..., help="Corpus to evaluate (JSONL).", exists=True, dir_okay=False),
    threshold: Optional[float] = typer.Option(None, "--threshold", "-t", help="Confidence threshold; defaults to the checkpoint's."),
    validation: Optional[Path] = typer.Option(None, "--validation", help="Re-select the threshold on this corpus.", exists=True, dir_okay=False),
    schema: Optional[Path] = typer.Option(None, "--schema", "-s", help="Check the corpus schema against the checkpoint.", exists=True, dir_okay=False),
    clean_only: bool = typer.Option(False, "--clean-only", help="Only samples whose noise_truth is false."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Write the evaluation report (JSON) here."),
):
    """Precision, recall and F1 over valid relations."""
    eval_command(checkpoint, corpus, threshold, validation, schema, clean_only, out)


@app.command()
def synth(
    out: Path = typer.Option(..., "--out", "-o", help="Directory for corpus.jsonl, schema.json and manifest.json."),
    seed: int = typer.Option(0, "--seed", help="Generator seed."),
    relations: int = typer.Option(10, "--relations", help="Number of valid relations."),
    samples_per_class: int = typer.Option(180, "--samples-per-class", help="Samples per valid relation."),
    none_ratio: float = typer.Option(2.3, "--none-ratio", help="None samples per valid sample."),
    pos_noise: float = typer.Option(0.3, "--pos-noise", help="Rate of valid labels without a trigger."),
    neg_noise: float = typer.Option(0.2, "--neg-noise", help="Rate of None labels hiding a trigger."),
    vocab_size: int = typer.Option(2000, "--vocab-size", help="Filler vocabulary size."),
    min_length: int = typer.Option(8, "--min-length", help="Shortest sentence."),
    max_length: int = typer.Option(24, "--max-length", help="Longest sentence."),
):
    """Generate a synthetic corpus with known label noise."""
    config = SynthConfig(
        relations=relations,
        vocab_size=vocab_size,
        samples_per_class=samples_per_class,
        pos_noise=pos_noise,
        neg_noise=neg_noise,
        none_ratio=none_ratio,
        min_length=min_length,
        max_length=max_length,
    )
    synth_command(config, seed, out)


@app.command(name="filter-report")
def filter_report(
    checkpoint: Path = typer.Argument(..., help="Checkpoint written by 'train'.", exists=True, dir_okay=False),
    corpus: Path = typer.Argument(..., help="Corpus to judge (JSONL).", exists=True, dir_okay=False),
    out: Path = typer.Option(..., "--out", "-o", help="Filter decisions (JSONL)."),
    k: Optional[int] = typer.Option(None, "--k", help="Top-K window; defaults to the checkpoint's."),
):
    """Keep/drop decision of the filter for every sample."""
    filter_report_command(checkpoint, corpus, k, out)


if __name__ == "__main__":
    app()
