import logging
from pathlib import Path

import typer

from .. import console as sefre_console
from ..checkpoint import build_manifest, write_manifest
from ..corpus import SynthConfig, generate_synthetic, sample_status, write_corpus, write_schema
from ..errors import ConfigError, SefreError

CORPUS_FILE = "corpus.jsonl"
SCHEMA_FILE = "schema.json"
MANIFEST_FILE = "manifest.json"


def synth_command(config: SynthConfig, seed: int, out: Path):
    """Generate a synthetic distantly supervised corpus with known noise."""
    try:
        config.validate()
    except ConfigError as e:
        logging.error(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=2)

    try:
        samples, schema = generate_synthetic(config, seed)
        out.mkdir(parents=True, exist_ok=True)
        write_corpus(samples, schema, out / CORPUS_FILE)
        write_schema(schema, out / SCHEMA_FILE)
        write_manifest(build_manifest("synth", config.to_dict(encode_json=True), {}, seed), out / MANIFEST_FILE)

        counts: dict[str, int] = {}
        for sample in samples:
            status = sample_status(sample, schema)
            counts[status] = counts.get(status, 0) + 1
        rows = [(status, counts.get(status, 0)) for status in ("clean-positive", "noisy-positive", "clean-none", "noisy-none")]
        sefre_console.get().main.print(sefre_console.results_table(f"{len(samples)} samples in {out}", ("Status", "Samples"), rows))

    except (SefreError, OSError) as e:
        logging.error(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=1)
