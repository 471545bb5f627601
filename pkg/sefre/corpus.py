"""
Relation-extraction corpora: the sample/schema data model, JSONL ingestion,
deterministic train/validation splitting and a synthetic distant-supervision
generator whose injected noise is known.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from dataclasses_json import DataClassJsonMixin
from dataclasses_json.undefined import UndefinedParameterError

from .data_types import SampleRecord, SchemaRecord
from .errors import ConfigError, CorpusError
from .seeding import rng_stream

logger = logging.getLogger("sefre.corpus")

NONE_RELATION = "None"
MAX_SENTENCE_LENGTH = 100

Span = tuple[int, int]


@dataclass(frozen=True)
class RelationSchema:
    """Ordered relation names; the order fixes softmax indices for a run."""
    relations: tuple[str, ...]

    def __post_init__(self):
        if len(self.relations) < 2:
            raise CorpusError("A schema needs at least one valid relation and None.")
        if self.relations.count(NONE_RELATION) != 1:
            raise CorpusError(f"'{NONE_RELATION}' must appear exactly once in the schema.")
        if len(set(self.relations)) != len(self.relations):
            raise CorpusError("Relation names in the schema must be unique.")

    def __len__(self) -> int:
        return len(self.relations)

    @property
    def none_index(self) -> int:
        return self.relations.index(NONE_RELATION)

    @property
    def valid_indices(self) -> list[int]:
        return [i for i in range(len(self.relations)) if i != self.none_index]

    def index(self, name: str) -> int:
        try:
            return self.relations.index(name)
        except ValueError:
            raise CorpusError(f"Unknown relation '{name}'.") from None

    def name(self, index: int) -> str:
        return self.relations[index]

    def to_record(self) -> SchemaRecord:
        return SchemaRecord(relations=list(self.relations))

    @staticmethod
    def from_record(record: SchemaRecord) -> RelationSchema:
        return RelationSchema(tuple(record.relations))


def load_schema(path: Path) -> RelationSchema:
    try:
        record = SchemaRecord.from_json(Path(path).read_text(encoding="utf-8"))
    except (ValueError, KeyError, TypeError, UndefinedParameterError) as e:
        raise CorpusError(f"{path}: malformed schema: {e}") from e
    if not all(isinstance(name, str) for name in record.relations):
        raise CorpusError(f"{path}: relation names must be strings.")
    return RelationSchema.from_record(record)


def write_schema(schema: RelationSchema, path: Path) -> None:
    Path(path).write_text(schema.to_record().to_json(indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RelationSample:
    """One sentence with two marked entities (inclusive token spans) and its DS label."""
    id: str
    tokens: tuple[str, ...]
    e1_span: Span
    e2_span: Span
    ds_label: int
    noise_truth: bool | None = None

    def __post_init__(self):
        for span in (self.e1_span, self.e2_span):
            start, end = span
            if not 0 <= start <= end < len(self.tokens):
                raise CorpusError(
                    f"Sample '{self.id}': span [{start}, {end}] out of range for {len(self.tokens)} tokens."
                )

    @property
    def length(self) -> int:
        return len(self.tokens)

    @staticmethod
    def from_record(record: SampleRecord, schema: RelationSchema) -> RelationSample:
        if not isinstance(record.id, str) or not record.id:
            raise CorpusError(f"Sample id must be a non-empty string, got {record.id!r}.")
        if not isinstance(record.tokens, list) or not record.tokens or not all(isinstance(t, str) for t in record.tokens):
            raise CorpusError(f"Sample '{record.id}': tokens must be a non-empty list of strings.")
        spans = []
        for name, span in (("e1", record.e1), ("e2", record.e2)):
            if (not isinstance(span, list) or len(span) != 2
                    or not all(isinstance(i, int) and not isinstance(i, bool) for i in span)):
                raise CorpusError(f"Sample '{record.id}': {name} must be [start, end] integers.")
            spans.append((span[0], span[1]))
        if not isinstance(record.relation, str):
            raise CorpusError(f"Sample '{record.id}': relation must be a string, got {record.relation!r}.")
        if record.noise_truth is not None and not isinstance(record.noise_truth, bool):
            raise CorpusError(f"Sample '{record.id}': noise_truth must be a boolean.")

        tokens = tuple(record.tokens)
        if len(tokens) > MAX_SENTENCE_LENGTH:
            logger.warning(
                f"[yellow]Warning:[/yellow] Sample '{record.id}' has {len(tokens)} tokens; "
                f"truncating to {MAX_SENTENCE_LENGTH}."
            )
            tokens = tokens[:MAX_SENTENCE_LENGTH]

        return RelationSample(
            id=record.id,
            tokens=tokens,
            e1_span=spans[0],
            e2_span=spans[1],
            ds_label=schema.index(record.relation),
            noise_truth=record.noise_truth,
        )

    def to_record(self, schema: RelationSchema) -> SampleRecord:
        return SampleRecord(
            id=self.id,
            tokens=list(self.tokens),
            e1=list(self.e1_span),
            e2=list(self.e2_span),
            relation=schema.name(self.ds_label),
            noise_truth=self.noise_truth,
        )


_JSON_FIELD_TYPES: dict[str, type | tuple[type, ...]] = {
    "id": str,
    "tokens": list,
    "e1": list,
    "e2": list,
    "relation": str,
    "noise_truth": (bool, type(None)),
}


def _check_json_types(payload: object) -> None:
    if not isinstance(payload, dict):
        raise CorpusError(f"expected a JSON object, got {type(payload).__name__}")
    for name, kind in _JSON_FIELD_TYPES.items():
        if name in payload and not isinstance(payload[name], kind):
            raise CorpusError(f"field '{name}' has JSON type {type(payload[name]).__name__}")


def load_corpus(path: Path, schema: RelationSchema) -> list[RelationSample]:
    """Read a JSONL corpus, validating every record against the schema."""
    samples: list[RelationSample] = []
    seen: set[str] = set()
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise CorpusError(f"{path}:{line_no}: not valid UTF-8: {e}") from e
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                _check_json_types(payload)
                record = SampleRecord.from_dict(payload)
            except (ValueError, KeyError, TypeError, UndefinedParameterError, CorpusError) as e:
                raise CorpusError(f"{path}:{line_no}: malformed record: {e}") from e
            sample = RelationSample.from_record(record, schema)
            if sample.id in seen:
                raise CorpusError(f"{path}:{line_no}: duplicate sample id '{sample.id}'.")
            seen.add(sample.id)
            samples.append(sample)
    logger.debug(f"Loaded {len(samples)} samples from {path}")
    return samples


def write_corpus(samples: Iterable[RelationSample], schema: RelationSchema, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(sample.to_record(schema).to_json(ensure_ascii=False) + "\n")


PAD = "<pad>"
UNK = "<unk>"


@dataclass(frozen=True)
class Vocabulary:
    """Word index; PAD is row 0 (all-zero, frozen embedding) and UNK row 1."""
    words: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.words[:2] != (PAD, UNK):
            raise CorpusError("Vocabulary must start with the PAD and UNK entries.")
        object.__setattr__(self, "_index", {word: i for i, word in enumerate(self.words)})

    PAD_INDEX = 0
    UNK_INDEX = 1

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        return self._index.get(word, self.UNK_INDEX)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    @staticmethod
    def build(samples: Iterable[RelationSample], min_count: int = 1) -> Vocabulary:
        counts = Counter(token for sample in samples for token in sample.tokens)
        kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        return Vocabulary((PAD, UNK, *kept))


@dataclass(frozen=True)
class CorpusSplit:
    train: list[RelationSample]
    validation: list[RelationSample]
    seed: int


def split_train_valid(samples: Sequence[RelationSample], ratio: float = 0.9, seed: int = 0) -> CorpusSplit:
    """Seeded shuffle, then the first round(ratio * N) samples train, the rest validate."""
    if len(samples) < 2:
        raise CorpusError("Need at least two samples to split into train and validation.")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"Train ratio must be in (0, 1), got {ratio}.")
    order = rng_stream(seed, "split").permutation(len(samples))
    n_train = min(max(int(math.floor(ratio * len(samples) + 0.5)), 1), len(samples) - 1)
    return CorpusSplit(
        train=[samples[i] for i in order[:n_train]],
        validation=[samples[i] for i in order[n_train:]],
        seed=seed,
    )


@dataclass(frozen=True)
class SynthConfig(DataClassJsonMixin):
    relations: int = 10
    vocab_size: int = 2000
    samples_per_class: int = 180
    pos_noise: float = 0.3
    neg_noise: float = 0.2
    none_ratio: float = 2.3
    min_length: int = 8
    max_length: int = 24
    triggers_per_relation: int = 3
    entity_pool: int = 300

    def validate(self) -> None:
        for name in ("pos_noise", "neg_noise"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {rate}.")
        if self.relations < 1:
            raise ConfigError("Need at least one valid relation.")
        if self.vocab_size < 1 or self.samples_per_class < 1 or self.triggers_per_relation < 1:
            raise ConfigError("vocab_size, samples_per_class and triggers_per_relation must be positive.")
        if self.none_ratio < 0:
            raise ConfigError(f"none_ratio must be non-negative, got {self.none_ratio}.")
        if not 1 <= self.min_length <= self.max_length <= MAX_SENTENCE_LENGTH:
            raise ConfigError(f"Need 1 <= min_length <= max_length <= {MAX_SENTENCE_LENGTH}.")
        if self.entity_pool < 2:
            raise ConfigError("entity_pool must be at least 2.")


def synthetic_schema(config: SynthConfig) -> RelationSchema:
    return RelationSchema((NONE_RELATION, *(f"rel_{r:02d}" for r in range(1, config.relations + 1))))


def synthetic_triggers(config: SynthConfig) -> dict[int, tuple[str, ...]]:
    """Trigger words per valid relation index of `synthetic_schema(config)`."""
    return {
        r: tuple(f"trig{r}_{j}" for j in range(config.triggers_per_relation))
        for r in range(1, config.relations + 1)
    }


def _compose_sentence(rng: np.random.Generator, config: SynthConfig, trigger: str | None) -> tuple[list[str], Span, Span]:
    e1 = [f"ent{i}" for i in rng.integers(config.entity_pool, size=rng.integers(1, 3))]
    e2 = [f"ent{i}" for i in rng.integers(config.entity_pool, size=rng.integers(1, 3))]
    middle = [f"w{i}" for i in rng.integers(config.vocab_size, size=rng.integers(1, 4))]
    if trigger is not None:
        middle[rng.integers(len(middle))] = trigger

    length = int(rng.integers(config.min_length, config.max_length + 1))
    outer = max(0, length - len(e1) - len(e2) - len(middle))
    left_len = int(rng.integers(outer + 1))
    left = [f"w{i}" for i in rng.integers(config.vocab_size, size=left_len)]
    right = [f"w{i}" for i in rng.integers(config.vocab_size, size=outer - left_len)]

    swapped = rng.random() < 0.2
    first, second = (e2, e1) if swapped else (e1, e2)
    tokens = left + first + middle + second + right
    first_span = (len(left), len(left) + len(first) - 1)
    second_start = first_span[1] + 1 + len(middle)
    second_span = (second_start, second_start + len(second) - 1)
    if swapped:
        return tokens, second_span, first_span
    return tokens, first_span, second_span


def generate_synthetic(config: SynthConfig, seed: int) -> tuple[list[RelationSample], RelationSchema]:
    """
    A distant-supervision-like corpus with ground-truth noise.

    Clean positives carry a trigger word of their label between the entities;
    noisy positives (rate pos_noise) carry none; clean None samples carry no
    trigger; noisy None samples (rate neg_noise) carry a trigger of a random
    valid relation.
    """
    config.validate()
    rng = rng_stream(seed, "synth")
    schema = synthetic_schema(config)
    triggers = synthetic_triggers(config)
    valid = schema.valid_indices
    none = schema.none_index

    n_valid = len(valid) * config.samples_per_class
    labels = [r for r in valid for _ in range(config.samples_per_class)]
    labels += [none] * int(round(config.none_ratio * n_valid))

    samples: list[RelationSample] = []
    for i in rng.permutation(len(labels)):
        label = labels[i]
        if label != none:
            noisy = bool(rng.random() < config.pos_noise)
            trigger_relation = None if noisy else label
        else:
            noisy = bool(rng.random() < config.neg_noise)
            trigger_relation = int(rng.choice(valid)) if noisy else None
        trigger = None if trigger_relation is None else str(rng.choice(triggers[trigger_relation]))
        tokens, e1, e2 = _compose_sentence(rng, config, trigger)
        samples.append(RelationSample(
            id=f"syn-{len(samples):06d}",
            tokens=tuple(tokens),
            e1_span=e1,
            e2_span=e2,
            ds_label=label,
            noise_truth=noisy,
        ))

    logger.info(
        f"Generated {len(samples)} samples ({n_valid} valid, {len(samples) - n_valid} None), "
        f"{sum(s.noise_truth for s in samples)} noisy"
    )
    return samples, schema


def trigger_oracle(sample: RelationSample, triggers: dict[int, tuple[str, ...]], schema: RelationSchema) -> int:
    """The relation whose trigger occurs in the sentence, else None."""
    lookup = {word: relation for relation, words in triggers.items() for word in words}
    for token in sample.tokens:
        if token in lookup:
            return lookup[token]
    return schema.none_index


def sample_status(sample: RelationSample, schema: RelationSchema) -> str | None:
    """One of clean-positive, noisy-positive, clean-none, noisy-none (None if unknown)."""
    if sample.noise_truth is None:
        return None
    kind = "none" if sample.ds_label == schema.none_index else "positive"
    return f"{'noisy' if sample.noise_truth else 'clean'}-{kind}"
