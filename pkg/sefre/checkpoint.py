"""
Run artifacts: the checkpoint container and the run manifest.

A checkpoint is one JSON document with sorted keys. Tensors are stored as
base64 of their `numpy.save` bytes, which round-trips every value exactly.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping

import numpy as np
from dataclasses_json import DataClassJsonMixin

from . import __version__
from .corpus import RelationSchema, Vocabulary
from .data_types import RunManifest
from .errors import CheckpointError, CorpusError
from .self_ensemble import TrainConfig, TrainResult
from .students import ModelConfig

FORMAT_VERSION = 1


def encode_array(array: np.ndarray) -> str:
    buffer = io.BytesIO()
    np.save(buffer, array, allow_pickle=False)
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def decode_array(text: str) -> np.ndarray:
    return np.load(io.BytesIO(base64.b64decode(text)), allow_pickle=False)


def _encode_tensors(tensors: Mapping[str, np.ndarray]) -> dict[str, str]:
    return {name: encode_array(array) for name, array in tensors.items()}


def _decode_tensors(encoded: Mapping[str, str]) -> dict[str, np.ndarray]:
    return {name: decode_array(text) for name, text in encoded.items()}


@dataclass(frozen=True)
class CheckpointRecord(DataClassJsonMixin):
    format_version: int
    run_id: str
    schema: List[str]
    train_config: TrainConfig
    model_config: ModelConfig
    vocabulary: List[str]
    student: Dict[str, str]
    teacher: Dict[str, str]
    best_teacher: Dict[str, str]
    accumulators: Dict[str, str]
    step_idx: int
    epoch: int
    best_epoch: int
    threshold: float
    active_mask: str


@dataclass(frozen=True)
class Checkpoint:
    run_id: str
    schema: RelationSchema
    train_config: TrainConfig
    model_config: ModelConfig
    vocab: Vocabulary
    student: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray]
    best_teacher: dict[str, np.ndarray]
    accumulators: dict[str, np.ndarray]
    step_idx: int
    epoch: int
    best_epoch: int
    threshold: float
    active_mask: np.ndarray

    @staticmethod
    def from_result(result: TrainResult, config: TrainConfig, run_id: str) -> Checkpoint:
        state = result.state
        return Checkpoint(
            run_id=run_id,
            schema=result.schema,
            train_config=config,
            model_config=state.student.config,
            vocab=result.vocab,
            student=state.student.tensors,
            teacher=state.teacher.tensors,
            best_teacher=result.best.tensors,
            accumulators=state.accumulators,
            step_idx=state.step_idx,
            epoch=state.epoch,
            best_epoch=result.best_epoch,
            threshold=result.threshold,
            active_mask=state.active.mask,
        )

    def to_record(self) -> CheckpointRecord:
        return CheckpointRecord(
            format_version=FORMAT_VERSION,
            run_id=self.run_id,
            schema=list(self.schema.relations),
            train_config=self.train_config,
            model_config=self.model_config,
            vocabulary=list(self.vocab.words),
            student=_encode_tensors(self.student),
            teacher=_encode_tensors(self.teacher),
            best_teacher=_encode_tensors(self.best_teacher),
            accumulators=_encode_tensors(self.accumulators),
            step_idx=self.step_idx,
            epoch=self.epoch,
            best_epoch=self.best_epoch,
            threshold=self.threshold,
            active_mask=encode_array(self.active_mask),
        )

    @staticmethod
    def from_record(record: CheckpointRecord) -> Checkpoint:
        return Checkpoint(
            run_id=record.run_id,
            schema=RelationSchema(tuple(record.schema)),
            train_config=record.train_config,
            model_config=record.model_config,
            vocab=Vocabulary(tuple(record.vocabulary)),
            student=_decode_tensors(record.student),
            teacher=_decode_tensors(record.teacher),
            best_teacher=_decode_tensors(record.best_teacher),
            accumulators=_decode_tensors(record.accumulators),
            step_idx=record.step_idx,
            epoch=record.epoch,
            best_epoch=record.best_epoch,
            threshold=record.threshold,
            active_mask=decode_array(record.active_mask),
        )


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    path.write_text(checkpoint.to_record().to_json(sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    version = raw.get("format_version") if isinstance(raw, dict) else None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format version {version!r} in {path}.")
    try:
        return Checkpoint.from_record(CheckpointRecord.from_dict(raw))
    except (KeyError, TypeError, ValueError, CorpusError) as e:
        raise CheckpointError(f"Malformed checkpoint {path}: {e}") from e


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def build_manifest(command: str, config: Mapping[str, object], inputs: Mapping[str, Path], seed: int) -> RunManifest:
    """The manifest id hashes everything that determines a run's artifacts, and nothing else."""
    corpus_hashes = {name: file_sha256(path) for name, path in sorted(inputs.items())}
    canonical = json.dumps(
        {"command": command, "config": config, "corpus_hashes": corpus_hashes, "seed": seed, "tool_version": __version__},
        sort_keys=True,
    )
    return RunManifest(
        id=hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16],
        command=command,
        config=dict(config),
        corpus_hashes=corpus_hashes,
        seed=seed,
        tool_version=__version__,
    )


def write_manifest(manifest: RunManifest, path: Path) -> None:
    path.write_text(manifest.to_json(indent=2, sort_keys=True) + "\n", encoding="utf-8")
