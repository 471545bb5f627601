from dataclasses import dataclass, field
from dataclasses_json import DataClassJsonMixin, Undefined, config
from typing import Dict, List, Optional


def _omit_none(value) -> bool:
    return value is None


@dataclass(frozen=True)
class SampleRecord(DataClassJsonMixin):
    """One corpus line, exactly as stored on disk."""
    dataclass_json_config = {
        "undefined": Undefined.RAISE,
    }

    id: str
    tokens: List[str]
    e1: List[int]
    e2: List[int]
    relation: str
    noise_truth: Optional[bool] = field(default=None, metadata=config(exclude=_omit_none))


@dataclass(frozen=True)
class SchemaRecord(DataClassJsonMixin):
    dataclass_json_config = {
        "undefined": Undefined.RAISE,
    }

    relations: List[str]


@dataclass(frozen=True)
class EpochRecord(DataClassJsonMixin):
    """One line of the training log."""
    run_id: str
    epoch: int
    val_precision: float
    val_recall: float
    val_f1: float
    threshold: float
    active_size: int
    filtered_none: int
    filtered_valid: int
    alpha_end: float


@dataclass(frozen=True)
class RelationScore(DataClassJsonMixin):
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport(DataClassJsonMixin):
    run_id: str
    corpus: str
    samples: int
    precision: float
    recall: float
    f1: float
    threshold: float
    tp: int
    fp: int
    fn: int
    per_relation: Dict[str, RelationScore]


@dataclass(frozen=True)
class FilterSummary(DataClassJsonMixin):
    """Quality of the filter itself against known synthetic noise."""
    run_id: str
    k: int
    total: int
    dropped: int
    noisy: int
    dropped_noisy: int
    noise_precision: float
    noise_recall: float


@dataclass
class RunManifest(DataClassJsonMixin):
    id: str
    command: str
    config: Dict[str, object]
    corpus_hashes: Dict[str, str]
    seed: int
    tool_version: str
    epoch_seconds: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class RankedRelation(DataClassJsonMixin):
    relation: str
    probability: float


@dataclass(frozen=True)
class FilterDecision(DataClassJsonMixin):
    """One line of a filter report."""
    run_id: str
    epoch: int
    id: str
    ds_label: str
    kept: bool
    reason: str
    teacher_top: List[RankedRelation]
    noise_truth: Optional[bool] = field(default=None, metadata=config(exclude=_omit_none))
