"""
Epoch-boundary filtering of the distantly supervised training corpus.

None-labelled samples are kept only when the teacher's argmax is None
(strict); valid-labelled samples are kept when their label is among the
teacher's top K relations (lenient). The whole initial corpus is judged
every time, so a sample dropped once can come back later.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .corpus import RelationSample, RelationSchema
from .data_types import FilterDecision, FilterSummary, RankedRelation
from .errors import ConfigError

logger = logging.getLogger("sefre.filter")


class FilterReason(str, Enum):
    clean = "clean"
    none_mismatch = "none-mismatch"
    not_in_topk = "not-in-topk"


@dataclass(frozen=True)
class ActiveSet:
    """Which samples of the initial training corpus an epoch trains on."""
    mask: np.ndarray
    epoch: int
    filtered: dict[int, int] = field(default_factory=dict)

    @staticmethod
    def full(n: int, epoch: int = 1) -> ActiveSet:
        return ActiveSet(np.ones(n, dtype=bool), epoch)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def filtered_none(self, schema: RelationSchema) -> int:
        return self.filtered.get(schema.none_index, 0)

    def filtered_valid(self, schema: RelationSchema) -> int:
        return sum(count for relation, count in self.filtered.items() if relation != schema.none_index)


def predict_topk(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k most probable relations per row; equal probabilities rank by lower index."""
    if not 1 <= k <= probs.shape[-1]:
        raise ConfigError(f"K must be between 1 and {probs.shape[-1]}, got {k}.")
    return np.argsort(-probs, axis=-1, kind="stable")[..., :k]


def filter_probabilities(probs: np.ndarray, labels: np.ndarray, none_index: int, k: int) -> tuple[np.ndarray, list[FilterReason]]:
    top = predict_topk(probs, k)
    is_none = labels == none_index
    argmax_none = top[:, 0] == none_index
    in_topk = (top == labels[:, None]).any(axis=1)
    kept = np.where(is_none, argmax_none, in_topk)
    reasons = [
        FilterReason.clean if keep else FilterReason.none_mismatch if none else FilterReason.not_in_topk
        for keep, none in zip(kept, is_none)
    ]
    return kept, reasons


def filter_corpus(probs: np.ndarray, samples: Sequence[RelationSample], schema: RelationSchema, k: int, epoch: int) -> ActiveSet:
    """
    The active set for `epoch` from teacher probabilities over the entire
    initial training corpus; independent of any earlier active set.
    """
    labels = np.array([s.ds_label for s in samples], dtype=np.int64)
    kept, _ = filter_probabilities(probs, labels, schema.none_index, k)
    filtered = dict(sorted(Counter(int(label) for label in labels[~kept]).items()))
    active = ActiveSet(kept, epoch, filtered)
    logger.info(
        f"Filter for epoch {epoch}: keeping {active.size}/{len(samples)} "
        f"(dropped {active.filtered_none(schema)} None, {active.filtered_valid(schema)} valid)"
    )
    return active


def filter_decisions(
    probs: np.ndarray,
    samples: Sequence[RelationSample],
    schema: RelationSchema,
    k: int,
    epoch: int,
    run_id: str,
) -> list[FilterDecision]:
    labels = np.array([s.ds_label for s in samples], dtype=np.int64)
    kept, reasons = filter_probabilities(probs, labels, schema.none_index, k)
    top = predict_topk(probs, k)
    return [
        FilterDecision(
            run_id=run_id,
            epoch=epoch,
            id=sample.id,
            ds_label=schema.name(sample.ds_label),
            kept=bool(keep),
            reason=reason.value,
            teacher_top=[RankedRelation(schema.name(int(r)), float(row[r])) for r in ranked],
            noise_truth=sample.noise_truth,
        )
        for sample, keep, reason, ranked, row in zip(samples, kept, reasons, top, probs)
    ]


def _summarize(kept: Sequence[bool], noise_truth: Sequence[bool | None], k: int, run_id: str) -> FilterSummary | None:
    if not kept or any(truth is None for truth in noise_truth):
        return None
    dropped = sum(not keep for keep in kept)
    noisy = sum(bool(truth) for truth in noise_truth)
    dropped_noisy = sum(bool(truth) and not keep for keep, truth in zip(kept, noise_truth))
    return FilterSummary(
        run_id=run_id,
        k=k,
        total=len(kept),
        dropped=dropped,
        noisy=noisy,
        dropped_noisy=dropped_noisy,
        noise_precision=dropped_noisy / dropped if dropped else 0.0,
        noise_recall=dropped_noisy / noisy if noisy else 0.0,
    )


def summarize_filter(decisions: Sequence[FilterDecision], k: int, run_id: str) -> FilterSummary | None:
    """Noise precision/recall of the dropped set; None unless every sample has known noise truth."""
    return _summarize([d.kept for d in decisions], [d.noise_truth for d in decisions], k, run_id)


def summarize_active_set(active: ActiveSet, samples: Sequence[RelationSample], k: int, run_id: str) -> FilterSummary | None:
    """Same summary for the samples an applied filter left out of an epoch's active set."""
    if len(active.mask) != len(samples):
        raise ConfigError(f"Active set covers {len(active.mask)} samples, corpus has {len(samples)}.")
    return _summarize([bool(keep) for keep in active.mask], [s.noise_truth for s in samples], k, run_id)

