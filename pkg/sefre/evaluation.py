"""
Precision / recall / F1 over valid relations, with a None-aware confidence
threshold chosen on validation data.

A "model" here is its (M, C) probability matrix over a set of samples; see
`students.predict_probs` for producing one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import RelationSchema
from .data_types import RelationScore
from .errors import ConfigError


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f1: float
    threshold: float
    tp: int
    fp: int
    fn: int


def _scores(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def apply_threshold(probs: np.ndarray, none_index: int, threshold: float) -> np.ndarray:
    """
    Final relation per row: the argmax, unless it is a valid relation whose
    probability is below `threshold`, in which case None. Works on a single
    (C,) distribution or an (M, C) matrix.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"Threshold must be in [0, 1], got {threshold}.")
    top = np.argmax(probs, axis=-1)
    confidence = np.max(probs, axis=-1)
    return np.where(confidence < threshold, none_index, top)


def evaluate_predictions(labels: np.ndarray, predicted: np.ndarray, none_index: int, threshold: float = 0.0) -> EvalResult:
    predicted_valid = predicted != none_index
    tp = int(np.sum(predicted_valid & (predicted == labels)))
    fp = int(np.sum(predicted_valid)) - tp
    fn = int(np.sum(labels != none_index)) - tp
    precision, recall, f1 = _scores(tp, fp, fn)
    return EvalResult(precision, recall, f1, threshold, tp, fp, fn)


def evaluate(probs: np.ndarray, labels: np.ndarray, none_index: int, threshold: float) -> EvalResult:
    return evaluate_predictions(labels, apply_threshold(probs, none_index, threshold), none_index, threshold)


def select_threshold(probs: np.ndarray, labels: np.ndarray, none_index: int) -> tuple[float, EvalResult]:
    """
    Threshold maximizing F1, searched over {0, 1} and every observed max
    probability. Any threshold between two neighbouring candidates suppresses
    the same predictions as the upper one, so the search is exact. Ties go to
    the smallest threshold.
    """
    if len(labels) == 0:
        raise ConfigError("Cannot select a threshold on an empty validation set.")
    candidates = np.unique(np.concatenate([[0.0, 1.0], np.max(probs, axis=-1)]))
    best: EvalResult | None = None
    for threshold in candidates:
        result = evaluate(probs, labels, none_index, float(threshold))
        if best is None or result.f1 > best.f1:
            best = result
    return best.threshold, best


def relation_breakdown(labels: np.ndarray, predicted: np.ndarray, schema: RelationSchema) -> dict[str, RelationScore]:
    breakdown = {}
    for relation in schema.valid_indices:
        tp = int(np.sum((predicted == relation) & (labels == relation)))
        fp = int(np.sum(predicted == relation)) - tp
        fn = int(np.sum(labels == relation)) - tp
        breakdown[schema.name(relation)] = RelationScore(tp, fp, fn, *_scores(tp, fp, fn))
    return breakdown
