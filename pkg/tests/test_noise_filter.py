import numpy as np
import pytest

from sefre.corpus import NONE_RELATION, RelationSample, RelationSchema
from sefre.errors import ConfigError
from sefre.noise_filter import (
    ActiveSet, filter_corpus, filter_decisions, filter_probabilities, predict_topk, summarize_active_set, summarize_filter,
)

SCHEMA = RelationSchema((NONE_RELATION, "r1", "r2", "r3", "r4"))


def _samples(labels, noise_truth=None):
    return [RelationSample(f"s{i}", ("a", "b"), (0, 0), (1, 1), label, noise_truth) for i, label in enumerate(labels)]


def _reference_keep(row, label, none_index, k):
    ranked = sorted(range(len(row)), key=lambda r: (-row[r], r))
    if label == none_index:
        return ranked[0] == none_index
    return label in ranked[:k]


def test_predict_topk_orders_by_probability():
    np.testing.assert_array_equal(predict_topk(np.array([0.5, 0.3, 0.2]), 2), [0, 1])
    np.testing.assert_array_equal(predict_topk(np.array([0.4, 0.4, 0.2]), 1), [0])
    np.testing.assert_array_equal(predict_topk(np.full(4, 0.25), 4), [0, 1, 2, 3])


def test_predict_topk_rejects_bad_k():
    with pytest.raises(ConfigError):
        predict_topk(np.full(3, 1 / 3), 4)
    with pytest.raises(ConfigError):
        predict_topk(np.full(3, 1 / 3), 0)


def test_lenient_rule_for_valid_samples():
    probs = np.array([[0.05, 0.4, 0.25, 0.2, 0.1]])
    labels = np.array([2])
    kept, reasons = filter_probabilities(probs, labels, SCHEMA.none_index, 3)
    assert kept[0] and reasons[0].value == "clean"
    kept, reasons = filter_probabilities(probs, labels, SCHEMA.none_index, 1)
    assert not kept[0] and reasons[0].value == "not-in-topk"


def test_strict_rule_for_none_samples():
    probs = np.array([[0.6, 0.1, 0.1, 0.1, 0.1], [0.3, 0.4, 0.1, 0.1, 0.1]])
    kept, reasons = filter_probabilities(probs, np.array([0, 0]), SCHEMA.none_index, 5)
    assert kept.tolist() == [True, False]
    assert reasons[1].value == "none-mismatch"


def test_filter_matches_reference_on_random_tables():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        classes = (2, 5, 25)[trial % 3]
        none_index = int(rng.integers(classes))
        # coarse rounding produces plenty of ties
        probs = np.round(rng.dirichlet(np.ones(classes), size=8), 1)
        labels = rng.integers(classes, size=8)
        previous = None
        for k in sorted({1, min(3, classes), classes}):
            kept, _ = filter_probabilities(probs, labels, none_index, k)
            expected = [_reference_keep(row, label, none_index, k) for row, label in zip(probs, labels)]
            assert kept.tolist() == expected
            if previous is not None:
                assert np.all(kept[previous])
            previous = kept


def test_top_k_equal_to_classes_keeps_every_valid_sample():
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(5), size=50)
    labels = rng.integers(1, 5, size=50)
    kept, _ = filter_probabilities(probs, labels, 0, 5)
    assert kept.all()


def test_filter_corpus_counts_and_reinclusion():
    samples = _samples([0, 1, 2])
    epoch_two = np.array([[0.1, 0.8, 0.05, 0.03, 0.02], [0.1, 0.8, 0.05, 0.03, 0.02], [0.05, 0.05, 0.1, 0.4, 0.4]])
    active = filter_corpus(epoch_two, samples, SCHEMA, 1, epoch=2)
    assert active.mask.tolist() == [False, True, False]
    assert active.filtered == {0: 1, 2: 1}
    assert active.filtered_none(SCHEMA) == 1
    assert active.filtered_valid(SCHEMA) == 1

    epoch_three = np.array([[0.9, 0.05, 0.03, 0.01, 0.01], [0.1, 0.8, 0.05, 0.03, 0.02], [0.05, 0.05, 0.7, 0.1, 0.1]])
    readmitted = filter_corpus(epoch_three, samples, SCHEMA, 1, epoch=3)
    assert readmitted.mask.tolist() == [True, True, True]
    assert readmitted.size == 3
    assert readmitted.filtered == {}


def test_full_active_set():
    active = ActiveSet.full(4)
    assert active.epoch == 1
    assert active.mask.tolist() == [True] * 4


def test_filter_decisions_and_summary():
    samples = _samples([0, 1, 2, 3], noise_truth=True)
    samples[0] = RelationSample("s0", ("a", "b"), (0, 0), (1, 1), 0, False)
    probs = np.array([
        [0.7, 0.1, 0.1, 0.05, 0.05],
        [0.1, 0.1, 0.6, 0.1, 0.1],
        [0.1, 0.1, 0.6, 0.1, 0.1],
        [0.1, 0.5, 0.1, 0.2, 0.1],
    ])
    decisions = filter_decisions(probs, samples, SCHEMA, 2, epoch=4, run_id="run")
    assert [d.kept for d in decisions] == [True, False, True, True]
    assert decisions[1].reason == "not-in-topk"
    assert [r.relation for r in decisions[3].teacher_top] == ["r1", "r3"]
    assert decisions[3].teacher_top[0].probability == 0.5
    assert decisions[0].ds_label == NONE_RELATION

    summary = summarize_filter(decisions, 2, "run")
    assert (summary.total, summary.dropped, summary.noisy, summary.dropped_noisy) == (4, 1, 3, 1)
    assert summary.noise_precision == 1.0
    assert summary.noise_recall == pytest.approx(1 / 3)


def test_summary_needs_noise_truth():
    samples = _samples([0, 1])
    decisions = filter_decisions(np.full((2, 5), 0.2), samples, SCHEMA, 1, epoch=1, run_id="run")
    assert summarize_filter(decisions, 1, "run") is None


def test_active_set_summary_counts_samples_left_out():
    samples = [
        RelationSample(f"s{i}", ("a", "b"), (0, 0), (1, 1), label, noisy)
        for i, (label, noisy) in enumerate([(0, True), (1, False), (2, False), (3, True)])
    ]
    active = ActiveSet(np.array([False, True, False, True]), epoch=3, filtered={0: 1, 2: 1})
    summary = summarize_active_set(active, samples, 3, "run")
    assert (summary.total, summary.dropped, summary.noisy, summary.dropped_noisy) == (4, 2, 2, 1)
    assert summary.noise_precision == 0.5
    assert summary.noise_recall == 0.5

    assert summarize_active_set(ActiveSet.full(2), _samples([0, 1]), 3, "run") is None
    with pytest.raises(ConfigError):
        summarize_active_set(ActiveSet.full(3), samples, 3, "run")



def test_decision_record_omits_unknown_noise_truth():
    decisions = filter_decisions(np.full((1, 5), 0.2), _samples([1]), SCHEMA, 1, epoch=1, run_id="run")
    assert "noise_truth" not in decisions[0].to_dict()
