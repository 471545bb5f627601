import math

import numpy as np
import pytest

from sefre.autodiff import (
    GRUWeights, Tape, Tensor, bigru, check_gradients, concat, conv1d, dropout, global_max_pool, gru_sequence,
    linear, log, matmul, pick, piecewise_max_pool, piecewise_segments, reduce_mean, reduce_sum, segment_max_pool,
    softmax, take_rows, tanh,
)
from sefre.errors import ConfigError, CorpusError, GradientCheckError, NonFiniteError


def _random(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _leaf_gru_weights(rng, d, h):
    return GRUWeights(**{
        name: Tensor(rng.normal(scale=0.5, size=(d, h) if name[0] == "w" else (h, h) if name[0] == "u" else (h,)), requires_grad=True)
        for name in GRUWeights.NAMES
    })


def test_conv1d_right_pads_windows():
    seq = Tensor(np.array([[1.0], [2.0], [3.0]]))
    out = conv1d(seq, Tensor(np.array([[1.0, 1.0]])))
    np.testing.assert_array_equal(out.data[:, 0], [3.0, 5.0, 3.0])


def test_conv1d_output_shape():
    rng = np.random.default_rng(0)
    out = conv1d(Tensor(rng.normal(size=(20, 60))), Tensor(rng.normal(size=(230, 3 * 60))))
    assert out.shape == (20, 230)


def test_conv1d_zero_filter_and_linearity():
    rng = np.random.default_rng(1)
    seq = Tensor(rng.normal(size=(6, 4)))
    assert np.all(conv1d(seq, Tensor(np.zeros((3, 8)))).data == 0.0)

    f1, f2 = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    combined = conv1d(seq, Tensor(2.0 * f1 - 0.5 * f2)).data
    separate = 2.0 * conv1d(seq, Tensor(f1)).data - 0.5 * conv1d(seq, Tensor(f2)).data
    np.testing.assert_allclose(combined, separate, atol=1e-10)


def test_conv1d_rejects_mismatched_filter_width():
    with pytest.raises(ConfigError):
        conv1d(Tensor(np.zeros((4, 3))), Tensor(np.zeros((2, 7))))


def test_global_max_pool_value_and_tie_gradient():
    scores = Tensor(np.array([[3.0], [5.0], [3.0]]), requires_grad=True)
    assert global_max_pool(scores).item() == 5.0

    constant = Tensor(np.full((4, 1), 2.0), requires_grad=True)
    with Tape() as tape:
        pooled = reduce_sum(global_max_pool(constant))
    (grad,) = tape.gradient(pooled, [constant])
    np.testing.assert_array_equal(grad[:, 0], [1.0, 0.0, 0.0, 0.0])

    assert global_max_pool(Tensor(np.array([[7.5]]))).item() == 7.5


def test_global_max_pool_rejects_empty_input():
    with pytest.raises(ConfigError):
        global_max_pool(Tensor(np.zeros((0, 3))))


def test_global_max_pool_ignores_masked_positions():
    scores = Tensor(np.array([[[1.0], [2.0], [9.0]]]))
    out = global_max_pool(scores, mask=np.array([[True, True, False]]))
    assert out.data[0, 0] == 2.0


def test_piecewise_max_pool_three_segments():
    scores = Tensor(np.array([1.0, 5.0, 2.0, 7.0, 3.0, 4.0, 6.0])[:, None])
    out = piecewise_max_pool(scores, (1, 1), (4, 4))
    np.testing.assert_array_equal(out.data[:, 0], [5.0, 7.0, 6.0])


def test_piecewise_max_pool_boundaries():
    c = np.array([4.0, 1.0, 3.0, 2.0])
    out = piecewise_max_pool(Tensor(c[:, None]), (0, 0), (3, 3))
    np.testing.assert_array_equal(out.data[:, 0], [4.0, 4.0, 2.0])

    single = piecewise_max_pool(Tensor(np.array([[1.5]])), (0, 0), (0, 0))
    np.testing.assert_array_equal(single.data[:, 0], [1.5, 1.5, 1.5])


def test_piecewise_max_pool_full_spans_equal_global_pool():
    rng = np.random.default_rng(2)
    scores = Tensor(rng.normal(size=(6, 3)))
    piecewise = piecewise_max_pool(scores, (0, 5), (0, 5))
    for segment in piecewise.data:
        np.testing.assert_array_equal(segment, global_max_pool(scores).data)


def test_piecewise_segments_order_independent_of_argument_order():
    np.testing.assert_array_equal(piecewise_segments(7, (1, 1), (4, 4)), piecewise_segments(7, (4, 4), (1, 1)))


def test_piecewise_segments_rejects_out_of_bounds_span():
    with pytest.raises(CorpusError):
        piecewise_segments(3, (0, 0), (3, 3))


def test_segment_max_pool_batched_shape():
    scores = Tensor(np.arange(12, dtype=float).reshape(2, 3, 2))
    segments = np.ones((2, 3, 3), dtype=bool)
    assert segment_max_pool(scores, segments).shape == (2, 3, 2)


def test_gru_zero_weights_give_zero_states():
    zero = GRUWeights(**{
        name: Tensor(np.zeros((2, 3) if name[0] == "w" else (3, 3) if name[0] == "u" else (3,)))
        for name in GRUWeights.NAMES
    })
    out = gru_sequence(Tensor(np.random.default_rng(3).normal(size=(5, 2))), zero)
    assert out.shape == (5, 3)
    assert np.all(out.data == 0.0)


def test_gru_single_step_matches_gate_equations():
    values = dict(w_z=0.3, w_r=-0.2, w_h=0.7, u_z=0.1, u_r=0.4, u_h=-0.5, b_z=0.05, b_r=0.0, b_h=-0.1)
    weights = GRUWeights(**{
        name: Tensor(np.array([[v]]) if name[0] in "wu" else np.array([v])) for name, v in values.items()
    })
    x = 1.5
    z = 1.0 / (1.0 + math.exp(-(values["w_z"] * x + values["b_z"])))
    g = math.tanh(values["w_h"] * x + values["b_h"])
    expected = (1.0 - z) * g
    out = gru_sequence(Tensor(np.array([[x]])), weights)
    assert out.item() == pytest.approx(expected, abs=1e-12)


def test_bigru_shape_and_backward_direction():
    rng = np.random.default_rng(4)
    seq = Tensor(rng.normal(size=(4, 2)))
    forward, backward = _leaf_gru_weights(rng, 2, 3), _leaf_gru_weights(rng, 2, 3)
    out = bigru(seq, forward, backward)
    assert out.shape == (4, 6)
    np.testing.assert_allclose(out.data[:, 3:], gru_sequence(seq, backward, "backward").data)


def test_gru_mask_starts_backward_pass_at_last_real_token():
    rng = np.random.default_rng(5)
    weights = _leaf_gru_weights(rng, 2, 3)
    short = rng.normal(size=(3, 2))
    padded = np.concatenate([short, np.zeros((2, 2))])[None]
    mask = np.array([[True, True, True, False, False]])
    batched = gru_sequence(Tensor(padded), weights, "backward", mask)
    alone = gru_sequence(Tensor(short), weights, "backward")
    np.testing.assert_allclose(batched.data[0, :3], alone.data, atol=1e-12)


def test_softmax_sums_to_one_and_is_positive():
    rng = np.random.default_rng(6)
    probs = softmax(Tensor(rng.normal(scale=10.0, size=(5, 7)))).data
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(probs > 0)


def test_softmax_mask_zeroes_positions():
    probs = softmax(Tensor(np.array([[1.0, 2.0, 3.0]])), mask=np.array([[True, True, False]])).data
    assert probs[0, 2] == 0.0
    assert probs[0, :2].sum() == pytest.approx(1.0)


def test_dropout_is_identity_without_rng():
    x = Tensor(np.ones((3, 4)))
    assert dropout(x, 0.5, None) is x


def test_dropout_scales_kept_units():
    out = dropout(Tensor(np.ones((200, 50))), 0.5, np.random.default_rng(7)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert 0.4 < np.mean(out == 0.0) < 0.6


def test_ops_outside_tape_are_not_recorded():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        matmul(Tensor(np.ones((1, 2))), w)
        matmul(Tensor(np.ones((1, 2))), Tensor(np.ones((2, 2))))
    matmul(Tensor(np.ones((1, 2))), w)
    assert tape.ops() == ["matmul"]


def test_gradient_accumulates_over_shared_inputs():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        y = reduce_sum(x * x + x)
    (grad,) = tape.gradient(y, [x])
    np.testing.assert_allclose(grad, [5.0, 7.0])


def test_unused_source_gets_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = reduce_sum(x)
    _, grad = tape.gradient(y, [x, unused])
    assert np.all(grad == 0.0)


def test_log_of_zero_is_non_finite():
    with pytest.raises(NonFiniteError) as info:
        log(Tensor(np.array([0.0, 1.0])))
    assert info.value.op == "log"


def test_log_floor_clamps_without_gradient():
    x = Tensor(np.array([0.0, 0.5]), requires_grad=True)
    with Tape() as tape:
        y = reduce_sum(log(x, floor=1e-12))
    assert y.item() == pytest.approx(math.log(1e-12) + math.log(0.5))
    (grad,) = tape.gradient(y, [x])
    np.testing.assert_allclose(grad, [0.0, 2.0])


def test_check_gradients_linear_softmax_cross_entropy():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(3, 4)))
    w, b = _random(rng, 4, 5), _random(rng, 5)
    labels = np.array([0, 3, 4])

    def loss():
        return -reduce_mean(log(pick(softmax(linear(x, w, b)), labels)))

    assert check_gradients(loss, [w, b]) < 1e-6


def test_check_gradients_conv_pool_and_embeddings():
    rng = np.random.default_rng(9)
    table = _random(rng, 6, 3)
    filters = _random(rng, 2, 6)
    ids = np.array([[1, 4, 2, 5], [3, 3, 0, 0]])
    segments = np.array([piecewise_segments(4, (0, 0), (2, 3)), piecewise_segments(2, (0, 0), (1, 1), 4)])

    def loss():
        scores = conv1d(take_rows(table, ids), filters)
        pooled = segment_max_pool(scores, segments)
        return reduce_sum(tanh(pooled) * tanh(pooled))

    assert check_gradients(loss, [table, filters]) < 1e-4


def test_check_gradients_bigru_with_mask():
    rng = np.random.default_rng(10)
    seq = _random(rng, 2, 4, 3)
    forward, backward = _leaf_gru_weights(rng, 3, 2), _leaf_gru_weights(rng, 3, 2)
    mask = np.array([[True, True, True, True], [True, True, False, False]])

    def loss():
        out = bigru(seq, forward, backward, mask)
        return reduce_sum(concat([out, out * out], axis=-1))

    params = [seq] + [getattr(w, name) for w in (forward, backward) for name in GRUWeights.NAMES]
    assert check_gradients(loss, params) < 1e-4


def test_check_gradients_requires_double_precision():
    w = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(GradientCheckError):
        check_gradients(lambda: reduce_sum(w), [w])
