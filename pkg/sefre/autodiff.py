"""
Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every primitive checks its forward output for NaN/Inf and, when a `Tape` is
active on the current thread and one of its inputs requires a gradient,
appends a record to that tape. `Tape.gradient` then walks the records in
exact reverse execution order. Outside a tape the primitives are plain numpy
computations, which is how eval-mode forwards (teacher, inference) run.

Tensors are never mutated by an op, so parameter tensors can be shared
read-only between threads that each own their tape.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Literal, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, CorpusError, GradientCheckError, NonFiniteError

logger = logging.getLogger("sefre.autodiff")


class Precision(str, Enum):
    double = "double"
    single = "single"

    @property
    def dtype(self) -> np.dtype:
        match self:
            case Precision.double:
                return np.dtype(np.float64)
            case Precision.single:
                return np.dtype(np.float32)


class Tensor:
    __slots__ = ("data", "requires_grad", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigError(f"item() needs a single-element tensor, got shape {self.shape}.")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other) -> Tensor:
        return add(self, other)

    def __radd__(self, other) -> Tensor:
        return add(other, self)

    def __sub__(self, other) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other) -> Tensor:
        return sub(other, self)

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(frozen=True)
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Backward


_local = threading.local()


def active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


class Tape:
    """
    Ordered record of the differentiable ops executed while it is active.

    Usage:
        with Tape() as tape:
            loss = model(...)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self) -> Tape:
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def ops(self) -> list[str]:
        return [record.op for record in self.records]

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """
        Gradients of the scalar `target` with respect to each of `sources`.

        Records are visited in reverse execution order, so every consumer of a
        tensor has contributed to its gradient before that gradient is read.
        Sources that do not influence the target get a zero gradient.
        """
        if target.size != 1:
            raise ConfigError(f"Gradient target must be a scalar, got shape {target.shape}.")

        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for record in reversed(self.records):
            upstream = grads.get(id(record.output))
            if upstream is None:
                continue
            for tensor, local in zip(record.inputs, record.backward(upstream)):
                if local is None or not tensor.requires_grad:
                    continue
                if not np.all(np.isfinite(local)):
                    raise NonFiniteError(record.op, phase="backward")
                key = id(tensor)
                grads[key] = grads[key] + local if key in grads else local

        logger.debug(f"[bright_black]backward over {len(self.records)} ops[/bright_black]")
        return [grads.get(id(source), np.zeros_like(source.data)) for source in sources]


def _record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: Backward) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(op)
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=track, op=op)
    if track:
        tape.records.append(TapeRecord(op, tuple(inputs), result, backward))
    return result


def as_tensor(value, dtype: np.dtype | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype or np.float64))


def _operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.dtype), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the dimensions numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(x: Tensor) -> Tensor:
    return _record("neg", (x,), -x.data, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ConfigError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}.")
    if a.shape[-1] != b.shape[-2]:
        raise ConfigError(f"matmul dimension mismatch: {a.shape} @ {b.shape}.")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), a.data @ b.data, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# Nonlinearities

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; values below `floor` are clamped and pass no gradient."""
    if floor is None:
        clamped = x.data
        passing = np.ones_like(x.data)
    else:
        clamped = np.maximum(x.data, floor)
        passing = (x.data >= floor).astype(x.dtype)
    return _record("log", (x,), np.log(clamped), lambda g: (g * passing / clamped,))


def softmax(x: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax along `axis`; positions where `mask` is False get probability 0."""
    logits = x.data if mask is None else np.where(mask, x.data, -np.inf)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    y = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (x,), y, backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when `rng` is None (eval mode) or rate is 0."""
    if rng is None or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"Dropout rate must be in [0, 1), got {rate}.")
    scale = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.dtype)
    return _record("dropout", (x,), x.data * scale, lambda g: (g * scale,))


# Reductions and shape manipulation

def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    def backward(g):
        expanded = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, x.shape),)

    return _record("sum", (x,), np.asarray(x.data.sum(axis=axis)), backward)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis), 1.0 / count)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record("concat", tuple(tensors), out, lambda g: np.split(g, splits, axis=axis))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _record("stack", tuple(tensors), out, backward)


def select(x: Tensor, index: int, axis: int) -> Tensor:
    """The slice at `index` along `axis` (that axis is dropped)."""
    def backward(g):
        grad = np.zeros_like(x.data)
        where: list = [slice(None)] * x.ndim
        where[axis] = index
        grad[tuple(where)] = g
        return (grad,)

    return _record("select", (x,), np.take(x.data, index, axis=axis), backward)


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup: `table[indices]` for an integer index array of any shape."""
    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return _record("take_rows", (table,), table.data[indices], backward)


def pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """Row-wise gather `x[i, indices[i]]` of a (B, C) tensor."""
    rows = np.arange(x.shape[0])

    def backward(g):
        grad = np.zeros_like(x.data)
        grad[rows, indices] = g
        return (grad,)

    return _record("pick", (x,), x.data[rows, indices], backward)


# Convolution and pooling

def conv1d(seq: Tensor, filters: Tensor) -> Tensor:
    """
    Narrow convolution over token positions with right zero-padding.

    `seq` is (..., n, d) and `filters` is (f_k, k*d), one flattened filter per
    row. Output row i is f^T (x_i || ... || x_{i+k-1}) where k-1 zero rows are
    appended after the sequence, so all n windows exist.
    """
    *lead, n, d = seq.shape
    f_k, width = filters.shape
    if n < 1:
        raise ConfigError("conv1d needs at least one token.")
    if width % d != 0 or width == 0:
        raise ConfigError(f"Filter length {width} is not a multiple of token dimension {d}.")
    k = width // d

    padded = np.pad(seq.data, [(0, 0)] * len(lead) + [(0, k - 1), (0, 0)])
    windows = np.swapaxes(sliding_window_view(padded, k, axis=-2), -1, -2).reshape(*lead, n, width)
    out = windows @ filters.data.T

    def backward(g):
        g_filters = g.reshape(-1, f_k).T @ windows.reshape(-1, width)
        g_windows = (g @ filters.data).reshape(*lead, n, k, d)
        g_padded = np.zeros(padded.shape, dtype=g.dtype)
        for j in range(k):
            g_padded[..., j:j + n, :] += g_windows[..., :, j, :]
        return g_padded[..., :n, :], g_filters

    return _record("conv1d", (seq, filters), out, backward)


def global_max_pool(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """
    Max over positions of (..., n, f) scores, giving (..., f).

    The gradient goes to the lowest-index argmax; positions where `mask`
    (shape (..., n)) is False are ignored.
    """
    if scores.ndim < 2 or scores.shape[-2] == 0:
        raise ConfigError("max-pool over an empty sequence.")
    masked = scores.data
    if mask is not None:
        if not np.all(mask.any(axis=-1)):
            raise ConfigError("max-pool mask leaves no position.")
        masked = np.where(mask[..., None], scores.data, -np.inf)
    idx = np.argmax(masked, axis=-2)[..., None, :]
    out = np.take_along_axis(scores.data, idx, axis=-2)[..., 0, :]

    def backward(g):
        grad = np.zeros_like(scores.data)
        np.put_along_axis(grad, idx, g[..., None, :], axis=-2)
        return (grad,)

    return _record("global_max_pool", (scores,), out, backward)


def segment_max_pool(scores: Tensor, segments: np.ndarray) -> Tensor:
    """
    Max of (..., n, f) scores inside each of s boolean segments (..., s, n),
    giving (..., s, f). Segments may overlap; ties go to the lowest index.
    """
    if not np.all(segments.any(axis=-1)):
        raise ConfigError("piecewise max-pool got an empty segment.")
    masked = np.where(segments[..., :, :, None], scores.data[..., None, :, :], -np.inf)
    idx = np.argmax(masked, axis=-2)[..., None, :]
    out = np.take_along_axis(masked, idx, axis=-2)[..., 0, :]

    def backward(g):
        grad = np.zeros(masked.shape, dtype=g.dtype)
        np.put_along_axis(grad, idx, g[..., None, :], axis=-2)
        return (grad.sum(axis=-3),)

    return _record("piecewise_max_pool", (scores,), out, backward)


Span = tuple[int, int]


def piecewise_segments(length: int, e1: Span, e2: Span, total: int | None = None) -> np.ndarray:
    """
    The three entity-delimited segments of a sentence as a (3, total) mask:
    start .. end of the first entity, start of the first .. end of the second,
    start of the second .. end of the sentence. Entity tokens are shared.
    """
    total = length if total is None else total
    for start, end in (e1, e2):
        if not 0 <= start <= end < length:
            raise CorpusError(f"Entity span ({start}, {end}) out of bounds for length {length}.")
    first, second = (e1, e2) if e1[0] <= e2[0] else (e2, e1)
    segments = np.zeros((3, total), dtype=bool)
    segments[0, : first[1] + 1] = True
    segments[1, first[0]: second[1] + 1] = True
    segments[2, second[0]: length] = True
    return segments


def piecewise_max_pool(scores: Tensor, e1: Span, e2: Span) -> Tensor:
    """Three max values per filter for a single (n, f) score matrix: (3, f)."""
    return segment_max_pool(scores, piecewise_segments(scores.shape[-2], e1, e2))


# Recurrent layers

@dataclass(frozen=True)
class GRUWeights:
    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    NAMES = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")

    @property
    def hidden_size(self) -> int:
        return self.u_z.shape[0]

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str) -> GRUWeights:
        return cls(**{name: params[f"{prefix}{name}"] for name in cls.NAMES})


def gru_sequence(
    seq: Tensor,
    weights: GRUWeights,
    direction: Literal["forward", "backward"] = "forward",
    mask: np.ndarray | None = None,
) -> Tensor:
    """
    Run a gated recurrent unit over (..., n, d) inputs, returning (..., n, h).

    Per step, with h_0 = 0:
        z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
        r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
        g_t = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)
        h_t = z_t * h_{t-1} + (1 - z_t) * g_t
    Positions where `mask` is False carry the previous state through unchanged,
    so a backward pass over a right-padded sequence starts at its last token.
    """
    unbatched = seq.ndim == 2
    if unbatched:
        seq = reshape(seq, (1, *seq.shape))
        mask = None if mask is None else mask[None, :]
    batch, n, d = seq.shape
    if weights.w_z.shape[0] != d:
        raise ConfigError(f"GRU input size {weights.w_z.shape[0]} does not match token dimension {d}.")

    xz = linear(seq, weights.w_z, weights.b_z)
    xr = linear(seq, weights.w_r, weights.b_r)
    xh = linear(seq, weights.w_h, weights.b_h)

    state = Tensor(np.zeros((batch, weights.hidden_size), dtype=seq.dtype))
    outputs: list[Tensor | None] = [None] * n
    steps = range(n) if direction == "forward" else reversed(range(n))
    for t in steps:
        z = sigmoid(select(xz, t, 1) + matmul(state, weights.u_z))
        r = sigmoid(select(xr, t, 1) + matmul(state, weights.u_r))
        candidate = tanh(select(xh, t, 1) + matmul(r * state, weights.u_h))
        new_state = z * state + (1.0 - z) * candidate
        if mask is not None:
            keep = mask[:, t, None].astype(seq.dtype)
            new_state = new_state * keep + state * (1.0 - keep)
        state = new_state
        outputs[t] = state

    out = stack(outputs, axis=1)
    return reshape(out, out.shape[1:]) if unbatched else out


def bigru(seq: Tensor, forward: GRUWeights, backward: GRUWeights, mask: np.ndarray | None = None) -> Tensor:
    """Forward and backward GRU states concatenated per position: (..., n, 2h)."""
    return concat([
        gru_sequence(seq, forward, "forward", mask),
        gru_sequence(seq, backward, "backward", mask),
    ], axis=-1)


# Verification

def check_gradients(
    model_forward: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """
    Compare tape gradients with central finite differences.

    Returns max over every scalar parameter of
    |analytic - numeric| / max(1, |numeric|). Parameters are perturbed in
    place and restored. Inputs within `eps` of a max-pool tie disagree with
    the finite difference, so checks should use random inputs.
    """
    for param in params:
        if param.dtype != np.float64:
            raise GradientCheckError("Gradient checks require double precision parameters.")

    with Tape() as tape:
        loss = model_forward()
    try:
        analytic = tape.gradient(loss, params)
    except NonFiniteError as e:
        raise GradientCheckError(f"Non-finite gradient from op '{e.op}'.") from e

    worst = 0.0
    for param, grad in zip(params, analytic):
        for idx in np.ndindex(param.shape):
            original = param.data[idx]
            param.data[idx] = original + eps
            plus = model_forward().item()
            param.data[idx] = original - eps
            minus = model_forward().item()
            param.data[idx] = original
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, abs(grad[idx] - numeric) / max(1.0, abs(numeric)))
    return worst
