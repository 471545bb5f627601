"""
Student architectures for sentence-level relation classification.

Every model reads token vectors x_t = w_t || u1_t || u2_t (word embedding plus
two position embeddings, distances measured to each entity's start token) and
returns a softmax over the C relations of the schema:

    CNN   conv -> max-pool -> tanh
    PCNN  conv -> three entity-delimited max-pools -> tanh
    EA    CNN features || one word-attention vector per entity
    BGWA  Bi-GRU -> word attention -> scaled states -> PCNN block

All forwards are batched over right-padded sequences; the padding mask keeps
padded positions out of convolution windows, pools and attention.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from dataclasses_json import DataClassJsonMixin

from .autodiff import (
    GRUWeights, Precision, Tensor, bigru, concat, conv1d, dropout, global_max_pool,
    linear, matmul, piecewise_segments, reshape, segment_max_pool, softmax, take_rows, tanh,
)
from .corpus import RelationSample, Vocabulary
from .errors import ConfigError

logger = logging.getLogger("sefre.students")

INFERENCE_BATCH = 256


class Architecture(str, Enum):
    cnn = "cnn"
    pcnn = "pcnn"
    ea = "ea"
    bgwa = "bgwa"


@dataclass(frozen=True)
class ModelConfig(DataClassJsonMixin):
    architecture: Architecture
    num_relations: int
    vocab_size: int
    word_dim: int = 50
    pos_dim: int = 5
    max_distance: int = 50
    filters: int = 230
    kernel: int = 3
    gru_hidden: int = 115
    attention_dim: int = 50
    dropout: float = 0.5
    init_scale: float = 0.1
    precision: Precision = Precision.double

    @property
    def token_dim(self) -> int:
        return self.word_dim + 2 * self.pos_dim

    @property
    def position_rows(self) -> int:
        # 2 * max_distance + 1 in-range distances plus one clip bucket
        return 2 * self.max_distance + 2

    @property
    def feature_dim(self) -> int:
        match self.architecture:
            case Architecture.cnn:
                return self.filters
            case Architecture.pcnn | Architecture.bgwa:
                return 3 * self.filters
            case Architecture.ea:
                return self.filters + 2 * self.word_dim

    def validate(self) -> None:
        if self.num_relations < 2:
            raise ConfigError("The output layer needs at least two relations.")
        for name in ("vocab_size", "word_dim", "pos_dim", "filters", "kernel", "gru_hidden", "attention_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}.")
        if self.max_distance < 0:
            raise ConfigError("max_distance must be non-negative.")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"Dropout rate must be in [0, 1), got {self.dropout}.")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative.")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Named trainable tensors of an architecture, in initialisation order."""
    shapes: dict[str, tuple[int, ...]] = {
        "word": (config.vocab_size, config.word_dim),
        "pos1": (config.position_rows, config.pos_dim),
        "pos2": (config.position_rows, config.pos_dim),
    }
    conv_input = config.token_dim
    if config.architecture == Architecture.bgwa:
        d, h, a = config.token_dim, config.gru_hidden, config.attention_dim
        for direction in ("gru_f_", "gru_b_"):
            shapes |= {f"{direction}w_{g}": (d, h) for g in "zrh"}
            shapes |= {f"{direction}u_{g}": (h, h) for g in "zrh"}
            shapes |= {f"{direction}b_{g}": (h,) for g in "zrh"}
        shapes |= {"att_w1": (2 * h, a), "att_b1": (a,), "att_w2": (a, 1)}
        conv_input = 2 * h
    shapes |= {
        "conv_f": (config.filters, config.kernel * conv_input),
        "conv_b": (config.filters,),
    }
    if config.architecture == Architecture.ea:
        d, a = config.word_dim, config.attention_dim
        for entity in ("att1_", "att2_"):
            shapes |= {f"{entity}word": (d, a), f"{entity}entity": (d, a), f"{entity}b": (a,), f"{entity}v": (a, 1)}
    shapes |= {
        "out_w": (config.feature_dim, config.num_relations),
        "out_b": (config.num_relations,),
    }
    return shapes


@dataclass(frozen=True)
class StudentParams:
    """The student's trainable tensors; the PAD word row is zero and never updated."""
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def tracked(self) -> dict[str, Tensor]:
        return {name: Tensor(array, requires_grad=True) for name, array in self.tensors.items()}

    def constants(self) -> dict[str, Tensor]:
        return {name: Tensor(array) for name, array in self.tensors.items()}


def init_params(
    config: ModelConfig,
    rng: np.random.Generator,
    pretrained: Mapping[int, np.ndarray] | None = None,
) -> StudentParams:
    """Uniform(-init_scale, init_scale) for every tensor, then pretrained rows, then PAD = 0."""
    config.validate()
    dtype = config.precision.dtype
    tensors = {
        name: rng.uniform(-config.init_scale, config.init_scale, size=shape).astype(dtype)
        for name, shape in parameter_shapes(config).items()
    }
    for row, vector in (pretrained or {}).items():
        tensors["word"][row] = vector
    tensors["word"][Vocabulary.PAD_INDEX] = 0.0
    return StudentParams(config, tensors)


def load_embeddings(path: Path, vocab: Vocabulary, word_dim: int) -> dict[int, np.ndarray]:
    """Rows of the word table found in a text embedding file (token then word_dim reals)."""
    rows: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if len(parts) < 2:
                continue
            if len(parts) - 1 != word_dim:
                raise ConfigError(f"{path}:{line_no}: expected {word_dim} values, got {len(parts) - 1}.")
            try:
                vector = np.array(parts[1:], dtype=np.float64)
            except ValueError as e:
                raise ConfigError(f"{path}:{line_no}: non-numeric vector value: {e}") from e
            if parts[0] in vocab and vocab.index(parts[0]) != Vocabulary.PAD_INDEX:
                rows[vocab.index(parts[0])] = vector
    logger.info(f"Loaded {len(rows)} pretrained vectors for {len(vocab)} vocabulary entries")
    return rows


def position_index(distance: int, max_distance: int) -> int:
    """Row of a position table: distance 0 is the centre row, |d| > max_distance the last row."""
    if abs(distance) > max_distance:
        return 2 * max_distance + 1
    return distance + max_distance


@dataclass(frozen=True)
class Batch:
    words: np.ndarray
    pos1: np.ndarray
    pos2: np.ndarray
    mask: np.ndarray
    segments: np.ndarray
    e1_last: np.ndarray
    e2_last: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


def encode_batch(samples: Sequence[RelationSample], vocab: Vocabulary, config: ModelConfig) -> Batch:
    width = max(sample.length for sample in samples)
    shape = (len(samples), width)
    words = np.full(shape, Vocabulary.PAD_INDEX, dtype=np.int64)
    pos1 = np.zeros(shape, dtype=np.int64)
    pos2 = np.zeros(shape, dtype=np.int64)
    mask = np.zeros(shape, dtype=bool)
    segments = np.zeros((len(samples), 3, width), dtype=bool)
    for i, sample in enumerate(samples):
        n = sample.length
        words[i, :n] = vocab.encode(sample.tokens)
        pos1[i, :n] = [position_index(t - sample.e1_span[0], config.max_distance) for t in range(n)]
        pos2[i, :n] = [position_index(t - sample.e2_span[0], config.max_distance) for t in range(n)]
        mask[i, :n] = True
        segments[i] = piecewise_segments(n, sample.e1_span, sample.e2_span, width)
    return Batch(
        words=words,
        pos1=pos1,
        pos2=pos2,
        mask=mask,
        segments=segments,
        e1_last=np.array([vocab.index(s.tokens[s.e1_span[1]]) for s in samples], dtype=np.int64),
        e2_last=np.array([vocab.index(s.tokens[s.e2_span[1]]) for s in samples], dtype=np.int64),
        labels=np.array([s.ds_label for s in samples], dtype=np.int64),
    )


Params = Mapping[str, Tensor]


def _token_vectors(params: Params, batch: Batch) -> Tensor:
    x = concat([
        take_rows(params["word"], batch.words),
        take_rows(params["pos1"], batch.pos1),
        take_rows(params["pos2"], batch.pos2),
    ], axis=-1)
    return x * batch.mask[..., None].astype(x.dtype)


def token_vectors(sample: RelationSample, vocab: Vocabulary, params: Params, config: ModelConfig) -> Tensor:
    """The n x (d_w + 2 d_u) input matrix of one sample."""
    x = _token_vectors(params, encode_batch([sample], vocab, config))
    return reshape(x, x.shape[1:])


def _classify(params: Params, features: Tensor, config: ModelConfig, rng: np.random.Generator | None) -> Tensor:
    features = dropout(features, config.dropout, rng)
    return softmax(linear(features, params["out_w"], params["out_b"]))


def _piecewise_features(params: Params, x: Tensor, batch: Batch) -> Tensor:
    pooled = segment_max_pool(conv1d(x, params["conv_f"]), batch.segments)
    features = tanh(pooled + params["conv_b"])
    return reshape(features, (batch.size, -1))


def _global_features(params: Params, x: Tensor, batch: Batch) -> Tensor:
    return tanh(global_max_pool(conv1d(x, params["conv_f"]), batch.mask) + params["conv_b"])


def _check(config: ModelConfig, architecture: Architecture) -> None:
    if config.architecture != architecture:
        raise ConfigError(f"Parameters are for {config.architecture.value}, not {architecture.value}.")


def cnn_forward(params: Params, batch: Batch, config: ModelConfig, rng: np.random.Generator | None = None) -> Tensor:
    _check(config, Architecture.cnn)
    return _classify(params, _global_features(params, _token_vectors(params, batch), batch), config, rng)


def pcnn_forward(params: Params, batch: Batch, config: ModelConfig, rng: np.random.Generator | None = None) -> Tensor:
    _check(config, Architecture.pcnn)
    return _classify(params, _piecewise_features(params, _token_vectors(params, batch), batch), config, rng)


def entity_attention(params: Params, words: Tensor, entity: Tensor, mask: np.ndarray, prefix: str) -> tuple[Tensor, Tensor]:
    """
    Attention of (B, N, d_w) word embeddings conditioned on a (B, d_w) entity
    embedding. The first layer on [w_t || w_e] is split into a word and an
    entity projection. Returns (weights (B, N), attended (B, d_w)).
    """
    batch, width, _ = words.shape
    projected_entity = reshape(matmul(entity, params[f"{prefix}entity"]), (batch, 1, -1))
    hidden = tanh(matmul(words, params[f"{prefix}word"]) + projected_entity + params[f"{prefix}b"])
    weights = softmax(reshape(matmul(hidden, params[f"{prefix}v"]), (batch, width)), mask=mask)
    attended = matmul(reshape(weights, (batch, 1, width)), words)
    return weights, reshape(attended, (batch, -1))


def ea_forward(params: Params, batch: Batch, config: ModelConfig, rng: np.random.Generator | None = None) -> Tensor:
    _check(config, Architecture.ea)
    global_features = _global_features(params, _token_vectors(params, batch), batch)
    words = take_rows(params["word"], batch.words)
    _, attended_e1 = entity_attention(params, words, take_rows(params["word"], batch.e1_last), batch.mask, "att1_")
    _, attended_e2 = entity_attention(params, words, take_rows(params["word"], batch.e2_last), batch.mask, "att2_")
    return _classify(params, concat([global_features, attended_e1, attended_e2], axis=-1), config, rng)


def word_attention(params: Params, hidden: Tensor, mask: np.ndarray) -> Tensor:
    """score_t = w2 . tanh(W1 h_t + b1), softmax over valid positions: (B, N)."""
    batch, width, _ = hidden.shape
    scores = matmul(tanh(linear(hidden, params["att_w1"], params["att_b1"])), params["att_w2"])
    return softmax(reshape(scores, (batch, width)), mask=mask)


def bgwa_forward(params: Params, batch: Batch, config: ModelConfig, rng: np.random.Generator | None = None) -> Tensor:
    _check(config, Architecture.bgwa)
    x = _token_vectors(params, batch)
    hidden = bigru(
        x,
        GRUWeights.from_params(params, "gru_f_"),
        GRUWeights.from_params(params, "gru_b_"),
        batch.mask,
    )
    weights = word_attention(params, hidden, batch.mask)
    scaled = hidden * reshape(weights, (*weights.shape, 1))
    return _classify(params, _piecewise_features(params, scaled, batch), config, rng)


Forward = Callable[[Params, Batch, ModelConfig, np.random.Generator | None], Tensor]

FORWARDS: dict[Architecture, Forward] = {
    Architecture.cnn: cnn_forward,
    Architecture.pcnn: pcnn_forward,
    Architecture.ea: ea_forward,
    Architecture.bgwa: bgwa_forward,
}


def forward(params: Params, batch: Batch, config: ModelConfig, rng: np.random.Generator | None = None) -> Tensor:
    """(B, C) relation probabilities; dropout is active only when `rng` is given."""
    return FORWARDS[config.architecture](params, batch, config, rng)


def predict_probs(
    config: ModelConfig,
    tensors: Mapping[str, np.ndarray],
    samples: Sequence[RelationSample],
    vocab: Vocabulary,
    workers: int = 1,
    batch_size: int = INFERENCE_BATCH,
) -> np.ndarray:
    """Eval-mode probabilities for every sample, in order: (M, C)."""
    params = {name: Tensor(array) for name, array in tensors.items()}
    chunks = [samples[i:i + batch_size] for i in range(0, len(samples), batch_size)]

    def run(chunk: Sequence[RelationSample]) -> np.ndarray:
        return forward(params, encode_batch(chunk, vocab, config), config).data

    if not chunks:
        return np.zeros((0, config.num_relations))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(chunk) for chunk in chunks]
    return np.concatenate(parts)
