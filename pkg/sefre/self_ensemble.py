"""
Student / teacher training.

Each optimizer step updates the student with Adagrad on
cross-entropy + MSE consistency against the teacher, then moves the teacher
towards the student by an exponential moving average whose decay ramps up
as alpha_max * exp(-5 p^2). After every epoch the teacher is validated and,
in `sef` mode, re-filters the whole initial training corpus for the next
epoch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from dataclasses_json import DataClassJsonMixin, Undefined

from .autodiff import Precision, Tape, Tensor, as_tensor, log, mul, pick, reduce_mean, reduce_sum
from .corpus import CorpusSplit, RelationSample, RelationSchema, Vocabulary
from .data_types import EpochRecord
from .errors import ConfigError, NonFiniteError, TrainingAborted
from .evaluation import EvalResult, select_threshold
from .noise_filter import ActiveSet, filter_corpus
from .seeding import rng_stream
from .students import Architecture, Batch, ModelConfig, StudentParams, encode_batch, forward, init_params, predict_probs

logger = logging.getLogger("sefre.train")

LOG_FLOOR = 1e-12
ADAGRAD_EPSILON = 1e-8


class TrainingMode(str, Enum):
    sef = "sef"
    se = "se"
    student = "student"


@dataclass(frozen=True)
class TrainConfig(DataClassJsonMixin):
    dataclass_json_config = {
        "undefined": Undefined.RAISE,
    }

    architecture: Architecture = Architecture.cnn
    mode: TrainingMode = TrainingMode.sef
    batch_size: int = 50
    dropout: float = 0.5
    alpha_max: float = 0.9
    ramp_epochs: int = 5
    top_k: int = 3
    learning_rate: float = 0.01
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    train_ratio: float = 0.9
    min_count: int = 1
    word_dim: int = 50
    pos_dim: int = 5
    max_distance: int = 50
    filters: int = 230
    kernel: int = 3
    gru_hidden: int = 115
    attention_dim: int = 50
    precision: Precision = Precision.double

    @property
    def filtering(self) -> bool:
        return self.mode == TrainingMode.sef

    @property
    def uses_teacher(self) -> bool:
        return self.mode != TrainingMode.student

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be at least 1, got {self.batch_size}.")
        if not 0.0 <= self.alpha_max < 1.0:
            raise ConfigError(f"alpha_max must be in [0, 1), got {self.alpha_max}.")
        if self.top_k < 1:
            raise ConfigError(f"K must be at least 1, got {self.top_k}.")
        if self.ramp_epochs < 1:
            raise ConfigError(f"Ramp-up epochs must be at least 1, got {self.ramp_epochs}.")
        if self.learning_rate <= 0:
            raise ConfigError(f"Learning rate must be positive, got {self.learning_rate}.")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be at least 1.")
        if self.min_count < 1:
            raise ConfigError("min_count must be at least 1.")

    def model_config(self, num_relations: int, vocab_size: int) -> ModelConfig:
        model = ModelConfig(
            architecture=self.architecture,
            num_relations=num_relations,
            vocab_size=vocab_size,
            word_dim=self.word_dim,
            pos_dim=self.pos_dim,
            max_distance=self.max_distance,
            filters=self.filters,
            kernel=self.kernel,
            gru_hidden=self.gru_hidden,
            attention_dim=self.attention_dim,
            dropout=self.dropout,
            precision=self.precision,
        )
        model.validate()
        return model


@dataclass(frozen=True)
class AlphaSchedule:
    ramp_epochs: int
    initial_size: int
    batch_size: int
    alpha_max: float

    @property
    def total_steps(self) -> int:
        """T = E * ceil(L0 / B), from the corpus size before any filtering."""
        return self.ramp_epochs * math.ceil(self.initial_size / self.batch_size)


def alpha_at(step_idx: int, schedule: AlphaSchedule) -> float:
    total = schedule.total_steps
    if total < 1:
        raise ConfigError("The alpha ramp-up needs at least one step.")
    p = 1.0 - min(step_idx, total) / total
    return math.exp(-5.0 * p * p) * schedule.alpha_max


@dataclass(frozen=True)
class LossComponents:
    cross_entropy: float
    consistency: float
    clamped: bool


def combined_loss(student_probs: Tensor, teacher_probs: np.ndarray | None, labels: np.ndarray) -> tuple[Tensor, LossComponents]:
    """
    Mean cross-entropy of the student on `labels` plus the mean over the batch
    of the squared distance to the teacher's distribution. Teacher
    probabilities are constants; `None` drops the consistency term.
    """
    batch = len(labels)
    truth = pick(student_probs, labels)
    clamped = bool(np.any(truth.data < LOG_FLOOR))
    if clamped:
        logger.warning(f"[yellow]Warning:[/yellow] Clamped a true-class probability to {LOG_FLOOR} before log.")
    cross_entropy = -reduce_mean(log(truth, LOG_FLOOR))
    if teacher_probs is None:
        return cross_entropy, LossComponents(cross_entropy.item(), 0.0, clamped)
    diff = student_probs - as_tensor(teacher_probs, student_probs.dtype)
    consistency = mul(reduce_sum(diff * diff), 1.0 / batch)
    return cross_entropy + consistency, LossComponents(cross_entropy.item(), consistency.item(), clamped)


@dataclass(frozen=True)
class TeacherState:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    @staticmethod
    def mirror(student: StudentParams) -> TeacherState:
        return TeacherState(student.config, {name: array.copy() for name, array in student.tensors.items()})


def ema_update(teacher: TeacherState, student: StudentParams, alpha: float) -> TeacherState:
    """teacher <- alpha * teacher + (1 - alpha) * student, tensor by tensor."""
    if teacher.tensors.keys() != student.tensors.keys():
        raise ConfigError("Teacher and student have different parameter sets.")
    tensors = {}
    for name, current in teacher.tensors.items():
        if current.shape != student.tensors[name].shape:
            raise ConfigError(f"Shape mismatch for '{name}': {current.shape} vs {student.tensors[name].shape}.")
        tensors[name] = alpha * current + (1.0 - alpha) * student.tensors[name]
    if "word" in tensors:
        tensors["word"][Vocabulary.PAD_INDEX] = 0.0
    return TeacherState(teacher.config, tensors)


def adagrad_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    accumulators: Mapping[str, np.ndarray],
    lr: float,
    epsilon: float = ADAGRAD_EPSILON,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], bool]:
    """Returns (params, accumulators, applied); a non-finite gradient leaves everything unchanged."""
    if lr <= 0:
        raise ConfigError(f"Learning rate must be positive, got {lr}.")
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            logger.warning(f"[yellow]Warning:[/yellow] Non-finite gradient for '{name}', skipping batch.")
            return dict(params), dict(accumulators), False
    new_accumulators = {name: accumulators[name] + grads[name] ** 2 for name in params}
    new_params = {
        name: params[name] - lr * grads[name] / np.sqrt(new_accumulators[name] + epsilon)
        for name in params
    }
    return new_params, new_accumulators, True


@dataclass
class TrainState:
    student: StudentParams
    teacher: TeacherState
    accumulators: dict[str, np.ndarray]
    schedule: AlphaSchedule
    active: ActiveSet
    step_idx: int = 0
    epoch: int = 0
    alpha: float = 0.0
    log: list[EpochRecord] = field(default_factory=list)


@dataclass(frozen=True)
class TrainResult:
    best: TeacherState
    best_epoch: int
    threshold: float
    validation: EvalResult
    state: TrainState
    vocab: Vocabulary
    schema: RelationSchema

    @property
    def log(self) -> list[EpochRecord]:
        return self.state.log


def _train_step(state: TrainState, config: TrainConfig, batch: Batch, rng: np.random.Generator) -> None:
    model = state.student.config
    teacher_probs = None
    if config.uses_teacher:
        teacher_params = {name: Tensor(array) for name, array in state.teacher.tensors.items()}
        teacher_probs = forward(teacher_params, batch, model).data

    params = state.student.tracked()
    names = list(params)
    with Tape() as tape:
        probs = forward(params, batch, model, rng)
        loss, parts = combined_loss(probs, teacher_probs, batch.labels)
    try:
        grads = dict(zip(names, tape.gradient(loss, [params[name] for name in names])))
    except NonFiniteError as e:
        logger.warning(f"[yellow]Warning:[/yellow] {e} Skipping batch.")
        return
    grads["word"][Vocabulary.PAD_INDEX] = 0.0

    tensors, accumulators, applied = adagrad_step(state.student.tensors, grads, state.accumulators, config.learning_rate)
    if not applied:
        return
    state.student = StudentParams(model, tensors)
    state.accumulators = accumulators
    state.alpha = alpha_at(state.step_idx, state.schedule)
    if config.uses_teacher:
        state.teacher = ema_update(state.teacher, state.student, state.alpha)
    state.step_idx += 1
    logger.debug(
        f"[bright_black]step {state.step_idx}: loss={loss.item():.6f} ce={parts.cross_entropy:.6f} "
        f"mse={parts.consistency:.6f} alpha={state.alpha:.6f}[/bright_black]"
    )


def _train_epoch(state: TrainState, config: TrainConfig, samples: Sequence[RelationSample], vocab: Vocabulary) -> None:
    order = rng_stream(config.seed, f"shuffle/{state.epoch}").permutation(np.flatnonzero(state.active.mask))
    dropout_rng = rng_stream(config.seed, f"dropout/{state.epoch}")
    for start in range(0, len(order), config.batch_size):
        chunk = [samples[i] for i in order[start:start + config.batch_size]]
        _train_step(state, config, encode_batch(chunk, vocab, state.student.config), dropout_rng)


def train(
    config: TrainConfig,
    split: CorpusSplit,
    schema: RelationSchema,
    vocab: Vocabulary | None = None,
    pretrained: Mapping[int, np.ndarray] | None = None,
    run_id: str = "",
    workers: int = 1,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train until patience or max_epochs runs out and return the best validated model."""
    config.validate()
    if config.top_k > len(schema):
        raise ConfigError(f"K={config.top_k} exceeds the number of relations ({len(schema)}).")
    if not split.train or not split.validation:
        raise ConfigError("Training and validation sets must both be nonempty.")

    vocab = vocab or Vocabulary.build(split.train, config.min_count)
    model = config.model_config(len(schema), len(vocab))
    student = init_params(model, rng_stream(config.seed, "init"), pretrained)
    schedule = AlphaSchedule(config.ramp_epochs, len(split.train), config.batch_size, config.alpha_max)
    state = TrainState(
        student=student,
        teacher=TeacherState.mirror(student),
        accumulators={name: np.zeros_like(array) for name, array in student.tensors.items()},
        schedule=schedule,
        active=ActiveSet.full(len(split.train)),
        alpha=alpha_at(0, schedule),
    )
    validation_labels = np.array([s.ds_label for s in split.validation], dtype=np.int64)
    logger.info(
        f"Training {model.architecture.value} in {config.mode.value} mode on {len(split.train)} samples "
        f"({len(split.validation)} validation), T={schedule.total_steps}"
    )

    best: TeacherState | None = None
    best_epoch, threshold, best_result = 0, 0.0, None
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        _train_epoch(state, config, split.train, vocab)

        evaluated = state.teacher if config.uses_teacher else TeacherState(model, state.student.tensors)
        probs = predict_probs(model, evaluated.tensors, split.validation, vocab, workers)
        epoch_threshold, result = select_threshold(probs, validation_labels, schema.none_index)
        if best_result is None or result.f1 > best_result.f1:
            best, best_epoch, threshold, best_result = evaluated, epoch, epoch_threshold, result
            stale = 0
        else:
            stale += 1
        stop = stale >= config.patience or epoch == config.max_epochs

        next_active = replace(state.active, epoch=epoch + 1, filtered={})
        if not stop and config.filtering:
            train_probs = predict_probs(model, state.teacher.tensors, split.train, vocab, workers)
            next_active = filter_corpus(train_probs, split.train, schema, config.top_k, epoch + 1)
            if next_active.size == 0:
                raise TrainingAborted(f"Filtering after epoch {epoch} removed every training sample.")

        record = EpochRecord(
            run_id=run_id,
            epoch=epoch,
            val_precision=result.precision,
            val_recall=result.recall,
            val_f1=result.f1,
            threshold=epoch_threshold,
            active_size=state.active.size,
            filtered_none=next_active.filtered_none(schema),
            filtered_valid=next_active.filtered_valid(schema),
            alpha_end=state.alpha,
        )
        state.log.append(record)
        logger.info(
            f"Epoch {epoch}: F1={result.f1:.4f} P={result.precision:.4f} R={result.recall:.4f} "
            f"threshold={epoch_threshold:.4f} active={record.active_size} alpha={state.alpha:.4f}"
        )
        if on_epoch is not None:
            on_epoch(record)
        if stop:
            break
        state.active = next_active

    return TrainResult(best, best_epoch, threshold, best_result, state, vocab, schema)
