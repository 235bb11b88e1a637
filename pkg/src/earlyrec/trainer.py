"""SGD with momentum, training loops, and the finite-difference gradient checker."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .encoder import MODES, EncoderModel, extract_features, finetune_step
from .errors import InvalidInputError
from .losses import LossSelection, classification_loss, fsp_total, future_pred_loss
from .recurrent import RecurrentModel, backward_sequence, forward_sequence, record_teacher_states, save_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Delta:
    """Future-state horizon: ``fraction`` of T, or a ``fixed`` number of steps."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "fraction":
            if not 0.0 < self.value < 1.0:
                raise InvalidInputError("fractional delta must lie in (0, 1)")
        elif self.kind == "fixed":
            if int(self.value) != self.value or self.value < 1:
                raise InvalidInputError("fixed delta must be an integer >= 1")
        else:
            raise InvalidInputError(f"delta kind must be 'fraction' or 'fixed', got {self.kind!r}")

    @classmethod
    def fraction(cls, phi: float) -> "Delta":
        return cls("fraction", float(phi))

    @classmethod
    def fixed(cls, k: int) -> "Delta":
        return cls("fixed", int(k))

    def label(self) -> str:
        return f"frac{self.value:g}" if self.kind == "fraction" else f"fixed{int(self.value)}"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-3
    epochs: int = 150
    loss: LossSelection = field(default_factory=LossSelection)
    delta: Delta | None = None
    seed: int = 0
    checkpoint_every: int = 0
    patience: int = 25

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossSelection(**self.loss)
        if isinstance(self.delta, dict):
            self.delta = Delta(**self.delta)
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0 or self.epochs < 1:
            raise InvalidInputError("invalid optimizer settings in TrainConfig")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def encoder_defaults(cls, mode: str) -> "TrainConfig":
        """Encoder fine-tuning hyper-parameters at full scale."""
        if mode == "single_frame":
            return cls(learning_rate=1e-3, weight_decay=1e-3, epochs=30)
        epochs = 370 if mode == "weighted_subvideo" else 105
        return cls(learning_rate=1e-5, weight_decay=1e-4, epochs=epochs)


# ---------------------------------------------------------------- optimizer


def _is_bias(name: str) -> bool:
    return name.endswith(".b")


def sgd_update(params: dict, grads: dict, velocity: dict, lr: float, momentum: float, weight_decay: float) -> None:
    """In place: ``g += wd*theta`` (weights only); ``v = mu*v + g``; ``theta -= lr*v``."""
    for name, theta in params.items():
        g = grads.get(name)
        v = velocity.get(name)
        if g is None or v is None or np.shape(g) != theta.shape or v.shape != theta.shape:
            raise InvalidInputError(f"gradient/velocity shape mismatch for {name}")
        if weight_decay and not _is_bias(name):
            g = g + weight_decay * theta
        v *= momentum
        v += g
        theta -= lr * v


class SGD:
    def __init__(self, params: dict, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    @classmethod
    def from_config(cls, params, cfg: TrainConfig) -> "SGD":
        return cls(params, cfg.learning_rate, cfg.momentum, cfg.weight_decay)

    def step(self, grads: dict) -> None:
        sgd_update(self.params, grads, self.velocity, self.lr, self.momentum, self.weight_decay)


# ---------------------------------------------------------------- truncation


def truncation_point(delta: Delta, T: int) -> int:
    """Last trained step T'; 0 means the sequence is skipped."""
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    if delta.kind == "fraction":
        # round away representation error before flooring, e.g. (1-0.9)*10
        tp = math.floor(round((1.0 - delta.value) * T, 9))
    else:
        tp = T - int(delta.value)
    return max(tp, 0)


# ---------------------------------------------------------------- logs


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)  # (epoch, split, loss, accuracy_final_step)
    step_counts: list = field(default_factory=list)  # (epoch, seq, T, T', steps with nonzero grad)
    future_loss: list = field(default_factory=list)  # mean future loss per epoch
    best_epoch: int = 0

    def add(self, epoch, split, loss, acc):
        self.rows.append((epoch, split, float(loss), float(acc)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "split", "loss", "accuracy_final_step"])
            for epoch, split, loss, acc in self.rows:
                w.writerow([epoch, split, repr(loss), repr(acc)])

    def losses(self, split="train"):
        return [r[2] for r in self.rows if r[1] == split]


# ---------------------------------------------------------------- objectives


def sequence_objective(model: RecurrentModel, X, label: int, sel: LossSelection, T_prime: int | None = None,
                       targets=None):
    """Loss and parameter gradients of one sequence.

    Classification covers steps 1..T'; for students with a future loss, the
    future term covers the same range against ``targets`` (row t-1 = target
    of step t).  Returns ``(loss, grads, trace, trained_steps, mean_future)``.
    """
    trace = forward_sequence(model, X)
    T = trace.T
    T_prime = T if T_prime is None else T_prime
    loss, dlogits = classification_loss(sel.classification, trace.probs, label, T_prime, T)
    dfuture = None
    mean_future = 0.0
    if model.student:
        if targets is None:
            if sel.future != "none":
                raise InvalidInputError("future targets required for a future-state loss")
            targets = np.zeros((T_prime, model.hidden_dim))
        loss, dlogits, dfuture, mean_future = fsp_total(sel, loss, dlogits, trace.future, targets, T_prime)
    grads = backward_sequence(model, X, dlogits, dfuture, trace=trace)
    active = np.any(dlogits != 0, axis=1)
    if dfuture is not None:
        active |= np.any(dfuture != 0, axis=1)
    return loss, grads, trace, int(active.sum()), mean_future


def encode_sequences(encoder: EncoderModel | None, sequences, max_steps: int | None = None):
    out = []
    for s in sequences:
        feats = extract_features(encoder, s)
        if max_steps is not None:
            feats = feats[:max_steps]
        out.append((np.ascontiguousarray(feats), s.label))
    return out


def validation_score(model: RecurrentModel, items, sel: LossSelection):
    """(final-step accuracy, mean classification loss over full sequences)."""
    if not items:
        return 0.0, 0.0
    correct, total = 0, 0.0
    for X, label in items:
        trace = forward_sequence(model, X)
        correct += int(np.argmax(trace.probs[-1]) == label)
        total += classification_loss(sel.classification, trace.probs, label)[0]
    return correct / len(items), total / len(items)


def _split_items(dataset, encoder, max_steps):
    train = encode_sequences(encoder, dataset.split("train"), max_steps)
    val = encode_sequences(encoder, dataset.split("val"), max_steps)
    if not train:
        raise InvalidInputError("training split is empty")
    return train, val


def _fit(model, train, val, cfg: TrainConfig, per_sequence, checkpoint_dir=None, name="model"):
    """Shared epoch loop: seeded shuffle, one SGD step per sequence, best-val retention."""
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    opt = SGD.from_config(model.params, cfg)
    history = TrainingLog()
    best_key, best_params, since_best = None, None, 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        total, n_used, correct, fut = 0.0, 0, 0, 0.0
        for idx in order:
            out = per_sequence(int(idx))
            if out is None:
                history.step_counts.append((epoch, int(idx), train[idx][0].shape[0], 0, 0))
                continue
            loss, grads, trace, count, mean_future, T_prime = out
            history.step_counts.append((epoch, int(idx), trace.T, T_prime, count))
            correct += int(np.argmax(trace.probs[-1]) == train[idx][1])
            total += loss
            fut += mean_future
            n_used += 1
            opt.step(grads)
        n_used = max(n_used, 1)
        history.add(epoch, "train", total / n_used, correct / n_used)
        history.future_loss.append(fut / n_used)
        val_acc, val_loss = validation_score(model, val, cfg.loss)
        history.add(epoch, "val", val_loss, val_acc)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key, since_best = key, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
        else:
            since_best += 1
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_model(model, Path(checkpoint_dir) / f"{name}_epoch{epoch:04d}.json")
        if val and since_best > cfg.patience:
            log.info("%s: early stop at epoch %d (best %d)", name, epoch, history.best_epoch)
            break
    if val and best_params is not None:
        for k in model.params:
            model.params[k][...] = best_params[k]
    return history


def train_teacher(dataset, encoder: EncoderModel | None, cfg: TrainConfig, hidden_dim: int = 64,
                  max_steps: int | None = None, checkpoint_dir=None):
    """Classification-only LSTM training, one full sequence per SGD step.

    With ``cfg.delta`` set, the loss is restricted to steps 1..T' exactly as
    in :func:`train_fsp`, which makes the two loops comparable at lambda 0.
    """
    train, val = _split_items(dataset, encoder, max_steps)
    E = train[0][0].shape[1]
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    model = RecurrentModel.initialize(E, hidden_dim, dataset.num_classes, init_rng)

    def per_sequence(idx):
        X, label = train[idx]
        T_prime = X.shape[0] if cfg.delta is None else truncation_point(cfg.delta, X.shape[0])
        if T_prime < 1:
            return None
        loss, grads, trace, count, _ = sequence_objective(model, X, label, cfg.loss, T_prime)
        return loss, grads, trace, count, 0.0, T_prime

    history = _fit(model, train, val, cfg, per_sequence, checkpoint_dir, "teacher")
    return model, history


def train_fsp(dataset, encoder: EncoderModel | None, teacher: RecurrentModel, cfg: TrainConfig,
              max_steps: int | None = None, checkpoint_dir=None):
    """Student training against a frozen teacher's future hidden states."""
    if cfg.loss.future == "none":
        raise InvalidInputError("FSP training needs a future loss (smooth_l1 or l2)")
    if cfg.delta is None:
        raise InvalidInputError("FSP training needs a delta")
    if teacher.student:
        raise InvalidInputError("teacher must be a classification-only model")
    train, val = _split_items(dataset, encoder, max_steps)
    E = train[0][0].shape[1]
    if teacher.input_dim != E or teacher.num_classes != dataset.num_classes:
        raise InvalidInputError(
            f"teacher dims (E={teacher.input_dim}, N={teacher.num_classes}) do not match "
            f"features (E={E}, N={dataset.num_classes})"
        )
    teacher_states = [record_teacher_states(teacher, X) for X, _ in train]
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    student = RecurrentModel.initialize(E, teacher.hidden_dim, dataset.num_classes, init_rng, student=True)

    def per_sequence(idx):
        X, label = train[idx]
        T = X.shape[0]
        T_prime = truncation_point(cfg.delta, T)
        if T_prime < 1:
            return None
        shift = T - T_prime
        targets = teacher_states[idx][shift : shift + T_prime]
        loss, grads, trace, count, mean_future = sequence_objective(
            student, X, label, cfg.loss, T_prime, targets
        )
        return loss, grads, trace, count, mean_future, T_prime

    history = _fit(student, train, val, cfg, per_sequence, checkpoint_dir, "student")
    return student, history


def future_prediction_error(student: RecurrentModel, teacher: RecurrentModel, items, delta: Delta, kind="l2"):
    """Mean future-state error of ``student`` over the trained range of ``items``."""
    errs = []
    for X, _ in items:
        T = X.shape[0]
        tp = truncation_point(delta, T)
        if tp < 1:
            continue
        target = record_teacher_states(teacher, X)[T - tp : T]
        pred = forward_sequence(student, X).future[:tp]
        errs.append(float(future_pred_loss(kind, pred, target)[0].mean()))
    return float(np.mean(errs)) if errs else 0.0


# ---------------------------------------------------------------- encoder


def finetune_encoder(dataset, mode: str, cfg: TrainConfig, embed_dim: int = 64, dropout_prob: float = 0.5,
                     segment_len: int = 20, per_segment: int = 2, max_steps: int | None = None):
    """Fine-tune a frame encoder in one of the comparison regimes.

    ``none`` returns the seeded random initialization untouched.  With
    ``max_steps`` every sequence is cropped to its first ``max_steps`` steps.
    """
    if mode not in MODES:
        raise InvalidInputError(f"encoder mode must be one of {MODES}")
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    model = EncoderModel.initialize(dataset.feature_dim, embed_dim, dataset.num_classes, init_rng, dropout_prob)
    history = TrainingLog()
    if mode == "none":
        return model, history
    train = dataset.split("train")
    if max_steps is not None:
        train = [s.truncated(max_steps) for s in train]
    if not train:
        raise InvalidInputError("training split is empty")
    opt = SGD.from_config(model.params, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in rng.permutation(len(train)):
            total += finetune_step(model, train[idx], mode, opt, rng, segment_len, per_segment)
        history.add(epoch, "train", total / len(train), float("nan"))
    return model, history
