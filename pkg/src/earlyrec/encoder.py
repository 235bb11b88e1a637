"""Frame encoder fine-tuned on sparsely sampled sub-sequences.

The encoder maps each D-dim frame through two tanh layers to an E-dim
embedding.  During fine-tuning a sub-sequence is sampled segment by segment,
the sampled embeddings are max-pooled over time (optionally after scaling
each frame by a weight that decays with its position), and the pooled
vector is classified with a softmax layer.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import DatasetParseError, InvalidInputError
from .tensor import softmax

CHECKPOINT_VERSION = 1
MODES = ("none", "single_frame", "unweighted_subvideo", "weighted_subvideo")
EPS = 1e-12


class EncoderModel:
    """Parameters: ``enc1.W (E, D)``, ``enc1.b``, ``enc2.W (E, E)``, ``enc2.b``,
    ``cls.W (N, E)``, ``cls.b``."""

    def __init__(self, input_dim: int, embed_dim: int, num_classes: int, dropout_prob: float = 0.5, params=None):
        if not 0.0 <= dropout_prob < 1.0:
            raise InvalidInputError("dropout_prob must lie in [0, 1)")
        self.input_dim = int(input_dim)
        self.embed_dim = int(embed_dim)
        self.num_classes = int(num_classes)
        self.dropout_prob = float(dropout_prob)
        shapes = self.param_shapes()
        if params is None:
            params = {k: np.zeros(s) for k, s in shapes.items()}
        if set(params) != set(shapes):
            raise InvalidInputError(f"parameter names {sorted(params)} != expected {sorted(shapes)}")
        self.params = {}
        for name, shape in shapes.items():
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
            self.params[name] = arr

    def param_shapes(self):
        D, E, N = self.input_dim, self.embed_dim, self.num_classes
        return {
            "enc1.W": (E, D),
            "enc1.b": (E,),
            "enc2.W": (E, E),
            "enc2.b": (E,),
            "cls.W": (N, E),
            "cls.b": (N,),
        }

    @classmethod
    def initialize(cls, input_dim, embed_dim, num_classes, rng: np.random.Generator, dropout_prob=0.5):
        model = cls(input_dim, embed_dim, num_classes, dropout_prob)
        for name, shape in model.param_shapes().items():
            fan_in = shape[1] if len(shape) == 2 else model.params[name.replace(".b", ".W")].shape[1]
            r = 1.0 / math.sqrt(fan_in)
            model.params[name] = rng.uniform(-r, r, size=shape)
        return model

    def copy(self):
        return EncoderModel(self.input_dim, self.embed_dim, self.num_classes, self.dropout_prob, self.params)

    def encode(self, frames) -> np.ndarray:
        """Embed a (T, D) stack of frames (or a single frame); no dropout."""
        X = np.asarray(frames, dtype=np.float64)
        if X.shape[-1] != self.input_dim:
            raise InvalidInputError(f"frame dim {X.shape[-1]} != encoder input dim {self.input_dim}")
        return _encode(self.params, X)[1]


def _encode(p, X):
    a1 = np.tanh(X @ p["enc1.W"].T + p["enc1.b"])
    a2 = np.tanh(a1 @ p["enc2.W"].T + p["enc2.b"])
    return a1, a2


def segment_sample(T: int, segment_len: int, per_segment: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted 1-based step indices; ``min(per_segment, size)`` per segment, without replacement."""
    if T < 1 or segment_len < 1 or per_segment < 1:
        raise InvalidInputError("T, segment_len and per_segment must all be >= 1")
    picks = []
    for start in range(1, T + 1, segment_len):
        stop = min(start + segment_len - 1, T)
        size = stop - start + 1
        picks.append(start + rng.choice(size, size=min(per_segment, size), replace=False))
    return np.sort(np.concatenate(picks))


def early_weight(t, T: int):
    """Step weight 1 / 0.5 / 0.25 / 0.125 by quarter of the sequence.

    Quarter boundaries are real-valued (T/4, T/2, 3T/4) and half-open on the
    right except the last, which includes T.
    """
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > T):
        raise InvalidInputError(f"step index outside [1, {T}]")
    w = np.select(
        [4 * t_arr < T, 2 * t_arr < T, 4 * t_arr < 3 * T],
        [1.0, 0.5, 0.25],
        default=0.125,
    )
    return float(w) if w.ndim == 0 else w


def weighted_max_pool(steps, features, T: int, weights_on: bool = True):
    """Coordinate-wise ``max_t w_t * f_t`` over the supplied steps.

    ``steps`` are 1-based indices (any order), ``features`` the matching
    (S, E) rows.  Returns ``(F, argmax_steps)``; ties go to the smallest step.
    """
    steps = np.asarray(steps, dtype=np.int64)
    feats = np.asarray(features, dtype=np.float64)
    if steps.size == 0 or feats.shape[0] == 0:
        raise InvalidInputError("cannot pool an empty set of frames")
    if feats.ndim != 2 or feats.shape[0] != steps.size:
        raise InvalidInputError("need one feature row per sampled step")
    order = np.argsort(steps, kind="stable")
    steps, feats = steps[order], feats[order]
    w = early_weight(steps, T) if weights_on else np.ones(steps.size)
    scaled = w[:, None] * feats
    rows = scaled.argmax(axis=0)  # first occurrence, i.e. smallest step
    cols = np.arange(feats.shape[1])
    return scaled[rows, cols], steps[rows]


def _ce(probs, label):
    return float(-np.log(np.clip(probs[label], EPS, 1.0 - EPS)))


def pooled_loss_and_grads(model: EncoderModel, frames, steps, label: int, T: int, weights_on: bool, dropout_mask=None):
    """Cross-entropy of the pooled classifier and gradients for every parameter.

    ``frames`` are the raw (S, D) inputs at the 1-based ``steps``.  With
    ``dropout_mask`` (S, E) the embeddings are multiplied by it before pooling.
    """
    p = model.params
    X = np.asarray(frames, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.int64)
    a1, a2 = _encode(p, X)
    f = a2 if dropout_mask is None else a2 * dropout_mask
    F, arg_steps = weighted_max_pool(steps, f, T, weights_on)
    logits = p["cls.W"] @ F + p["cls.b"]
    probs = softmax(logits)
    loss = _ce(probs, label)

    dlogits = probs.copy()
    dlogits[label] -= 1.0
    grads = {"cls.W": np.outer(dlogits, F), "cls.b": dlogits}
    dF = p["cls.W"].T @ dlogits
    # route each pooled coordinate back to its argmax frame, scaled by w_t
    df = np.zeros_like(f)
    row_of_step = {int(s): i for i, s in enumerate(steps)}
    rows = np.array([row_of_step[int(s)] for s in arg_steps])
    w = early_weight(arg_steps, T) if weights_on else np.ones(arg_steps.size)
    df[rows, np.arange(f.shape[1])] = w * dF
    da2 = df if dropout_mask is None else df * dropout_mask
    dz2 = da2 * (1.0 - a2 * a2)
    grads["enc2.W"] = dz2.T @ a1
    grads["enc2.b"] = dz2.sum(axis=0)
    dz1 = (dz2 @ p["enc2.W"]) * (1.0 - a1 * a1)
    grads["enc1.W"] = dz1.T @ X
    grads["enc1.b"] = dz1.sum(axis=0)
    return loss, {k: grads[k] for k in p}


def finetune_step(model: EncoderModel, seq, mode: str, optimizer, rng: np.random.Generator,
                  segment_len: int = 20, per_segment: int = 2) -> float:
    """One SGD step on one sequence; mutates ``model`` and returns the loss.

    ``optimizer`` is a :class:`earlyrec.trainer.SGD` bound to ``model.params``.
    """
    if seq.dim != model.input_dim or not 0 <= seq.label < model.num_classes:
        raise InvalidInputError("sequence does not match encoder dimensions")
    T = seq.T
    if mode == "single_frame":
        steps = np.array([int(rng.integers(1, T + 1))])
        weights_on = False
    elif mode in ("unweighted_subvideo", "weighted_subvideo"):
        steps = segment_sample(T, segment_len, per_segment, rng)
        weights_on = mode == "weighted_subvideo"
    else:
        raise InvalidInputError(f"finetune mode must be one of {MODES[1:]}, got {mode!r}")
    mask = None
    if model.dropout_prob > 0:
        keep = 1.0 - model.dropout_prob
        mask = (rng.random((steps.size, model.embed_dim)) < keep) / keep
    loss, grads = pooled_loss_and_grads(
        model, seq.features[steps - 1], steps, seq.label, T, weights_on, mask
    )
    optimizer.step(grads)
    return loss


def extract_features(model: EncoderModel | None, seq) -> np.ndarray:
    """Per-step embeddings (T, E) with dropout off; ``None`` passes raw features."""
    if model is None:
        return seq.features
    return model.encode(seq.features)


def save_encoder(model: EncoderModel, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "dims": {"D": model.input_dim, "E": model.embed_dim, "N": model.num_classes},
        "dropout_prob": model.dropout_prob,
        "params": {k: v.tolist() for k, v in model.params.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_encoder(path) -> EncoderModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: invalid encoder checkpoint ({exc.msg})", line=exc.lineno) from None
    if doc.get("version") != CHECKPOINT_VERSION or "dims" not in doc:
        raise DatasetParseError(f"{path}: not an encoder checkpoint")
    dims = doc["dims"]
    return EncoderModel(dims["D"], dims["E"], dims["N"], doc["dropout_prob"], doc["params"])
