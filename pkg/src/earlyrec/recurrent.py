"""Single-cell LSTM with a classification head and optional future-state head.

Parameters live in an ordered ``dict`` of float64 arrays::

    lstm.Wx  (4H, E)   lstm.Wh (4H, H)   lstm.b (4H,)     gate order i, f, o, g
    cls.W    (N, H)    cls.b   (N,)
    fut.W    (H, H)    fut.b   (H,)      students only

The sequential recurrence runs in :mod:`earlyrec._backend` (compiled when
available); everything that batches over time is done here with numpy.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .errors import DatasetParseError, InvalidInputError
from .tensor import sigmoid, softmax

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LSTMState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


class RecurrentModel:
    def __init__(self, input_dim: int, hidden_dim: int, num_classes: int, student: bool = False, params=None):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.num_classes = int(num_classes)
        self.student = bool(student)
        if params is None:
            params = {name: np.zeros(shape) for name, shape in self.param_shapes().items()}
        self.params = {}
        shapes = self.param_shapes()
        if set(params) != set(shapes):
            raise InvalidInputError(f"parameter names {sorted(params)} != expected {sorted(shapes)}")
        for name, shape in shapes.items():
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
            self.params[name] = arr

    @property
    def kind(self) -> str:
        return "student" if self.student else "teacher"

    def param_shapes(self) -> dict:
        E, H, N = self.input_dim, self.hidden_dim, self.num_classes
        shapes = {
            "lstm.Wx": (4 * H, E),
            "lstm.Wh": (4 * H, H),
            "lstm.b": (4 * H,),
            "cls.W": (N, H),
            "cls.b": (N,),
        }
        if self.student:
            shapes["fut.W"] = (H, H)
            shapes["fut.b"] = (H,)
        return shapes

    @classmethod
    def initialize(cls, input_dim, hidden_dim, num_classes, rng: np.random.Generator, student=False):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, forget-gate bias 1.

        The future head is drawn after all shared parameters, so a teacher
        and a student built from equal seeds share LSTM and class-head values.
        """
        model = cls(input_dim, hidden_dim, num_classes, student=student)
        H = model.hidden_dim
        r_lstm = 1.0 / np.sqrt(input_dim + hidden_dim)
        r_head = 1.0 / np.sqrt(hidden_dim)
        for name, shape in model.param_shapes().items():
            r = r_lstm if name.startswith("lstm.") else r_head
            model.params[name] = rng.uniform(-r, r, size=shape)
        model.params["lstm.b"][H : 2 * H] = 1.0
        return model

    def copy(self) -> "RecurrentModel":
        return RecurrentModel(self.input_dim, self.hidden_dim, self.num_classes, self.student, self.params)

    def as_student(self, rng: np.random.Generator) -> "RecurrentModel":
        """Copy of this model's LSTM and class head plus a fresh future head."""
        params = {k: v.copy() for k, v in self.params.items() if not k.startswith("fut.")}
        r = 1.0 / np.sqrt(self.hidden_dim)
        H = self.hidden_dim
        params["fut.W"] = rng.uniform(-r, r, size=(H, H))
        params["fut.b"] = rng.uniform(-r, r, size=(H,))
        return RecurrentModel(self.input_dim, H, self.num_classes, True, params)


@dataclass
class SequenceTrace:
    """Per-step outputs of a forward pass, plus the cache BPTT needs."""

    hidden: np.ndarray  # (T, H)
    logits: np.ndarray  # (T, N)
    probs: np.ndarray  # (T, N)
    future: np.ndarray | None  # (T, H), students only
    gates: np.ndarray  # (T, 4H)
    cells: np.ndarray  # (T, H)

    @property
    def T(self) -> int:
        return self.hidden.shape[0]


def lstm_step(params: dict, x, prev: LSTMState) -> LSTMState:
    """One LSTM step. ``prev`` is left untouched."""
    Wx, Wh, b = params["lstm.Wx"], params["lstm.Wh"], params["lstm.b"]
    H = Wh.shape[1]
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (Wx.shape[1],):
        raise InvalidInputError(f"input has shape {x.shape}, expected ({Wx.shape[1]},)")
    if prev.h.shape != (H,) or prev.c.shape != (H,):
        raise InvalidInputError("previous state has the wrong hidden size")
    z = Wx @ x + Wh @ prev.h + b
    i, f, o = sigmoid(z[:H]), sigmoid(z[H : 2 * H]), sigmoid(z[2 * H : 3 * H])
    g = np.tanh(z[3 * H :])
    c = f * prev.c + i * g
    return LSTMState(o * np.tanh(c), c)


def _check_features(model: RecurrentModel, features) -> np.ndarray:
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InvalidInputError(f"features must have shape (T>=1, E), got {X.shape}")
    if X.shape[1] != model.input_dim:
        raise InvalidInputError(f"feature dim {X.shape[1]} != model input dim {model.input_dim}")
    return X


def forward_sequence(model: RecurrentModel, features) -> SequenceTrace:
    X = _check_features(model, features)
    p = model.params
    xproj = np.ascontiguousarray(X @ p["lstm.Wx"].T + p["lstm.b"])
    gates, cells, hidden = _backend.lstm_forward(xproj, np.ascontiguousarray(p["lstm.Wh"]))
    logits = hidden @ p["cls.W"].T + p["cls.b"]
    future = hidden @ p["fut.W"].T + p["fut.b"] if model.student else None
    return SequenceTrace(hidden, logits, softmax(logits), future, gates, cells)


def _pad(grad, T, width, name):
    if grad is None:
        return np.zeros((T, width))
    g = np.asarray(grad, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != width or g.shape[0] > T:
        raise InvalidInputError(f"{name} must have shape (<= {T}, {width}), got {g.shape}")
    if g.shape[0] < T:
        g = np.vstack([g, np.zeros((T - g.shape[0], width))])
    return g


def backward_sequence(model: RecurrentModel, features, dlogits, dfuture=None, trace=None) -> dict:
    """Full BPTT.

    ``dlogits`` is the loss gradient w.r.t. the class logits per step and
    ``dfuture`` w.r.t. the future-head output; both may be shorter than T
    (missing rows count as zero).  Returns a gradient per parameter name.
    """
    X = _check_features(model, features)
    T = X.shape[0]
    if trace is None:
        trace = forward_sequence(model, X)
    H, N = model.hidden_dim, model.num_classes
    dlogits = _pad(dlogits, T, N, "dlogits")
    if dfuture is not None and not model.student:
        raise InvalidInputError("future-state gradients given for a model without a future head")
    p = model.params
    h = trace.hidden
    grads = {
        "cls.W": dlogits.T @ h,
        "cls.b": dlogits.sum(axis=0),
    }
    dh = dlogits @ p["cls.W"]
    if model.student:
        dfuture = _pad(dfuture, T, H, "dfuture")
        grads["fut.W"] = dfuture.T @ h
        grads["fut.b"] = dfuture.sum(axis=0)
        dh = dh + dfuture @ p["fut.W"]
    dz = _backend.lstm_backward(trace.gates, trace.cells, np.ascontiguousarray(p["lstm.Wh"]), np.ascontiguousarray(dh))
    grads["lstm.Wx"] = dz.T @ X
    grads["lstm.Wh"] = dz[1:].T @ h[:-1]
    grads["lstm.b"] = dz.sum(axis=0)
    return {name: grads[name] for name in model.params}


def record_teacher_states(teacher: RecurrentModel, features) -> np.ndarray:
    """Hidden states h_1..h_T of a frozen teacher, shape (T, H)."""
    if teacher.student:
        raise InvalidInputError("teacher model must not carry a future head")
    return forward_sequence(teacher, features).hidden.copy()


def save_model(model: RecurrentModel, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "E": model.input_dim,
        "H": model.hidden_dim,
        "N": model.num_classes,
        "params": {name: arr.tolist() for name, arr in model.params.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> RecurrentModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: invalid checkpoint JSON ({exc.msg})", line=exc.lineno) from None
    if doc.get("version") != CHECKPOINT_VERSION or doc.get("kind") not in ("teacher", "student"):
        raise DatasetParseError(f"{path}: not a recurrent model checkpoint")
    return RecurrentModel(doc["E"], doc["H"], doc["N"], student=doc["kind"] == "student", params=doc["params"])


def param_checksum(params: dict) -> str:
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(params[name]).tobytes())
    return digest.hexdigest()
