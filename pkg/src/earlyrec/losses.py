"""Early-recognition losses with analytic gradients.

Classification losses take a ``(T, N)`` stack of per-step probabilities and
return ``(loss, dlogits)`` where ``dlogits`` is the gradient w.r.t. the
pre-softmax logits, shape ``(T, N)``, zero beyond the trained range.
All losses are negated log-likelihoods (minimized).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

EPS = 1e-12

CLASSIFICATION_KINDS = ("average", "linear_weighted")
FUTURE_KINDS = ("none", "smooth_l1", "l2")


@dataclass(frozen=True)
class LossSelection:
    classification: str = "average"
    future: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.classification not in CLASSIFICATION_KINDS:
            raise InvalidInputError(f"classification loss must be one of {CLASSIFICATION_KINDS}")
        if self.future not in FUTURE_KINDS:
            raise InvalidInputError(f"future loss must be one of {FUTURE_KINDS}")
        if not self.lam >= 0:
            raise InvalidInputError("lambda must be >= 0")


def _check_probs(probs, label, T_prime):
    P = np.asarray(probs, dtype=np.float64)
    if P.ndim != 2:
        raise InvalidInputError(f"probabilities must be (T, N), got shape {P.shape}")
    T, N = P.shape
    if not 0 <= label < N:
        raise InvalidInputError(f"label {label} outside [0, {N})")
    if T_prime is None:
        T_prime = T
    if not 1 <= T_prime <= T:
        raise InvalidInputError(f"trained range T'={T_prime} outside [1, {T}]")
    if np.any(~np.isfinite(P)) or np.any(P < 0) or np.any(P > 1):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    return P, T, N, int(T_prime)


def average_ce(probs, label: int, T_prime: int | None = None):
    """-(1/T') sum_{t<=T'} log p_t[label]."""
    P, T, N, Tp = _check_probs(probs, label, T_prime)
    p = np.clip(P[:Tp], EPS, 1.0 - EPS)
    loss = -np.log(p[:, label]).sum() / Tp
    grad = np.zeros((T, N))
    grad[:Tp] = P[:Tp]
    grad[:Tp, label] -= 1.0
    grad /= Tp
    return float(loss), grad


def false_positive_weights(T_prime: int, T: int) -> np.ndarray:
    """Coefficient t/T of the false-positive term for t = 1..T'."""
    return np.arange(1, T_prime + 1) / T


def linear_weighted_ce(probs, label: int, T_prime: int | None = None, T: int | None = None, fp_scale: float = 1.0):
    """Linear weighted average loss.

    -(1/T') sum_{t<=T'} [log p_t[y] + (t/T) sum_{k != y} log(1 - p_t[k])]

    ``T`` is the full sequence length (defaults to the trace length) and
    ``fp_scale`` multiplies the false-positive coefficient; ``fp_scale=0``
    recovers :func:`average_ce`.
    """
    P, T_trace, N, Tp = _check_probs(probs, label, T_prime)
    T = T_trace if T is None else int(T)
    if T < Tp:
        raise InvalidInputError(f"full length T={T} shorter than trained range T'={Tp}")
    p = np.clip(P[:Tp], EPS, 1.0 - EPS)
    w = fp_scale * false_positive_weights(Tp, T)
    neg = np.ones(N, dtype=bool)
    neg[label] = False
    per_step = np.log(p[:, label]) + w * np.log1p(-p[:, neg]).sum(axis=1)
    loss = -per_step.sum() / Tp

    # d/dz of -log(1 - p_k) is a_k * (e_k - p) with a_k = p_k / (1 - p_k)
    Pt = P[:Tp]
    a = np.zeros_like(Pt)
    a[:, neg] = p[:, neg] / (1.0 - p[:, neg])
    fp_grad = a - Pt * a.sum(axis=1, keepdims=True)
    grad = np.zeros((T_trace, N))
    grad[:Tp] = Pt + w[:, None] * fp_grad
    grad[:Tp, label] -= 1.0
    grad /= Tp
    return float(loss), grad


def classification_loss(kind: str, probs, label: int, T_prime: int | None = None, T: int | None = None):
    if kind == "average":
        return average_ce(probs, label, T_prime)
    if kind == "linear_weighted":
        return linear_weighted_ce(probs, label, T_prime, T)
    raise InvalidInputError(f"unknown classification loss {kind!r}")


def future_pred_loss(kind: str, predicted, target):
    """Mean-over-coordinates regression loss and its gradient w.r.t. ``predicted``.

    The target is a constant; no gradient flows into it.
    """
    pred = np.asarray(predicted, dtype=np.float64)
    targ = np.asarray(target, dtype=np.float64)
    if pred.shape != targ.shape or pred.size == 0:
        raise InvalidInputError(f"prediction shape {pred.shape} != target shape {targ.shape}")
    x = pred - targ
    n = x.shape[-1]
    if kind == "l2":
        return (x * x).mean(axis=-1), 2.0 * x / n
    if kind == "smooth_l1":
        ax = np.abs(x)
        quad = ax < 1.0
        val = np.where(quad, 0.5 * x * x, ax - 0.5)
        return val.mean(axis=-1), np.where(quad, x, np.sign(x)) / n
    raise InvalidInputError(f"unknown future loss {kind!r}")


def fsp_total(sel: LossSelection, cls_loss: float, cls_grad, future, targets, T_prime: int):
    """Composite loss ``L_cls + lam * mean_{t<=T'} future_pred_loss(h*_t, target_t)``.

    ``future`` is the student's (T, H) future-head output; ``targets`` holds
    at least T' rows, row t-1 being the teacher state aligned with step t.
    Returns ``(loss, dlogits, dfuture, mean_future_loss)``.
    """
    T, H = np.shape(future)
    targets = np.asarray(targets, dtype=np.float64)
    if not 1 <= T_prime <= T:
        raise InvalidInputError(f"trained range T'={T_prime} outside [1, {T}]")
    if targets.ndim != 2 or targets.shape[0] < T_prime or targets.shape[1] != H:
        raise InvalidInputError(f"future targets must cover steps 1..{T_prime}; got shape {targets.shape}")
    dfuture = np.zeros((T, H))
    if sel.future == "none":
        mean_future = 0.0
    else:
        per_step, g = future_pred_loss(sel.future, np.asarray(future)[:T_prime], targets[:T_prime])
        mean_future = float(per_step.sum() / T_prime)
        dfuture[:T_prime] = sel.lam * g / T_prime
    loss = cls_loss + sel.lam * mean_future
    return float(loss), cls_grad, dfuture, mean_future
