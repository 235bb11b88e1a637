"""Central-difference gradient checking for every hand-derived gradient."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .encoder import EncoderModel, early_weight, pooled_loss_and_grads
from .losses import LossSelection, average_ce, future_pred_loss, fsp_total, linear_weighted_ce
from .recurrent import RecurrentModel
from .tensor import softmax
from .trainer import sequence_objective

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class GradCheckReport:
    per_tensor: dict
    step: float = STEP

    @property
    def max_error(self) -> float:
        return max(self.per_tensor.values()) if self.per_tensor else 0.0

    def ok(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numerical_gradient(loss_fn: Callable[[], float], params: dict, step: float = STEP) -> dict:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``params`` (perturbed in place)."""
    out = {}
    for name, theta in params.items():
        g = np.zeros_like(theta)
        flat, gflat = theta.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out[name] = g
    return out


def gradient_check(loss_and_grads: Callable[[], tuple], params: dict, step: float = STEP) -> GradCheckReport:
    """Compare analytic gradients from ``loss_and_grads()`` with central differences.

    ``loss_and_grads`` must read the current values of ``params``.  The error
    per tensor is the worst |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
    """
    _, analytic = loss_and_grads()
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    numeric = numerical_gradient(lambda: loss_and_grads()[0], params, step)
    per_tensor = {k: float(relative_error(analytic[k], numeric[k]).max()) for k in params}
    return GradCheckReport(per_tensor, step)


def recurrent_gradcheck(model: RecurrentModel, X, label: int, sel: LossSelection, T_prime=None, targets=None,
                        step: float = STEP) -> GradCheckReport:
    def fn():
        loss, grads, *_ = sequence_objective(model, X, label, sel, T_prime, targets)
        return loss, grads

    return gradient_check(fn, model.params, step)


def encoder_gradcheck(model: EncoderModel, frames, steps, label: int, T: int, weights_on=True,
                      step: float = STEP) -> GradCheckReport:
    def fn():
        return pooled_loss_and_grads(model, frames, steps, label, T, weights_on)

    return gradient_check(fn, model.params, step)


# ---------------------------------------------------------------- random suite


def _min_gap(values: np.ndarray) -> float:
    """Smallest gap between the top two entries of each column."""
    if values.shape[0] < 2:
        return np.inf
    top2 = -np.sort(-values, axis=0)[:2]
    return float((top2[0] - top2[1]).min())


def _encoder_instance(rng, weights_on):
    # redraw until no pooled coordinate is within 1e-3 of a tie
    while True:
        D, E, N = rng.integers(2, 5), rng.integers(2, 5), rng.integers(2, 4)
        model = EncoderModel.initialize(D, E, N, rng, dropout_prob=0.0)
        T = int(rng.integers(4, 13))
        steps = np.sort(rng.choice(np.arange(1, T + 1), size=int(rng.integers(1, min(T, 6) + 1)), replace=False))
        frames = rng.standard_normal((steps.size, D))
        w = early_weight(steps, T) if weights_on else np.ones(steps.size)
        if _min_gap(w[:, None] * model.encode(frames)) > 1e-3:
            return model, frames, steps, int(rng.integers(N)), T


def _conditioned(grads: dict, floor: float = 1e-6) -> bool:
    """No gradient entry is nonzero yet small enough for difference roundoff to dominate."""
    return all(np.all((g == 0) | (np.abs(g) >= floor)) for g in grads.values())


def _recurrent_instance(rng, student, selections):
    while True:
        T, H, E, N = (int(rng.integers(lo, hi + 1)) for lo, hi in ((1, 5), (1, 4), (1, 4), (2, 4)))
        model = RecurrentModel.initialize(E, H, N, rng, student=student)
        for v in model.params.values():
            v += rng.normal(0.0, 0.3, size=v.shape)
        X = rng.standard_normal((T, E))
        T_prime = int(rng.integers(1, T + 1))
        label = int(rng.integers(N))
        targets = rng.uniform(-1.5, 1.5, size=(T_prime, H)) if student else None
        if all(_conditioned(sequence_objective(model, X, label, sel, T_prime, targets)[1]) for sel in selections):
            return model, X, label, T_prime, targets


def gradient_suite(instances: int = 20, seed: int = 0) -> dict:
    """Worst relative error per gradient family over ``instances`` random cases each."""
    rng = np.random.default_rng(seed)
    worst: dict = {}

    def record(name, report):
        worst[name] = max(worst.get(name, 0.0), report.max_error)

    for _ in range(instances):
        for weights_on, name in ((True, "encoder_weighted_pool"), (False, "encoder_unweighted_pool")):
            model, frames, steps, label, T = _encoder_instance(rng, weights_on)
            record(name, encoder_gradcheck(model, frames, steps, label, T, weights_on))

        teacher_sels = [LossSelection(cls) for cls in ("average", "linear_weighted")]
        model, X, label, T_prime, _ = _recurrent_instance(rng, False, teacher_sels)
        for sel in teacher_sels:
            record(f"lstm_teacher_{sel.classification}", recurrent_gradcheck(model, X, label, sel, T_prime))

        lam = float(rng.choice([1.0, 10.0, 100.0]))
        student_sels = [LossSelection("linear_weighted", fut, lam) for fut in ("smooth_l1", "l2")]
        model, X, label, T_prime, targets = _recurrent_instance(rng, True, student_sels)
        for sel in student_sels:
            record(f"lstm_student_fsp_{sel.future}", recurrent_gradcheck(model, X, label, sel, T_prime, targets))

        # losses alone, w.r.t. logits or predictions
        T, N = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        logits = {"z": rng.normal(0.0, 2.0, size=(T, N))}
        label = int(rng.integers(N))
        T_prime = int(rng.integers(1, T + 1))
        T_full = T + int(rng.integers(0, 4))
        record("loss_average_ce", gradient_check(
            lambda: (lambda r: (r[0], {"z": r[1]}))(average_ce(softmax(logits["z"]), label, T_prime)), logits))
        record("loss_linear_weighted_ce", gradient_check(
            lambda: (lambda r: (r[0], {"z": r[1]}))(
                linear_weighted_ce(softmax(logits["z"]), label, T_prime, T_full)), logits))
        H = int(rng.integers(1, 5))
        pred = {"h": rng.normal(0.0, 1.5, size=(T, H))}
        target = rng.normal(0.0, 1.5, size=(T, H))
        # keep smooth-L1 residuals away from the |x| = 1 kink
        close = np.abs(np.abs(pred["h"] - target) - 1.0) < 1e-3
        pred["h"][close] += 0.01
        for kind in ("smooth_l1", "l2"):
            record(f"loss_{kind}", gradient_check(
                lambda: (lambda v, g: (float(v.sum()), {"h": g}))(*future_pred_loss(kind, pred["h"], target)), pred))
        lam = float(rng.choice([0.0, 10.0, 100.0]))
        sel = LossSelection("average", "smooth_l1", lam)

        def composite():
            cls_loss, dlog = average_ce(softmax(logits["z"]), label, T_prime)
            loss, dlog, dfut, _ = fsp_total(sel, cls_loss, dlog, pred["h"], target, T_prime)
            return loss, {"z": dlog, "h": dfut}

        record("loss_fsp_total", gradient_check(composite, {"z": logits["z"], "h": pred["h"]}))
    return worst
