"""Acceptance criteria, one PASS/FAIL line each (printed in the pytest terminal summary).

Run alone with ``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""
import json
import math
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from earlyrec.cli import main as cli_main
from earlyrec.config import generator_spec, load_config, train_config
from earlyrec.data import PREFIX_PHASE, Dataset, FrameSequence, generate_dataset, load_dataset, save_dataset
from earlyrec.encoder import early_weight, extract_features, load_encoder, save_encoder, weighted_max_pool
from earlyrec.evaluator import default_checkpoints, evaluate
from earlyrec.gradcheck import gradient_suite
from earlyrec.losses import LossSelection, classification_loss, false_positive_weights, fsp_total, future_pred_loss, linear_weighted_ce
from earlyrec.recurrent import forward_sequence, load_model, save_model
from earlyrec.tensor import softmax
from earlyrec.trainer import Delta, TrainConfig, finetune_encoder, train_fsp, train_teacher

RESULTS = {}  # test name -> (criterion label, detail); printed by the summary hook in conftest
TOL_5A = 0.03


def record(label, passed, detail=""):
    RESULTS[sys._getframe(1).f_code.co_name] = (label, detail)
    return bool(passed)


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_suite():
    start = time.process_time()
    worst = gradient_suite(instances=20, seed=0)
    elapsed = time.process_time() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    detail = f"worst {max(worst.values()):.2e} over {len(worst)} families x 20 instances, {elapsed:.1f}s CPU"
    assert record("1 gradient suite < 1e-4, < 60 s", not bad and elapsed < 60, detail), (bad, elapsed)


# ---------------------------------------------------------------- 2


def _weight_table(T):
    def w(t):
        q = Fraction(t, T)
        return 1.0 if q < Fraction(1, 4) else 0.5 if q < Fraction(1, 2) else 0.25 if q < Fraction(3, 4) else 0.125

    return [w(t) for t in range(1, T + 1)]


def test_criterion_2_pooling_conformance():
    tables_ok = all([early_weight(t, T) for t in range(1, T + 1)] == _weight_table(T) for T in (8, 100, 101))
    tables_ok &= [early_weight(t, 8) for t in range(1, 9)] == [1, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125, 0.125]
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(1000):
        T = int(rng.integers(1, 60))
        steps = rng.choice(np.arange(1, T + 1), size=int(rng.integers(1, T + 1)), replace=False)
        feats = rng.normal(size=(steps.size, int(rng.integers(1, 6))))
        weights_on = bool(i % 2)
        F, arg = weighted_max_pool(steps, feats, T, weights_on)
        table = _weight_table(T)
        for j in range(feats.shape[1]):
            cands = sorted(((table[t - 1] if weights_on else 1.0) * feats[r, j], -t) for r, t in enumerate(steps))
            best, neg_t = max(cands)
            mismatches += F[j] != best or arg[j] != -neg_t
    detail = f"tables T in (8, 100, 101) {'exact' if tables_ok else 'WRONG'}; {mismatches} pool mismatches / 1000"
    assert record("2 weight table + max-pool oracle", tables_ok and mismatches == 0, detail)


# ---------------------------------------------------------------- 3


def test_criterion_3_loss_identities():
    rng = np.random.default_rng(3)
    bitwise = True
    for _ in range(100):
        T, N, H = int(rng.integers(1, 9)), int(rng.integers(2, 6)), int(rng.integers(1, 5))
        P = softmax(rng.normal(0, 2, size=(T, N)))
        y, Tp = int(rng.integers(N)), int(rng.integers(1, T + 1))
        for cls in ("average", "linear_weighted"):
            c_loss, c_grad = classification_loss(cls, P, y, Tp, T)
            for fut in ("smooth_l1", "l2"):
                loss, dlog, dfut, _ = fsp_total(LossSelection(cls, fut, 0.0), c_loss, c_grad,
                                                rng.normal(size=(T, H)), rng.normal(size=(Tp, H)), Tp)
                bitwise &= loss == c_loss and np.array_equal(dlog, c_grad) and not dfut.any()
    coef_ok = True
    for T in (1, 7, 10, 101):
        w = false_positive_weights(T, T)
        coef_ok &= all(w[t - 1] == t / T for t in range(1, T + 1)) and w[-1] == 1.0
        # recover the coefficient from the loss itself, one step at a time
        P = np.tile([0.6, 0.3, 0.1], (T, 1))
        for t in range(1, T + 1):
            cum = linear_weighted_ce(P, 0, t, T)[0] * t
            prev = linear_weighted_ce(P, 0, t - 1, T)[0] * (t - 1) if t > 1 else 0.0
            coef = (cum - prev + math.log(0.6)) / -(math.log(0.7) + math.log(0.9))
            coef_ok &= abs(coef - t / T) < 1e-12
    smooth = [float(future_pred_loss("smooth_l1", [x], [0.0])[0][()]) for x in (0.5, 1.0, 2.0, -0.5, -1.0, -2.0)]
    smooth_ok = smooth == [0.125, 0.5, 1.5, 0.125, 0.5, 1.5]
    detail = f"lambda=0 bitwise {bitwise}; t/T coefficient {coef_ok}; smooth-L1 {smooth[:3]}"
    assert record("3 loss identities", bitwise and coef_ok and smooth_ok, detail)


# ---------------------------------------------------------------- 4


def test_criterion_4_truncation_conformance():
    rng = np.random.default_rng(4)
    lengths = [1, 2, 3, 4, 5] + rng.integers(6, 80, size=25).tolist()
    seqs = [FrameSequence(i % 2, rng.normal(size=(T, 3))) for i, T in enumerate(lengths)]
    d = Dataset(seqs + [FrameSequence(0, np.zeros((4, 3)))], ["train"] * len(seqs) + ["val"], num_classes=2)
    teacher, _ = train_teacher(d, None, TrainConfig(epochs=1), hidden_dim=3)
    deltas = [Delta.fraction(p) for p in (0.05, 0.2, 0.5, 0.75, 0.99)] + \
             [Delta.fixed(int(k)) for k in (1, 3, 10, 40, 100)]
    checked = skipped = wrong = 0
    for delta in deltas:
        cfg = TrainConfig(epochs=1, loss=LossSelection("average", "smooth_l1", 10.0), delta=delta)
        _, log = train_fsp(d, None, teacher, cfg)
        for _, _, T, _, count in log.step_counts:
            if delta.kind == "fraction":
                expected = max(math.floor((1 - Fraction(str(delta.value))) * T), 0)
            else:
                expected = max(T - int(delta.value), 0)
            wrong += count != expected
            skipped += expected == 0
            checked += 1
    detail = f"{checked} (T, delta) cells, {skipped} skip cases, {wrong} mismatches"
    assert record("4 truncation step counts", wrong == 0 and skipped > 0 and checked == 300, detail)


# ---------------------------------------------------------------- 5 and 7 share the pinned run


@pytest.fixture(scope="module")
def pinned():
    start = time.process_time()
    cfg = load_config(None, seed=42)
    spec = generator_spec(cfg)
    dataset = generate_dataset(spec, [10] * spec.num_classes)
    enc_cfg = train_config(cfg, "encoder")
    e = cfg["encoder"]
    encoders = {
        mode: finetune_encoder(dataset, mode, enc_cfg, e["embed_dim"], e["dropout_prob"],
                               e["segment_len"], e["per_segment"])[0]
        for mode in ("weighted_subvideo", "unweighted_subvideo")
    }
    teacher_cfg = train_config(cfg, "teacher")
    teachers = {mode: train_teacher(dataset, enc, teacher_cfg, cfg["teacher"]["hidden_dim"])[0]
                for mode, enc in encoders.items()}
    student_cfg = train_config(cfg, "student")
    assert student_cfg.delta == Delta.fraction(0.2)
    assert (student_cfg.loss.future, student_cfg.loss.lam) == ("smooth_l1", 10.0)
    w_enc = encoders["weighted_subvideo"]
    student, _ = train_fsp(dataset, w_enc, teachers["weighted_subvideo"], student_cfg)
    test = dataset.split("test")
    checkpoints = default_checkpoints([s.T for s in test])
    reports = {
        "teacher": evaluate(teachers["weighted_subvideo"], w_enc, test, checkpoints),
        "unweighted": evaluate(teachers["unweighted_subvideo"], encoders["unweighted_subvideo"], test, checkpoints),
        "student": evaluate(student, w_enc, test, checkpoints),
    }
    elapsed = time.process_time() - start
    return dict(dataset=dataset, test=test, checkpoints=checkpoints, reports=reports, encoders=encoders,
                teachers=teachers, student=student, elapsed=elapsed)


def _curve(report):
    return "[" + ", ".join(f"{a:.3f}" for a in report.accuracy) + "]"


@pytest.mark.slow
def test_criterion_5a_monotone_teacher_curve(pinned):
    acc = pinned["reports"]["teacher"].accuracy
    drops = [acc[i] - acc[i + 1] for i in range(len(acc) - 1)]
    worst = max(drops)
    detail = f"teacher {_curve(pinned['reports']['teacher'])} at steps {pinned['checkpoints']}, worst drop {worst:.3f}"
    assert record("5a teacher curve non-decreasing within 3 pts", worst <= TOL_5A + 1e-12, detail)


@pytest.mark.slow
def test_criterion_5b_prefix_checkpoint_near_chance(pinned):
    c1 = pinned["checkpoints"][0]
    shortest_prefix = min(int((s.phases == PREFIX_PHASE).sum()) for s in pinned["test"])
    acc = pinned["reports"]["teacher"].accuracy[0]
    limit = 1 / pinned["dataset"].num_classes + 0.10
    inside = c1 <= shortest_prefix
    detail = f"checkpoint {c1} {'inside' if inside else 'outside'} every prefix (shortest {shortest_prefix}); " \
             f"accuracy {acc:.3f} vs limit {limit:.3f}"
    assert record("5b first checkpoint <= chance + 10 pts", (not inside) or acc <= limit + 1e-12, detail)


@pytest.mark.slow
def test_criterion_5c_student_catches_teacher_late(pinned):
    t, s = pinned["reports"]["teacher"].accuracy, pinned["reports"]["student"].accuracy
    ok = s[-1] >= t[-1] and s[-2] >= t[-2]
    detail = f"student {_curve(pinned['reports']['student'])} vs teacher {_curve(pinned['reports']['teacher'])}"
    assert record("5c FSP student >= teacher at last two checkpoints", ok, detail)


@pytest.mark.slow
def test_criterion_5d_weighted_beats_unweighted_early(pinned):
    w, u = pinned["reports"]["teacher"].accuracy, pinned["reports"]["unweighted"].accuracy
    detail = f"weighted {_curve(pinned['reports']['teacher'])} vs unweighted {_curve(pinned['reports']['unweighted'])}"
    assert record("5d weighted >= unweighted at first checkpoint", w[0] >= u[0], detail)


@pytest.mark.slow
def test_criterion_5_budget(pinned):
    detail = f"pinned pipeline {pinned['elapsed']:.0f}s CPU"
    assert record("5 pinned run within 10 min CPU", pinned["elapsed"] <= 600, detail)


# ---------------------------------------------------------------- 6


def test_criterion_6_determinism_and_round_trips(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "data": {"per_class_counts": [4] * 9},
        "encoder": {"train": {"epochs": 3}},
        "teacher": {"train": {"epochs": 4}},
        "student": {"train": {"epochs": 3}},
    }))
    for run in ("a", "b"):
        for cmd in ("generate", "finetune-encoder", "train-teacher", "train-fsp", "evaluate"):
            assert cli_main([cmd, "--config", str(cfg_path), "--out", str(tmp_path / run)]) == 0
    compared = ["dataset.ndjson", "encoder_weighted_subvideo.json", "teacher.json", "student.json",
                "teacher_log.csv", "student_log.csv", "eval_student/report.json", "eval_student/accuracy_curve.csv"]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in compared)

    a = tmp_path / "a"
    dataset = load_dataset(a / "dataset.ndjson")
    save_dataset(dataset, tmp_path / "copy.ndjson")
    trips = (tmp_path / "copy.ndjson").read_bytes() == (a / "dataset.ndjson").read_bytes()
    trips &= load_dataset(tmp_path / "copy.ndjson") == dataset
    for name, load, save in (("teacher.json", load_model, save_model), ("student.json", load_model, save_model),
                             ("encoder_weighted_subvideo.json", load_encoder, save_encoder)):
        model = load(a / name)
        save(model, tmp_path / name)
        trips &= (tmp_path / name).read_bytes() == (a / name).read_bytes()
        trips &= all(load(tmp_path / name).params[k].tobytes() == v.tobytes() for k, v in model.params.items())
    detail = f"{len(compared)} artifacts byte-identical across runs: {same}; round-trips bit-exact: {trips}"
    assert record("6 determinism + round-trips", same and trips, detail)


# ---------------------------------------------------------------- 7


@pytest.mark.slow
def test_criterion_7_oracle_equivalence(pinned):
    test, encoder = pinned["test"], pinned["encoders"]["weighted_subvideo"]
    mismatches = total = 0
    for name, model in (("teacher", pinned["teachers"]["weighted_subvideo"]), ("student", pinned["student"])):
        report = pinned["reports"][name]
        traces = [forward_sequence(model, extract_features(encoder, s)).probs for s in test]
        for c, acc in zip(report.checkpoints, report.accuracy):
            hits = 0
            for P, s in zip(traces, test):
                row = P[c - 1].tolist()
                hits += row.index(max(row)) == s.label
            mismatches += acc != hits / len(test)
            total += 1
    detail = f"{total} checkpoint accuracies recounted on {len(test)} test sequences, {mismatches} mismatches"
    assert record("7 evaluator == brute-force recount", mismatches == 0, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
