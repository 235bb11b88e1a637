"""Command-line entry point: ``earlyrec <subcommand> --config <path> [--seed N] [--out DIR] [--override k=v ...]``.

Every subcommand writes under the run directory and records a manifest in
``<out>/manifests/<subcommand>.json``.  Exit codes: 0 success, 1 validation
error, 2 runtime or numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import config_hash, generator_spec, load_config, train_config
from .data import generate_dataset, load_dataset, save_dataset
from .encoder import MODES, load_encoder, save_encoder
from .errors import (
    ConfigError,
    DatasetFormatError,
    DatasetParseError,
    EarlyRecError,
    InvalidInputError,
    MissingArtifactError,
)
from .evaluator import default_checkpoints, evaluate, write_report
from .gradcheck import TOLERANCE, gradient_suite
from .losses import LossSelection
from .recurrent import load_model, save_model
from .trainer import Delta, finetune_encoder, train_fsp, train_teacher

log = logging.getLogger("earlyrec")

VALIDATION_ERRORS = (ConfigError, InvalidInputError, DatasetParseError, DatasetFormatError, MissingArtifactError)


class NumericalFailure(EarlyRecError):
    """A run finished but its numerical checks did not hold."""


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Resolved paths and bookkeeping for one subcommand invocation."""

    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["out"])
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    # canonical artifact locations
    @property
    def dataset_path(self) -> Path:
        return Path(self.cfg["data"]["path"]) if self.cfg["data"]["path"] else self.out / "dataset.ndjson"

    def encoder_path(self, mode=None) -> Path:
        return self.out / f"encoder_{mode or self.cfg['encoder']['mode']}.json"

    @property
    def teacher_path(self) -> Path:
        return self.out / "teacher.json"

    @property
    def student_path(self) -> Path:
        return self.out / "student.json"

    def require(self, path: Path, what: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(f"{what} required: {path} not found")
        self.inputs.append(path)
        return path

    def produced(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def write_manifest(self) -> Path:
        doc = {
            "command": self.command,
            "config_hash": config_hash(self.cfg),
            "config": self.cfg,
            "seed": self.cfg["seed"],
            "inputs": {str(p): sha256_file(p) for p in self.inputs},
            "outputs": {str(p): sha256_file(p) for p in self.outputs},
            "backend": BACKEND,
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        path = self.out / "manifests" / f"{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------- stages


def _load_data(run: Run):
    return load_dataset(run.require(run.dataset_path, "dataset"))


def cmd_generate(run: Run):
    """Synthesize the dataset file."""
    spec = generator_spec(run.cfg)
    counts = run.cfg["data"]["per_class_counts"]
    dataset = generate_dataset(spec, counts)
    path = run.out / "dataset.ndjson"
    save_dataset(dataset, path)
    run.produced(path)
    print(f"wrote {len(dataset.sequences)} sequences to {path}")


def _finetune(run: Run, dataset, mode: str):
    enc = run.cfg["encoder"]
    model, history = finetune_encoder(
        dataset, mode, train_config(run.cfg, "encoder"), enc["embed_dim"], enc["dropout_prob"],
        enc["segment_len"], enc["per_segment"], enc["max_steps"],
    )
    path = run.produced(run.encoder_path(mode))
    save_encoder(model, path)
    history.write_csv(run.produced(run.out / f"encoder_{mode}_log.csv"))
    return model


def cmd_finetune_encoder(run: Run):
    """Fine-tune the frame encoder and save it."""
    mode = run.cfg["encoder"]["mode"]
    if mode not in MODES:
        raise ConfigError(f"encoder.mode must be one of {MODES}, got {mode!r}")
    _finetune(run, _load_data(run), mode)
    print(f"wrote {run.encoder_path(mode)}")


def _load_encoder(run: Run):
    return load_encoder(run.require(run.encoder_path(), "encoder checkpoint"))


def _write_log(run: Run, history, name: str):
    path = run.out / f"{name}_log.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    history.write_csv(run.produced(path))


def _teacher(run: Run, dataset, encoder, name="teacher", max_steps=None):
    model, history = train_teacher(
        dataset, encoder, train_config(run.cfg, "teacher"), run.cfg["teacher"]["hidden_dim"], max_steps,
        checkpoint_dir=run.out,
    )
    _write_log(run, history, name)
    return model


def cmd_train_teacher(run: Run):
    """Train the full-observation LSTM teacher."""
    dataset = _load_data(run)
    model = _teacher(run, dataset, _load_encoder(run))
    save_model(model, run.produced(run.teacher_path))
    print(f"wrote {run.teacher_path}")


def _load_teacher(run: Run):
    if not run.teacher_path.exists():
        raise MissingArtifactError(f"teacher checkpoint required: {run.teacher_path} not found (run train-teacher first)")
    return load_model(run.require(run.teacher_path, "teacher checkpoint"))


def _student(run: Run, dataset, encoder, teacher, cfg, name="student"):
    model, history = train_fsp(dataset, encoder, teacher, cfg, checkpoint_dir=run.out)
    _write_log(run, history, name)
    return model


def cmd_train_fsp(run: Run):
    """Train the student with future-state prediction against the frozen teacher."""
    teacher = _load_teacher(run)
    dataset = _load_data(run)
    model = _student(run, dataset, _load_encoder(run), teacher, train_config(run.cfg, "student"))
    save_model(model, run.produced(run.student_path))
    print(f"wrote {run.student_path}")


def _test_split(run: Run, dataset):
    split = run.cfg["evaluate"]["split"]
    if split not in ("train", "val", "test"):
        raise ConfigError(f"evaluate.split must be train, val or test, got {split!r}")
    return dataset.split(split)


def _report(run: Run, model, encoder, sequences, directory: Path, checkpoints=None):
    if checkpoints is None:
        checkpoints = run.cfg["evaluate"]["checkpoints"]
    report = evaluate(model, encoder, sequences, checkpoints, model.num_classes)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = directory / "accuracy_curve.csv", directory / "report.json"
    write_report(report, csv_path, json_path)
    run.produced(csv_path)
    run.produced(json_path)
    return report


def cmd_evaluate(run: Run):
    """Score a model at the checkpoint grid and write the accuracy curve."""
    which = run.cfg["evaluate"]["model"]
    paths = {"teacher": run.teacher_path, "student": run.student_path}
    if which not in paths:
        raise ConfigError(f"evaluate.model must be 'teacher' or 'student', got {which!r}")
    model = load_model(run.require(paths[which], f"{which} checkpoint"))
    dataset = _load_data(run)
    report = _report(run, model, _load_encoder(run), _test_split(run, dataset), run.out / f"eval_{which}")
    for c, a in zip(report.checkpoints, report.accuracy):
        print(f"step {c:4d}  accuracy {a:.3f}")


def cmd_gradcheck(run: Run):
    """Finite-difference check of every gradient family."""
    gc = run.cfg["gradcheck"]
    tol = float(gc.get("tolerance", TOLERANCE))
    worst = gradient_suite(int(gc["instances"]), seed=run.cfg["seed"])
    path = run.produced(run.out / "gradcheck.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"tolerance": tol, "max_relative_error": worst}, indent=2, sort_keys=True) + "\n")
    bad = []
    for name, err in worst.items():
        ok = err < tol
        print(f"{'PASS' if ok else 'FAIL'}  {name:32s} {err:.3e}")
        if not ok:
            bad.append(name)
    if bad:
        raise NumericalFailure(f"gradient check above {tol:g} for: {', '.join(bad)}")


def _summary_row(cell: dict, report) -> dict:
    row = dict(cell)
    for c, a in zip(report.checkpoints, report.accuracy):
        row[f"acc@{c}"] = a
    row["full_video"] = report.full_video["overall"]
    return row


def _write_summary(path: Path, rows: list):
    fields = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def cmd_ablate(run: Run):
    """Delta x lambda x future-loss sweep for the student, plus truncated-training teachers."""
    ab = run.cfg["ablate"]
    dataset = _load_data(run)
    encoder = _load_encoder(run)
    teacher = _load_teacher(run)
    test = _test_split(run, dataset)
    # one shared grid so every cell is comparable
    checkpoints = run.cfg["evaluate"]["checkpoints"] or default_checkpoints([s.T for s in test])
    base = train_config(run.cfg, "student")
    root = run.out / "ablate"
    rows = [_summary_row({"cell": "teacher", "delta": "", "lambda": "", "future_loss": "", "max_steps": ""},
                         _report(run, teacher, encoder, test, root / "teacher", checkpoints))]
    try:
        deltas = [Delta(**d) for d in ab["deltas"]]
        grid = list(itertools.product(deltas, [float(x) for x in ab["lambdas"]], list(ab["future_losses"])))
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"ablate: {exc}") from None
    for delta, lam, fut in grid:
        name = f"{delta.label()}_lam{lam:g}_{fut}"
        try:
            cfg = base.replace(delta=delta, loss=LossSelection(base.loss.classification, fut, lam))
        except InvalidInputError as exc:
            raise ConfigError(f"ablate cell {name}: {exc}") from None
        log.info("ablate cell %s", name)
        student = _student(run, dataset, encoder, teacher, cfg, name=f"ablate/{name}/student")
        report = _report(run, student, encoder, test, root / name, checkpoints)
        rows.append(_summary_row(
            {"cell": name, "delta": delta.label(), "lambda": lam, "future_loss": fut, "max_steps": ""}, report))
    for steps in ab["truncations"]:
        name = f"truncated{int(steps)}"
        log.info("ablate cell %s", name)
        model = _teacher(run, dataset, encoder, name=f"ablate/{name}/teacher", max_steps=int(steps))
        report = _report(run, model, encoder, test, root / name, checkpoints)
        rows.append(_summary_row(
            {"cell": name, "delta": "", "lambda": "", "future_loss": "", "max_steps": int(steps)}, report))
    summary = run.produced(root / "summary.csv")
    _write_summary(summary, rows)
    print(f"wrote {summary} ({len(rows)} rows)")


def cmd_plot(run: Run):
    """Render every accuracy_curve.csv under the run directory into one figure."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("plot needs matplotlib (pip install 'earlyrec[plot]')") from None
    curves = sorted(run.out.rglob("accuracy_curve.csv"))
    if not curves:
        raise MissingArtifactError(f"no accuracy_curve.csv under {run.out}; run evaluate or ablate first")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in curves:
        run.inputs.append(path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        ax.plot([int(r["checkpoint"]) for r in rows], [float(r["accuracy"]) for r in rows], marker="o",
                label=str(path.parent.relative_to(run.out)))
    ax.set_xlabel("observed steps")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    out = run.produced(run.out / "accuracy_curves.png")
    fig.savefig(out, dpi=120, bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {out}")


def cmd_pipeline(run: Run):
    """generate, fine-tune, teacher, student and both evaluations in one go."""
    cmd_generate(run)
    dataset = load_dataset(run.dataset_path)
    encoder = _finetune(run, dataset, run.cfg["encoder"]["mode"])
    teacher = _teacher(run, dataset, encoder)
    save_model(teacher, run.produced(run.teacher_path))
    student = _student(run, dataset, encoder, teacher, train_config(run.cfg, "student"))
    save_model(student, run.produced(run.student_path))
    test = _test_split(run, dataset)
    for name, model in (("teacher", teacher), ("student", student)):
        report = _report(run, model, encoder, test, run.out / f"eval_{name}")
        print(name, " ".join(f"{a:.3f}" for a in report.accuracy))


COMMANDS = {
    "generate": cmd_generate,
    "finetune-encoder": cmd_finetune_encoder,
    "train-teacher": cmd_train_teacher,
    "train-fsp": cmd_train_fsp,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="earlyrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", type=Path, help="run directory (default from config)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config key, value parsed as JSON when possible; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed, args.out)
        run = Run(cfg, args.command)
        run.out.mkdir(parents=True, exist_ok=True)
        with np.errstate(over="raise", invalid="raise"):
            COMMANDS[args.command](run)
        run.write_manifest()
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EarlyRecError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
