"""Synthetic procedure-like sequences and the on-disk dataset format.

Every sequence opens with a phase whose emission centroid is shared by all
classes, followed by ``phases_per_class`` class-specific phases whose
centroids separate progressively (the first class phase is the least
discriminative, the last the most).  Frames are the phase centroid plus
isotropic Gaussian noise; occasionally a frame is swapped for a draw around
a class-independent "irrelevant" centroid.
"""
from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, DatasetParseError, InvalidInputError

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.6, 0.1, 0.3)

PREFIX_PHASE = 0
IRRELEVANT_PHASE = -1


@dataclass(frozen=True)
class GeneratorSpec:
    num_classes: int = 9
    feature_dim: int = 32
    phases_per_class: int = 3
    shared_prefix_len_range: tuple[int, int] = (8, 12)
    # relative phase lengths; drawn per phase then rescaled to fill the sequence
    phase_len_range: tuple[int, int] = (10, 20)
    class_centroid_scale: float = 1.0
    noise_std: float = 0.1
    irrelevant_frame_prob: float = 0.03
    # separation of the first class phase relative to the last (linear ramp)
    early_phase_separation: float = 0.35
    # log-normal duration, (mean, std) in steps; per-class means spread
    # linearly over [mean*(1-spread/2), mean*(1+spread/2)] unless overridden
    duration_mean: float = 48.0
    duration_std: float = 10.0
    duration_spread: float = 0.25
    class_durations: tuple[tuple[float, float], ...] | None = None
    seed: int = 42

    def __post_init__(self):
        # json round-trips give lists; keep the dataclass hashable
        object.__setattr__(self, "shared_prefix_len_range", tuple(self.shared_prefix_len_range))
        object.__setattr__(self, "phase_len_range", tuple(self.phase_len_range))
        if self.class_durations is not None:
            object.__setattr__(
                self, "class_durations", tuple(tuple(float(v) for v in p) for p in self.class_durations)
            )
        self.validate()

    def validate(self):
        if self.num_classes < 2:
            raise InvalidInputError("num_classes must be >= 2")
        if self.feature_dim < 1 or self.phases_per_class < 1:
            raise InvalidInputError("feature_dim and phases_per_class must be positive")
        for name in ("shared_prefix_len_range", "phase_len_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise InvalidInputError(f"{name} must satisfy 1 <= min <= max, got {(lo, hi)}")
        if self.class_centroid_scale <= 0 or self.noise_std < 0:
            raise InvalidInputError("class_centroid_scale must be > 0 and noise_std >= 0")
        if not 0.0 <= self.irrelevant_frame_prob < 1.0:
            raise InvalidInputError("irrelevant_frame_prob must lie in [0, 1)")
        if not 0.0 <= self.early_phase_separation <= 1.0:
            raise InvalidInputError("early_phase_separation must lie in [0, 1]")
        if self.class_durations is not None and len(self.class_durations) != self.num_classes:
            raise InvalidInputError("class_durations needs one (mean, std) pair per class")
        for c in range(self.num_classes):
            mean, std = self.duration(c)
            if mean <= 0 or std < 0:
                raise InvalidInputError(f"class {c}: duration mean must be > 0 and std >= 0")

    def duration(self, label: int) -> tuple[float, float]:
        """(mean, std) of the length distribution of class ``label``, in steps."""
        if self.class_durations is not None:
            return self.class_durations[label]
        frac = label / (self.num_classes - 1) - 0.5
        return self.duration_mean * (1.0 + self.duration_spread * frac), self.duration_std

    def min_length(self) -> int:
        return self.shared_prefix_len_range[1] + self.phases_per_class

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shared_prefix_len_range"] = list(self.shared_prefix_len_range)
        d["phase_len_range"] = list(self.phase_len_range)
        if self.class_durations is not None:
            d["class_durations"] = [list(p) for p in self.class_durations]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown GeneratorSpec fields: {sorted(unknown)}")
        return cls(**d)


class FrameSequence:
    """A labeled ``(T, D)`` feature sequence.

    ``phases`` is generator metadata (0 = shared prefix, 1..P = class phases,
    -1 = irrelevant frame).  It is not serialized and not part of equality.
    """

    __slots__ = ("label", "features", "phases")

    def __init__(self, label: int, features, phases=None):
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise InvalidInputError(f"features must have shape (T>=1, D), got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("features contain non-finite values")
        self.label = int(label)
        self.features = feats
        self.phases = None if phases is None else np.asarray(phases, dtype=np.int64)

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def truncated(self, max_steps: int) -> "FrameSequence":
        phases = None if self.phases is None else self.phases[:max_steps]
        return FrameSequence(self.label, self.features[:max_steps], phases)

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return (
            self.label == other.label
            and self.features.shape == other.features.shape
            and bool(np.array_equal(self.features, other.features))
        )

    def __repr__(self):
        return f"FrameSequence(label={self.label}, T={self.T}, D={self.dim})"


@dataclass
class Dataset:
    sequences: list[FrameSequence]
    splits: list[str]
    spec: GeneratorSpec | None = None
    num_classes: int = field(default=0)

    def __post_init__(self):
        if len(self.sequences) != len(self.splits):
            raise InvalidInputError("one split label per sequence required")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise InvalidInputError(f"unknown split names {sorted(bad)}")
        if not self.num_classes:
            self.num_classes = self.spec.num_classes if self.spec else 1 + max(s.label for s in self.sequences)

    @property
    def feature_dim(self) -> int:
        return self.sequences[0].dim

    def split(self, name: str) -> list[FrameSequence]:
        return [s for s, sp in zip(self.sequences, self.splits) if sp == name]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.splits == other.splits
            and self.num_classes == other.num_classes
            and self.spec == other.spec
            and self.sequences == other.sequences
        )


@lru_cache(maxsize=32)
def _centroids(spec: GeneratorSpec):
    """Deterministic centroid tables for ``spec``.

    Returns (prefix (D,), class_phase (N, P, D), irrelevant (D,)).
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    D, N, P = spec.feature_dim, spec.num_classes, spec.phases_per_class
    scale = spec.class_centroid_scale

    def unit_norm_draw(*shape):
        return rng.standard_normal(shape + (D,)) / np.sqrt(D)

    prefix = scale * unit_norm_draw()[()]
    anchors = scale * unit_norm_draw(P)
    offsets = scale * unit_norm_draw(N, P)
    if P == 1:
        sep = np.ones(1)
    else:
        sep = spec.early_phase_separation + (1.0 - spec.early_phase_separation) * np.arange(P) / (P - 1)
    class_phase = anchors[None, :, :] + sep[None, :, None] * offsets
    direction = rng.standard_normal(D)
    irrelevant = 4.0 * scale * direction / np.linalg.norm(direction)
    for arr in (prefix, class_phase, irrelevant):
        arr.setflags(write=False)
    return prefix, class_phase, irrelevant


def centroids(spec: GeneratorSpec):
    return _centroids(spec)


def _draw_length(spec: GeneratorSpec, label: int, rng: np.random.Generator) -> int:
    mean, std = spec.duration(label)
    if std == 0:
        T = int(round(mean))
    else:
        sigma2 = np.log1p((std / mean) ** 2)
        mu = np.log(mean) - 0.5 * sigma2
        T = int(round(rng.lognormal(mu, np.sqrt(sigma2))))
    return max(T, spec.min_length())


def _phase_layout(spec: GeneratorSpec, T: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.shared_prefix_len_range
    prefix_len = int(rng.integers(lo, hi + 1))
    rest = T - prefix_len
    P = spec.phases_per_class
    raw = rng.uniform(spec.phase_len_range[0], spec.phase_len_range[1], size=P)
    # at least one step per phase, remainder shared proportionally
    lengths = 1 + np.floor(raw / raw.sum() * (rest - P)).astype(int)
    lengths[-1] += rest - lengths.sum()
    phases = np.empty(T, dtype=np.int64)
    phases[:prefix_len] = PREFIX_PHASE
    phases[prefix_len:] = np.repeat(np.arange(1, P + 1), lengths)
    return phases


def generate_sequence(spec: GeneratorSpec, label: int, rng: np.random.Generator) -> FrameSequence:
    if not 0 <= label < spec.num_classes:
        raise InvalidInputError(f"class {label} out of range [0, {spec.num_classes})")
    prefix, class_phase, irrelevant = _centroids(spec)
    T = _draw_length(spec, label, rng)
    phases = _phase_layout(spec, T, rng)
    means = np.where(
        (phases == PREFIX_PHASE)[:, None],
        prefix[None, :],
        class_phase[label, np.maximum(phases - 1, 0)],
    )
    noise = rng.standard_normal((T, spec.feature_dim)) * spec.noise_std
    swap = rng.random(T) < spec.irrelevant_frame_prob
    means[swap] = irrelevant
    phases[swap] = IRRELEVANT_PHASE
    return FrameSequence(label, means + noise, phases)


def sequence_rng(seed: int, index: int) -> np.random.Generator:
    """Independent sub-stream for sequence ``index`` of a dataset."""
    return np.random.default_rng(np.random.SeedSequence([seed, 1, index]))


def stratified_split(n: int) -> list[str]:
    """60/10/30 split of ``n`` same-class items, every split non-empty."""
    n_val = max(1, int(round(n * SPLIT_FRACTIONS[1])))
    n_test = max(1, int(round(n * SPLIT_FRACTIONS[2])))
    n_train = n - n_val - n_test
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def generate_dataset(spec: GeneratorSpec, per_class_counts=None) -> Dataset:
    """Generate a dataset with a per-class stratified 60/10/30 split.

    Sequence ``i`` of the output draws only from ``sequence_rng(seed, i)``,
    so generation order does not affect the content.
    """
    if per_class_counts is None:
        per_class_counts = [10] * spec.num_classes
    counts = [int(c) for c in per_class_counts]
    if len(counts) != spec.num_classes:
        raise InvalidInputError(f"expected {spec.num_classes} per-class counts, got {len(counts)}")
    if min(counts) < 3:
        raise InvalidInputError("each class needs at least 3 sequences so every split is non-empty")
    sequences, splits = [], []
    idx = 0
    for label, n in enumerate(counts):
        for split in stratified_split(n):
            sequences.append(generate_sequence(spec, label, sequence_rng(spec.seed, idx)))
            splits.append(split)
            idx += 1
    return Dataset(sequences, splits, spec)


def save_dataset(d: Dataset, path) -> None:
    """Write ``d`` as newline-delimited JSON (header line + one line per sequence).

    The file is written to a temporary sibling and renamed into place.
    """
    path = Path(path)
    header = {
        "version": FORMAT_VERSION,
        "num_classes": d.num_classes,
        "feature_dim": d.feature_dim,
        "num_sequences": len(d.sequences),
        "spec": d.spec.to_dict() if d.spec is not None else None,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for seq, split in zip(d.sequences, d.splits):
                rec = {"label": seq.label, "split": split, "features": seq.features.tolist()}
                fh.write(json.dumps(rec) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetParseError("empty file", line=1)
    header = _parse_line(lines[0], 1)
    for key in ("version", "num_classes", "feature_dim"):
        if key not in header:
            raise DatasetParseError(f"header missing {key!r}", line=1)
    if header["version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported version {header['version']}")
    D, N = int(header["feature_dim"]), int(header["num_classes"])
    expected = header.get("num_sequences")
    if expected is not None and len(lines) - 1 != expected:
        raise DatasetParseError(
            f"header announces {expected} records but file holds {len(lines) - 1} (truncated?)",
            line=len(lines),
        )
    sequences, splits = [], []
    for i, line in enumerate(lines[1:]):
        rec = _parse_line(line, i + 2)
        try:
            label, split, feats = rec["label"], rec["split"], rec["features"]
        except (KeyError, TypeError) as exc:
            raise DatasetParseError(f"record missing field {exc}", line=i + 2) from None
        if not isinstance(label, int) or not 0 <= label < N:
            raise DatasetFormatError(f"label {label!r} outside [0, {N})", record=i)
        if split not in SPLITS:
            raise DatasetFormatError(f"unknown split {split!r}", record=i)
        try:
            arr = np.array(feats, dtype=np.float64)
        except (TypeError, ValueError):
            raise DatasetFormatError("ragged or non-numeric features", record=i) from None
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DatasetFormatError(f"features must be a non-empty T x D array, got shape {arr.shape}", record=i)
        if arr.shape[1] != D:
            raise DatasetFormatError(f"feature dim {arr.shape[1]} != header feature_dim {D}", record=i)
        sequences.append(FrameSequence(label, arr))
        splits.append(split)
    spec = GeneratorSpec.from_dict(header["spec"]) if header.get("spec") else None
    return Dataset(sequences, splits, spec, num_classes=N)


def _parse_line(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
    if not isinstance(obj, dict):
        raise DatasetParseError("expected a JSON object", line=lineno)
    return obj

