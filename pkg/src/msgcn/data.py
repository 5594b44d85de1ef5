"""Sequence files, feature computation, resampling, splits and synthetic data.

Text sequence format (``<stem>.seq``)::

    # msgcn-sequence 1
    T: 3
    N: 2
    C: 6
    sample_rate: 50
    subject: s01
    trial: s01_t003
    classes: ["walk", "turn"]
    data:
    <T lines, each N*C comma-separated values in (node, channel) order>

Values are written with Python's shortest round-trip float repr, so
save/load is bit-exact.  The parallel label file ``<stem>.labels`` holds T
lines with one integer class id each.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container
from .graph import ConfigurationError, GraphLayout, layout_preset

FORMAT_TAG = "# msgcn-sequence 1"
_HEADER_KEYS = ("T", "N", "C", "sample_rate", "subject", "trial", "classes")


class ParseError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.line = line


class UnsupportedRateError(ValueError):
    pass


@dataclass
class SkeletonSequence:
    values: np.ndarray  # (T, N, C)
    sample_rate: float
    subject_id: str = "s0"
    trial_id: str = "t0"
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] < 1:
            raise ValueError(f"sequence values must be (T>=1, N, C), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"trial {self.trial_id}: non-finite feature values")

    @property
    def length(self) -> int:
        return self.values.shape[0]


@dataclass
class Trial:
    sequence: SkeletonSequence
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (self.sequence.length,):
            raise ValueError(f"trial {self.sequence.trial_id}: {self.labels.size} labels for "
                             f"{self.sequence.length} samples")

    @property
    def subject(self) -> str:
        return self.sequence.subject_id

    @property
    def trial_id(self) -> str:
        return self.sequence.trial_id


# ---------------------------------------------------------------------------
# file I/O


def _label_path(path: Path) -> Path:
    return path.with_suffix(".labels")


def save_sequence(path: str | Path, seq: SkeletonSequence, labels) -> Path:
    path = Path(path)
    T, N, C = seq.values.shape
    lines = [FORMAT_TAG, f"T: {T}", f"N: {N}", f"C: {C}", f"sample_rate: {seq.sample_rate!r}",
             f"subject: {seq.subject_id}", f"trial: {seq.trial_id}",
             f"classes: {json.dumps(list(seq.class_names))}", "data:"]
    flat = seq.values.reshape(T, N * C)
    lines += [",".join(repr(float(v)) for v in row) for row in flat]
    path.write_text("\n".join(lines) + "\n")
    labels = np.asarray(labels, dtype=int)
    _label_path(path).write_text("".join(f"{int(v)}\n" for v in labels))
    return path


def load_sequence(path: str | Path) -> tuple[SkeletonSequence, np.ndarray]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != FORMAT_TAG:
        raise ParseError(path, 1, f"missing format tag {FORMAT_TAG!r}")
    header: dict[str, str] = {}
    lineno = 1
    for lineno in range(2, len(lines) + 1):
        text = lines[lineno - 1]
        if text.strip() == "data:":
            break
        key, sep, value = text.partition(":")
        key = key.strip()
        if not sep or key not in _HEADER_KEYS:
            raise ParseError(path, lineno, f"malformed header line {text!r}")
        header[key] = value.strip()
    else:
        raise ParseError(path, lineno, "missing 'data:' line")
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ParseError(path, lineno, f"header missing {missing}")
    try:
        T, N, C = int(header["T"]), int(header["N"]), int(header["C"])
        rate = float(header["sample_rate"])
        classes = tuple(json.loads(header["classes"]))
    except (ValueError, json.JSONDecodeError) as exc:
        raise ParseError(path, None, f"bad header value: {exc}") from exc
    body = lines[lineno:]
    if len(body) != T:
        raise ParseError(path, lineno + len(body), f"expected {T} data rows, found {len(body)}")
    values = np.empty((T, N * C))
    for i, text in enumerate(body):
        fields = text.split(",")
        if len(fields) != N * C:
            raise ParseError(path, lineno + 1 + i, f"expected {N * C} values, found {len(fields)}")
        try:
            values[i] = [float(v) for v in fields]
        except ValueError as exc:
            raise ParseError(path, lineno + 1 + i, str(exc)) from exc
    labels = load_labels(_label_path(path), num_classes=len(classes) or None)
    if labels.size != T:
        raise ParseError(_label_path(path), None, f"{labels.size} labels for {T} samples")
    seq = SkeletonSequence(values.reshape(T, N, C), rate, header["subject"], header["trial"], classes)
    return seq, labels


def load_labels(path: str | Path, num_classes: int | None = None) -> np.ndarray:
    path = Path(path)
    out = []
    for lineno, text in enumerate(path.read_text().splitlines(), start=1):
        if not text.strip():
            continue
        try:
            value = int(text.strip())
        except ValueError:
            raise ParseError(path, lineno, f"not an integer label: {text!r}") from None
        if value < 0 or (num_classes is not None and value >= num_classes):
            raise ParseError(path, lineno, f"unknown class id {value}")
        out.append(value)
    return np.array(out, dtype=int)


def save_labels(path: str | Path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(labels)))


def save_sequence_binary(path: str | Path, seq: SkeletonSequence, labels) -> None:
    header = {"sample_rate": seq.sample_rate, "subject": seq.subject_id, "trial": seq.trial_id,
              "classes": list(seq.class_names)}
    container.write(path, container.SEQUENCE_MAGIC, header,
                    {"values": seq.values, "labels": np.asarray(labels, dtype=np.float64)})


def load_sequence_binary(path: str | Path) -> tuple[SkeletonSequence, np.ndarray]:
    header, arrays = container.read(path, container.SEQUENCE_MAGIC)
    seq = SkeletonSequence(arrays["values"], header["sample_rate"], header["subject"], header["trial"],
                           tuple(header["classes"]))
    return seq, arrays["labels"].astype(int)


def save_dataset(directory: str | Path, trials: Sequence[Trial], binary: bool = False) -> list[Path]:
    """One ``<trial id>.seq`` text file (or ``.seqb`` container) per trial."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not binary:
        return [save_sequence(directory / f"{t.trial_id}.seq", t.sequence, t.labels) for t in trials]
    paths = []
    for t in trials:
        paths.append(directory / f"{t.trial_id}.seqb")
        save_sequence_binary(paths[-1], t.sequence, t.labels)
    return paths


def load_dataset(directory: str | Path) -> list[Trial]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    paths = sorted([*directory.glob("*.seq"), *directory.glob("*.seqb")], key=lambda p: p.stem)
    if not paths:
        raise FileNotFoundError(f"no .seq or .seqb files in {directory}")
    return [Trial(*(load_sequence_binary(p) if p.suffix == ".seqb" else load_sequence(p))) for p in paths]


# ---------------------------------------------------------------------------
# preprocessing


def compute_features(positions, layout: GraphLayout | int, sample_rate: float = 50.0, **meta) -> SkeletonSequence:
    """Per-node displacement (first sample zero) and position relative to the root: C=6."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[-1] != 3:
        raise ValueError(f"positions must be (T, N, 3), got {positions.shape}")
    root = layout if isinstance(layout, int) else layout.root
    displacement = np.zeros_like(positions)
    displacement[1:] = positions[1:] - positions[:-1]
    relative = positions - positions[:, root:root + 1, :]
    return SkeletonSequence(np.concatenate([displacement, relative], axis=-1), sample_rate, **meta)


def resample(seq: SkeletonSequence, labels, target_rate: float) -> tuple[SkeletonSequence, np.ndarray]:
    """Integer-factor decimation of features and labels."""
    ratio = seq.sample_rate / target_rate
    factor = round(ratio)
    if factor < 1 or not math.isclose(ratio, factor, rel_tol=0, abs_tol=1e-9):
        raise UnsupportedRateError(
            f"cannot resample {seq.sample_rate} Hz to {target_rate} Hz: not an integer decimation")
    labels = np.asarray(labels)
    return replace(seq, values=seq.values[::factor].copy(), sample_rate=float(target_rate)), labels[::factor].copy()


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitPlan:
    mode: str = "loso"
    test_subjects: tuple[str, ...] = ()
    train_subjects: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in ("fixed", "loso", "none"):
            raise ConfigurationError(f"unknown split mode {self.mode!r}; expected fixed, loso or none")
        overlap = set(self.test_subjects) & set(self.train_subjects)
        if overlap:
            raise ConfigurationError(f"subjects in both partitions: {sorted(overlap)}")
        if self.mode == "fixed" and not self.test_subjects:
            raise ConfigurationError("fixed split needs test_subjects")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def load_split_plan(path: str | Path) -> SplitPlan:
    spec = json.loads(Path(path).read_text())
    unknown = set(spec) - {"mode", "test_subjects", "train_subjects"}
    if unknown:
        raise ConfigurationError(f"unknown split-plan field(s): {sorted(unknown)}")
    return SplitPlan(spec.get("mode", "loso"), tuple(map(str, spec.get("test_subjects", ()))),
                     tuple(map(str, spec.get("train_subjects", ()))))


def make_splits(trials: Sequence[Trial], plan: SplitPlan) -> list[tuple[list[Trial], list[Trial]]]:
    """(train, test) folds; ``none`` trains and tests on everything."""
    subjects = sorted({t.subject for t in trials})
    if plan.mode == "none":
        return [(list(trials), list(trials))]
    if plan.mode == "loso":
        return [([t for t in trials if t.subject != s], [t for t in trials if t.subject == s]) for s in subjects]
    unknown = set(plan.test_subjects) - set(subjects)
    if unknown:
        raise ConfigurationError(f"test subjects not in dataset: {sorted(unknown)}")
    test = [t for t in trials if t.subject in plan.test_subjects]
    train_pool = plan.train_subjects or tuple(s for s in subjects if s not in plan.test_subjects)
    train = [t for t in trials if t.subject in train_pool]
    return [(train, test)]


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int = 3
    num_sequences: int = 20
    min_length: int = 150
    max_length: int = 250
    min_segment: int = 20
    max_segment: int = 80
    noise: float = 0.05
    seed: int = 0
    num_subjects: int = 5
    channels: int = 6
    sample_rate: float = 50.0
    offset_scale: float = 1.0
    amplitude: float = 0.5
    boundary_jitter: int = 0
    layout: str = "chain5"
    pattern_seed: int | None = None  # defaults to seed; share it to draw held-out sets of the same classes

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("synthetic data needs at least two classes")
        if not 1 <= self.min_segment <= self.max_segment:
            raise ValueError("need 1 <= min_segment <= max_segment")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticPatterns:
    """Per-class motion: ``offset + amplitude * sin(2 pi f t / fs + phase)`` per node and channel."""

    offsets: np.ndarray  # (L, N, C)
    frequencies: np.ndarray  # (L, N) in Hz
    phases: np.ndarray  # (L, N, C)

    def render(self, label: int, t: np.ndarray, amplitude: float, sample_rate: float) -> np.ndarray:
        arg = 2 * np.pi * self.frequencies[label][None, :, None] * t[:, None, None] / sample_rate
        return self.offsets[label][None] + amplitude * np.sin(arg + self.phases[label][None])


def synthetic_patterns(cfg: SyntheticConfig, num_nodes: int, rng: np.random.Generator) -> SyntheticPatterns:
    L, C = cfg.num_classes, cfg.channels
    return SyntheticPatterns(rng.normal(0.0, cfg.offset_scale, size=(L, num_nodes, C)),
                             rng.uniform(0.25, 2.5, size=(L, num_nodes)),
                             rng.uniform(0.0, 2 * np.pi, size=(L, num_nodes, C)))


def _segment_lengths(rng: np.random.Generator, total: int, lo: int, hi: int) -> list[int]:
    lengths = []
    remaining = total
    while remaining > 0:
        if remaining < lo:
            if lengths:
                lengths[-1] += remaining
            else:
                lengths.append(remaining)
            break
        n = int(rng.integers(lo, hi + 1))
        n = min(n, remaining)
        lengths.append(n)
        remaining -= n
    return lengths


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> list[Trial]:
    """Concatenations of random-length action segments; fully determined by ``cfg.seed``."""
    pattern_seed = cfg.seed if cfg.pattern_seed is None else cfg.pattern_seed
    layout = layout_preset(cfg.layout)
    patterns = synthetic_patterns(cfg, layout.num_nodes, np.random.default_rng([pattern_seed, 1]))
    rng = np.random.default_rng([cfg.seed, 2])
    names = tuple(f"action{l}" for l in range(cfg.num_classes))
    trials = []
    for m in range(cfg.num_sequences):
        T = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        lengths = _segment_lengths(rng, T, cfg.min_segment, cfg.max_segment)
        labels = np.empty(T, dtype=int)
        values = np.empty((T, layout.num_nodes, cfg.channels))
        start, prev = 0, -1
        for n in lengths:
            if prev < 0:
                label = int(rng.integers(cfg.num_classes))
            else:
                # adjacent segments always differ
                label = int(rng.integers(cfg.num_classes - 1))
                label += label >= prev
            t = np.arange(start, start + n)
            values[start:start + n] = patterns.render(label, t, cfg.amplitude, cfg.sample_rate)
            labels[start:start + n] = label
            start += n
            prev = label
        if cfg.noise:
            values += rng.normal(0.0, cfg.noise, size=values.shape)
        if cfg.boundary_jitter:
            labels = _jitter_boundaries(labels, cfg.boundary_jitter, cfg.min_segment, rng)
        subject = f"s{m % cfg.num_subjects:02d}"
        seq = SkeletonSequence(values, cfg.sample_rate, subject, f"{subject}_t{m:03d}", names)
        trials.append(Trial(seq, labels))
    return trials


def _jitter_boundaries(labels: np.ndarray, jitter: int, min_segment: int, rng: np.random.Generator) -> np.ndarray:
    """Annotation noise: move every label boundary by up to ``jitter`` samples."""
    out = labels.copy()
    limit = max(0, min(jitter, (min_segment - 1) // 2))
    for b in np.flatnonzero(labels[1:] != labels[:-1]) + 1:
        shift = int(rng.integers(-limit, limit + 1))
        if shift > 0:
            out[b:b + shift] = labels[b - 1]
        elif shift < 0:
            out[b + shift:b] = labels[b]
    return out
