"""Adam, the epoch loop, evaluation over folds, ablations and run artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, container
from .data import SplitPlan, Trial, make_splits
from .layers import Module
from .loss import LossConfig, combined_loss
from .metrics import DEFAULT_THRESHOLDS, f1_report, sample_accuracy
from .models import ModelConfig, SegmentationModel, build_model, receptive_field
from .tensor import Parameter, Tape

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    epochs: int = 100
    batch_size: int = 4
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.learning_rate > 0 and self.eps > 0 and 0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("learning rate, eps and Adam betas must be positive (betas below 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# optimiser


class AdamState:
    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: Sequence[Parameter], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update from the gradients stored on ``params``."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient for parameter {p.name!r}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for p in params:
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        m = state.m[p.name] = b1 * state.m[p.name] + (1 - b1) * p.grad
        v = state.v[p.name] = b2 * state.v[p.name] + (1 - b2) * p.grad * p.grad
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _named(model: Module) -> list[Parameter]:
    params = []
    for name, p in model.named_parameters():
        p.name = name
        params.append(p)
    return params


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    steps: int


def train(model: SegmentationModel, trials: Sequence[Trial], cfg: TrainConfig,
          callback: Callable[[EpochRecord], None] | None = None) -> list[EpochRecord]:
    """Seeded shuffling, per-sequence gradient accumulation, one Adam step per ``batch_size`` trials."""
    if not trials:
        raise TrainingError("empty training set")
    params = _named(model)
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    history = []
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(trials))
        model.zero_grad()
        pending = steps = 0
        total_loss = correct = samples = 0.0
        for idx in order:
            trial = trials[idx]
            with Tape() as tape:
                stages = model(trial.sequence.values)
                loss = combined_loss(stages, trial.labels, cfg.loss)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, trial {trial.trial_id}")
            tape.backward(loss)
            total_loss += value
            correct += np.sum(np.argmax(stages[-1].data, axis=-1) == trial.labels)
            samples += trial.labels.size
            pending += 1
            if pending == cfg.batch_size:
                adam_step(params, state, cfg)
                model.zero_grad()
                pending = 0
                steps += 1
        if pending:
            adam_step(params, state, cfg)
            model.zero_grad()
            steps += 1
        record = EpochRecord(epoch, total_loss / len(trials), correct / samples, steps)
        history.append(record)
        log.debug("epoch %d loss %.5f acc %.4f", epoch, record.loss, record.accuracy)
        if callback is not None:
            callback(record)
    return history


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class TrialResult:
    trial_id: str
    subject: str
    accuracy: float
    f1: dict[float, dict]
    predicted: np.ndarray = field(repr=False)
    truth: np.ndarray = field(repr=False)

    def f1_at(self, threshold: float) -> float:
        return self.f1[threshold]["f1"]


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    trials: list[TrialResult]

    def mean_accuracy(self) -> float:
        return float(np.mean([t.accuracy for t in self.trials]))

    def mean_f1(self, threshold: float) -> float:
        return float(np.mean([t.f1_at(threshold) for t in self.trials]))

    def summary(self) -> dict:
        out = {"accuracy": self.mean_accuracy(), "num_trials": len(self.trials)}
        for th in self.thresholds:
            out[f"f1@{int(round(th * 100))}"] = self.mean_f1(th)
        return out

    def rows(self, fold: int | str = 0) -> list[dict]:
        rows = []
        for t in self.trials:
            for th in self.thresholds:
                e = t.f1[th]
                rows.append({"fold": fold, "trial": t.trial_id, "subject": t.subject, "threshold": th,
                             "tp": e["tp"], "fp": e["fp"], "fn": e["fn"], "precision": e["precision"],
                             "recall": e["recall"], "f1": e["f1"], "accuracy": t.accuracy})
        return rows


METRIC_COLUMNS = ["fold", "trial", "subject", "threshold", "tp", "fp", "fn", "precision", "recall", "f1", "accuracy"]


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] = METRIC_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def evaluate(model: SegmentationModel, trials: Sequence[Trial],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> EvalReport:
    """Score the last stage's arg-max per trial with batch norm in inference mode."""
    was_training = model.training
    model.eval()
    try:
        results = []
        for trial in trials:
            pred = model.predict(trial.sequence.values)
            entries = f1_report(pred, trial.labels, thresholds)
            results.append(TrialResult(trial.trial_id, trial.subject, sample_accuracy(pred, trial.labels),
                                       {e.threshold: e.to_dict() for e in entries}, pred, trial.labels))
    finally:
        model.train(was_training)
    return EvalReport(tuple(thresholds), results)


# ---------------------------------------------------------------------------
# checkpoints and manifests


def checkpoint_bytes(model: SegmentationModel) -> bytes:
    arrays = {name: p.data for name, p in model.named_parameters()}
    for name, state in model.named_buffers():
        arrays[f"{name}.running_mean"] = state.mean
        arrays[f"{name}.running_var"] = state.var
    header = {"format": "msgcn-checkpoint", "package_version": __version__,
              "config": model.config.to_dict()}
    return container.encode(container.CHECKPOINT_MAGIC, header, arrays)


def save_checkpoint(path: str | Path, model: SegmentationModel) -> str:
    """Write the checkpoint; returns its SHA-256."""
    blob = checkpoint_bytes(model)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | Path) -> SegmentationModel:
    header, arrays = container.read(path, container.CHECKPOINT_MAGIC)
    model = build_model(ModelConfig.from_dict(header["config"]))
    for name, p in model.named_parameters():
        if arrays[name].shape != p.shape:
            raise container.ContainerError(f"{name}: stored shape {arrays[name].shape} != {p.shape}")
        p.data = arrays[name].copy()
    for name, state in model.named_buffers():
        state.mean = arrays[f"{name}.running_mean"].copy()
        state.var = arrays[f"{name}.running_var"].copy()
    return model


@dataclass
class RunManifest:
    model: dict
    training: dict
    split: dict
    seed: int
    folds: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    package_version: str = __version__
    checkpoint_format: int = container.VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


@dataclass
class FoldResult:
    index: int
    model: SegmentationModel
    history: list[EpochRecord]
    report: EvalReport
    train_ids: list[str]
    test_ids: list[str]


def run_fold(index: int, train_set: Sequence[Trial], test_set: Sequence[Trial], model_cfg: ModelConfig,
             train_cfg: TrainConfig, thresholds=DEFAULT_THRESHOLDS) -> FoldResult:
    model = build_model(model_cfg.with_changes(seed=model_cfg.seed + index))
    fold_cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": train_cfg.seed + index})
    history = train(model, train_set, fold_cfg)
    report = evaluate(model, test_set, thresholds)
    return FoldResult(index, model, history, report, [t.trial_id for t in train_set],
                      [t.trial_id for t in test_set])


def run_experiment(trials: Sequence[Trial], model_cfg: ModelConfig, train_cfg: TrainConfig, plan: SplitPlan,
                   out_dir: str | Path | None = None, folds_parallel: int = 1,
                   thresholds=DEFAULT_THRESHOLDS) -> tuple[list[FoldResult], RunManifest]:
    """Train and evaluate every fold; optionally write checkpoints, metrics and the manifest."""
    folds = make_splits(trials, plan)
    jobs = [(i, tr, te) for i, (tr, te) in enumerate(folds)]
    if folds_parallel > 1:
        with ThreadPoolExecutor(max_workers=folds_parallel) as pool:
            results = list(pool.map(lambda j: run_fold(*j, model_cfg, train_cfg, thresholds), jobs))
    else:
        results = [run_fold(*j, model_cfg, train_cfg, thresholds) for j in jobs]
    manifest = RunManifest(model_cfg.to_dict(), train_cfg.to_dict(), plan.to_dict(), train_cfg.seed)
    rows = []
    for res in results:
        fold = {"index": res.index, "train_trials": res.train_ids, "test_trials": res.test_ids,
                "epochs": [asdict(r) for r in res.history], "metrics": res.report.summary()}
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            fold["checkpoint"] = f"fold{res.index}.ckpt"
            fold["checkpoint_sha256"] = save_checkpoint(out / fold["checkpoint"], res.model)
        manifest.folds.append(fold)
        rows += res.report.rows(res.index)
    if out_dir is not None:
        (Path(out_dir) / "metrics.csv").write_text(rows_to_csv(rows))
        manifest.write(Path(out_dir) / "manifest.json")
    return results, manifest


# ---------------------------------------------------------------------------
# ablations

ABLATION_AXES = {
    # axis: (label of base variant, label of ablated variant, config change for the ablated one)
    "causal": ("acausal", "causal", {"causal": True}),
    "dilation": ("dilated", "regular", {"dilated": False}),
}


@dataclass
class AblationRow:
    seed: int
    variant: str
    f1_50: float
    accuracy: float
    receptive_field: int


def ablate(base: ModelConfig, axis: str, train_set: Sequence[Trial], test_set: Sequence[Trial],
           train_cfg: TrainConfig, seeds: Sequence[int] = (0,)) -> list[AblationRow]:
    """Train the base and ablated variant with shared seeds; one row per (seed, variant)."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {sorted(ABLATION_AXES)}")
    base = base.with_changes(**{"causal": False, "dilated": True})
    base_name, ablated_name, change = ABLATION_AXES[axis]
    rows = []
    for seed in seeds:
        for name, cfg in ((base_name, base), (ablated_name, base.with_changes(**change))):
            cfg = cfg.with_changes(seed=seed)
            model = build_model(cfg)
            train(model, train_set, TrainConfig(**{**train_cfg.to_dict(), "seed": seed}))
            report = evaluate(model, test_set, (0.5,))
            rows.append(AblationRow(seed, name, report.mean_f1(0.5), report.mean_accuracy(),
                                    receptive_field(cfg.kernel, cfg.dilations)))
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """Comma-separated comparison: one line per seed, the two variants side by side, plus the mean."""
    variants = list(dict.fromkeys(r.variant for r in rows))
    seeds = list(dict.fromkeys(r.seed for r in rows))
    by_key = {(r.seed, r.variant): r for r in rows}
    header = ["seed"] + [f"{v}_{m}" for v in variants for m in ("f1@50", "acc")]
    lines = [",".join(header)]
    for s in seeds:
        cells = [str(s)]
        for v in variants:
            r = by_key[(s, v)]
            cells += [f"{100 * r.f1_50:.1f}", f"{100 * r.accuracy:.1f}"]
        lines.append(",".join(cells))
    mean = ["mean"]
    for v in variants:
        sel = [r for r in rows if r.variant == v]
        mean += [f"{100 * np.mean([r.f1_50 for r in sel]):.1f}", f"{100 * np.mean([r.accuracy for r in sel]):.1f}"]
    lines.append(",".join(mean))
    return "\n".join(lines) + "\n"
