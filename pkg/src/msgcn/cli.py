"""Command-line driver.

Exit status: 0 when the command's contract held, 1 on a contract violation
(bad data, failed gradient check, ...), 2 on a usage error.  Every command
writes ``manifest.json`` into its output directory, which is ``--out`` if
given, else ``$MSGCN_OUTPUT_DIR/<command>``, else ``msgcn-out/<command>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .container import ContainerError
from .data import (
    ParseError,
    SkeletonSequence,
    SplitPlan,
    SyntheticConfig,
    Trial,
    UnsupportedRateError,
    compute_features,
    generate_synthetic,
    load_dataset,
    load_labels,
    load_split_plan,
    make_splits,
    resample,
    save_dataset,
)
from .graph import ConfigurationError, GraphError, preset_names, resolve_layout
from .loss import DataError as LossDataError
from .loss import LossConfig
from .metrics import DEFAULT_THRESHOLDS, DataError, f1_report, sample_accuracy
from .models import KINDS, GRAPH_KINDS, ModelConfig
from .tensor import GradCheckError
from .training import (
    ABLATION_AXES,
    METRIC_COLUMNS,
    TrainConfig,
    TrainingError,
    ablate,
    ablation_table,
    evaluate,
    load_checkpoint,
    rows_to_csv,
    run_experiment,
)

OUTPUT_ENV = "MSGCN_OUTPUT_DIR"
log = logging.getLogger("msgcn")

# errors that mean "the inputs broke a contract" rather than "the program is wrong"
CONTRACT_ERRORS = (ParseError, UnsupportedRateError, ConfigurationError, GraphError, DataError, LossDataError,
                   ContainerError, TrainingError, GradCheckError, FileNotFoundError, ValueError)


class ContractViolation(Exception):
    pass


def _out_dir(args) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUTPUT_ENV) or "msgcn-out") / args.command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, args, **extra) -> None:
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    doc = {"command": args.command, "arguments": settings, "package_version": __version__, **extra}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _thresholds(values) -> tuple[float, ...]:
    out = tuple(values) if values else DEFAULT_THRESHOLDS
    for th in out:
        if not 0 < th <= 1:
            raise ContractViolation(f"IoU threshold {th} outside (0, 1]")
    return out


# ---------------------------------------------------------------------------
# data sources

def _add_synthetic_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic data (used with --data synthetic or by gen-data)")
    d = SyntheticConfig()
    g.add_argument("--syn-classes", type=int, default=d.num_classes, help="number of action classes")
    g.add_argument("--syn-sequences", type=int, default=d.num_sequences, help="number of sequences")
    g.add_argument("--syn-min-length", type=int, default=d.min_length, help="shortest sequence (samples)")
    g.add_argument("--syn-max-length", type=int, default=d.max_length, help="longest sequence (samples)")
    g.add_argument("--syn-min-segment", type=int, default=d.min_segment, help="shortest action segment")
    g.add_argument("--syn-max-segment", type=int, default=d.max_segment, help="longest action segment")
    g.add_argument("--syn-noise", type=float, default=d.noise, help="std of additive Gaussian noise")
    g.add_argument("--syn-offset-scale", type=float, default=d.offset_scale,
                   help="spread of the per-class static offsets; small values make classes frequency-driven")
    g.add_argument("--syn-jitter", type=int, default=d.boundary_jitter,
                   help="label noise: max shift of each annotated boundary (samples)")
    g.add_argument("--syn-subjects", type=int, default=d.num_subjects, help="number of synthetic subjects")
    g.add_argument("--syn-seed", type=int, default=None, help="data seed (default: --seed)")


def _synthetic_config(args, **overrides) -> SyntheticConfig:
    seed = args.syn_seed if args.syn_seed is not None else args.seed
    kw = dict(num_classes=args.syn_classes, num_sequences=args.syn_sequences, min_length=args.syn_min_length,
              max_length=args.syn_max_length, min_segment=args.syn_min_segment, max_segment=args.syn_max_segment,
              noise=args.syn_noise, offset_scale=args.syn_offset_scale, boundary_jitter=args.syn_jitter,
              num_subjects=args.syn_subjects, seed=seed)
    kw.update(overrides)
    return SyntheticConfig(**kw)


def _load_trials(args) -> list[Trial]:
    if args.data == "synthetic":
        return generate_synthetic(_synthetic_config(args))
    return load_dataset(args.data)


def _held_out_synthetic(args) -> list[Trial]:
    """Fresh sequences of the same synthetic classes as the training set."""
    cfg = _synthetic_config(args)
    return generate_synthetic(_synthetic_config(args, seed=cfg.seed + 1000, pattern_seed=cfg.seed,
                                                num_sequences=max(1, cfg.num_sequences // 2)))


def _split_plan(value: str) -> SplitPlan:
    if value in ("loso", "none"):
        return SplitPlan(value)
    return load_split_plan(value)


# ---------------------------------------------------------------------------
# model / training flags

def _add_model_flags(p: argparse.ArgumentParser, default_kind: str | None = None) -> None:
    d = ModelConfig(kind="tcn", num_classes=2, in_channels=1, num_nodes=1)
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=KINDS, default=default_kind, required=default_kind is None,
                   help="architecture")
    g.add_argument("--layout", default=None,
                   help=f"skeleton layout: preset name ({', '.join(preset_names())}) or JSON file; "
                        "defaults to chain5 for synthetic data")
    g.add_argument("--filters", type=int, default=d.filters, help="feature maps per layer")
    g.add_argument("--kernel", type=int, default=d.kernel, help="temporal kernel size")
    g.add_argument("--layers", type=int, default=d.layers, help="layers per stage")
    g.add_argument("--refinement-stages", type=int, default=d.refinement_stages,
                   help="refinement stages of the multi-stage models")
    g.add_argument("--causal", action="store_true", help="causal temporal convolutions / forward-only LSTM")
    g.add_argument("--no-dilation", action="store_true", help="dilation 1 in every first-stage layer")
    g.add_argument("--lstm-hidden", type=int, default=d.lstm_hidden, help="LSTM hidden units per direction")
    g.add_argument("--lstm-layers", type=int, default=d.lstm_layers, help="stacked LSTM layers")
    g.add_argument("--mask-mode", choices=("elementwise", "right"), default=d.mask_mode,
                   help="how learnable edge masks enter the graph convolution")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d, dl = TrainConfig(), LossConfig()
    g = p.add_argument_group("optimisation")
    g.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    g.add_argument("--batch-size", type=int, default=d.batch_size, help="sequences per optimiser step")
    g.add_argument("--lr", type=float, default=d.learning_rate, help="Adam learning rate")
    g.add_argument("--smoothing-weight", type=float, default=dl.smoothing_weight,
                   help="weight of the truncated smoothing term")
    g.add_argument("--truncation", type=float, default=dl.truncation, help="clip of the smoothing term")


def _model_config(args, trials: list[Trial], seed: int) -> ModelConfig:
    T, N, C = trials[0].sequence.values.shape
    classes = max(len(trials[0].sequence.class_names), max(int(t.labels.max()) for t in trials) + 1)
    for t in trials:
        if t.sequence.values.shape[1:] != (N, C):
            raise ContractViolation(f"trial {t.trial_id} has shape {t.sequence.values.shape[1:]}, expected {(N, C)}")
    layout_name = args.layout or ("chain5" if args.data == "synthetic" else None)
    if args.model in GRAPH_KINDS and layout_name is None:
        raise ContractViolation(f"--model {args.model} needs --layout")
    layout = resolve_layout(layout_name).to_dict() if layout_name else None
    return ModelConfig(kind=args.model, num_classes=classes, in_channels=C, num_nodes=N, filters=args.filters,
                       kernel=args.kernel, layers=args.layers, refinement_stages=args.refinement_stages,
                       causal=args.causal, dilated=not args.no_dilation, lstm_hidden=args.lstm_hidden,
                       lstm_layers=args.lstm_layers, mask_mode=args.mask_mode, layout=layout, seed=seed)


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                       loss=LossConfig(smoothing_weight=args.smoothing_weight, truncation=args.truncation))


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    cfg = _synthetic_config(args)
    trials = generate_synthetic(cfg)
    paths = save_dataset(out, trials, binary=args.format == "binary")
    _write_manifest(out, args, synthetic=cfg.to_dict(), files=[p.name for p in paths])
    print(f"wrote {len(paths)} sequences to {out}")
    return 0


def _read_table(path: Path, skip_header: bool) -> np.ndarray:
    rows = []
    for lineno, text in enumerate(path.read_text().splitlines(), start=1):
        if not text.strip() or (skip_header and lineno == 1):
            continue
        try:
            rows.append([float(v) for v in text.replace(";", ",").split(",")])
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from exc
    if not rows:
        raise ParseError(path, None, "no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ParseError(path, None, f"row {i + 1} has {len(r)} columns, expected {width}")
    return np.array(rows)


def cmd_import(args) -> int:
    out = _out_dir(args)
    src = Path(args.input)
    table = _read_table(src, args.skip_header)
    if args.label_column is not None:
        if not 0 <= args.label_column < table.shape[1]:
            raise ContractViolation(f"--label-column {args.label_column} out of range")
        labels = table[:, args.label_column].astype(int)
        table = np.delete(table, args.label_column, axis=1)
    elif args.labels:
        labels = load_labels(args.labels)
    else:
        raise ContractViolation("give --labels or --label-column")
    if args.columns:
        cols = [int(c) for c in args.columns.split(",")]
        if max(cols) >= table.shape[1] or min(cols) < 0:
            raise ContractViolation(f"--columns index outside 0..{table.shape[1] - 1}")
        table = table[:, cols]
    if len(labels) != len(table):
        raise ContractViolation(f"{len(labels)} labels for {len(table)} samples")
    layout = resolve_layout(args.layout)
    N = layout.num_nodes
    meta = dict(subject_id=args.subject, trial_id=args.trial or src.stem,
                class_names=tuple(args.classes.split(",")) if args.classes else ())
    if args.recipe == "positions":
        if table.shape[1] != 3 * N:
            raise ContractViolation(f"positions recipe needs {3 * N} columns for {layout.name or 'layout'}, "
                                    f"got {table.shape[1]}")
        seq = compute_features(table.reshape(-1, N, 3), layout, args.sample_rate, **meta)
    else:
        if table.shape[1] % N:
            raise ContractViolation(f"{table.shape[1]} columns do not divide into {N} nodes")
        seq = SkeletonSequence(table.reshape(len(table), N, -1), args.sample_rate, **meta)
    if args.target_rate:
        seq, labels = resample(seq, labels, args.target_rate)
    if seq.class_names and labels.max() >= len(seq.class_names):
        raise ContractViolation(f"label {labels.max()} outside the {len(seq.class_names)} declared classes")
    path = save_dataset(out, [Trial(seq, labels)])[0]
    _write_manifest(out, args, files=[path.name], shape=list(seq.values.shape))
    print(f"wrote {path} with shape {seq.values.shape}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    trials = _load_trials(args)
    model_cfg = _model_config(args, trials, args.seed)
    results, manifest = run_experiment(trials, model_cfg, _train_config(args), _split_plan(args.split), out,
                                       folds_parallel=args.folds_parallel)
    if args.data == "synthetic":
        manifest.extra["synthetic"] = _synthetic_config(args).to_dict()
        manifest.write(out / "manifest.json")
    for res in results:
        s = res.report.summary()
        print(f"fold {res.index}: " + ", ".join(f"{k}={v:.4f}" for k, v in s.items() if k != "num_trials"))
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    trials = _load_trials(args)
    report = evaluate(model, trials, _thresholds(args.tau))
    csv_text = rows_to_csv(report.rows("eval"))
    (out / "metrics.csv").write_text(csv_text)
    sys.stdout.write(csv_text)
    summary = report.summary()
    print("mean: " + ", ".join(f"{k}={v:.4f}" for k, v in summary.items() if k != "num_trials"))
    if args.plot:
        from .plot import timeline_svg
        rows = [(t.trial_id, t.truth, t.predicted) for t in report.trials]
        Path(args.plot).write_text(timeline_svg(rows, trials[0].sequence.class_names))
    _write_manifest(out, args, model=model.config.to_dict(), summary=summary)
    return 0


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    trials = _load_trials(args)
    if args.data == "synthetic":
        train_set, test_set = trials, _held_out_synthetic(args)
    else:
        folds = make_splits(trials, _split_plan(args.split))
        if len(folds) != 1:
            raise ContractViolation("ablate needs a single train/test fold: use a fixed split plan or 'none'")
        train_set, test_set = folds[0]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    base = _model_config(args, trials, seeds[0])
    rows = ablate(base, args.axis, train_set, test_set, _train_config(args), seeds)
    table = ablation_table(rows)
    (out / f"ablation_{args.axis}.csv").write_text(table)
    sys.stdout.write(table)
    _write_manifest(out, args, model=base.to_dict(), rows=[vars(r) for r in rows])
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import CASES, TOLERANCE, run_gradchecks
    names = list(CASES) if args.all or not args.layer else args.layer
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise ContractViolation(f"unknown layer(s) {unknown}; choose from {list(CASES)}")
    out = _out_dir(args)
    results = run_gradchecks(names, instances=args.instances, base_seed=args.seed)
    for r in results:
        flag = "ok  " if r.passed else "FAIL"
        print(f"{flag} {r.name:<24} max rel. err {r.max_error:.3e} over {r.instances} instances ({r.seconds:.1f}s)")
    _write_manifest(out, args, tolerance=TOLERANCE, results=[vars(r) | {"passed": r.passed} for r in results])
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_metrics(args) -> int:
    pred, gt = load_labels(args.pred), load_labels(args.gt)
    entries = f1_report(pred, gt, _thresholds(args.tau))
    acc = sample_accuracy(pred, gt)
    rows = [{"fold": "", "trial": Path(args.gt).stem, "subject": "", **e.to_dict(), "accuracy": acc}
            for e in entries]
    text = rows_to_csv(rows, METRIC_COLUMNS)
    sys.stdout.write(text)
    for e in entries:
        print(f"F1@{e.threshold:g} = {e.f1:.4f}")
    print(f"accuracy = {acc:.4f}")
    out = _out_dir(args)
    (out / "metrics.csv").write_text(text)
    _write_manifest(out, args, accuracy=acc, f1={str(e.threshold): e.f1 for e in entries})
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgcn", allow_abbrev=False,
                                     description="Skeleton-based action segmentation: data, training, evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        p.set_defaults(func=func)
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUTPUT_ENV}/{name} or msgcn-out/{name})")
        return p

    p = command("gen-data", cmd_gen_data, "write a synthetic skeleton dataset")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--format", choices=("text", "binary"), default="text", help="sequence file format")
    _add_synthetic_flags(p)

    p = command("import", cmd_import, "convert one CSV export into the sequence format")
    p.add_argument("input", help="CSV file, one row per sample")
    p.add_argument("--recipe", choices=("positions", "features"), required=True,
                   help="positions: 3 columns (x,y,z) per node, features computed; "
                        "features: N*C ready-made channels per row, node-major")
    p.add_argument("--layout", required=True, help="layout preset or JSON file defining the nodes")
    p.add_argument("--columns", default=None,
                   help="comma-separated column indices to keep, in node-major order (applied after the label column is removed)")
    p.add_argument("--labels", default=None, help="label file, one integer per line")
    p.add_argument("--label-column", type=int, default=None, help="column of the CSV holding integer labels")
    p.add_argument("--skip-header", action="store_true", help="ignore the first line of the CSV")
    p.add_argument("--sample-rate", type=float, required=True, help="sample rate of the export (Hz)")
    p.add_argument("--target-rate", type=float, default=None, help="decimate to this rate (Hz), e.g. 50")
    p.add_argument("--subject", default="s00", help="subject id")
    p.add_argument("--trial", default=None, help="trial id (default: input file stem)")
    p.add_argument("--classes", default=None, help="comma-separated class names")

    p = command("train", cmd_train, "train and checkpoint a model on every fold")
    p.add_argument("--data", default="synthetic", help="dataset directory or 'synthetic'")
    p.add_argument("--split", default="loso", help="'loso', 'none' or a split-plan JSON file")
    p.add_argument("--seed", type=int, default=0, help="seed for initialisation and shuffling")
    p.add_argument("--folds-parallel", type=int, default=1, help="train this many folds concurrently")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_synthetic_flags(p)

    p = command("eval", cmd_eval, "print the per-trial metric table of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file written by train")
    p.add_argument("--data", default="synthetic", help="dataset directory or 'synthetic'")
    p.add_argument("--seed", type=int, default=0, help="seed of the synthetic data")
    p.add_argument("--tau", type=float, action="append", help="IoU threshold (repeatable; default 0.1 0.25 0.5)")
    p.add_argument("--plot", default=None, help="write an SVG timeline of ground truth vs prediction here")
    _add_synthetic_flags(p)

    p = command("ablate", cmd_ablate, "train paired variants and print a comparison table")
    p.add_argument("--axis", choices=sorted(ABLATION_AXES), required=True, help="what to ablate")
    p.add_argument("--data", default="synthetic",
                   help="dataset directory or 'synthetic' (a held-out synthetic set is drawn for testing)")
    p.add_argument("--split", default="none", help="fixed split-plan JSON or 'none' (directory data only)")
    p.add_argument("--seed", type=int, default=0, help="seed when --seeds is not given")
    p.add_argument("--seeds", default=None, help="comma-separated seeds, one paired run each")
    _add_model_flags(p, default_kind="ms-gcn")
    _add_train_flags(p)
    _add_synthetic_flags(p)

    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient checks; nonzero exit on violation")
    p.add_argument("--all", action="store_true", help="check every layer and the end-to-end loss")
    p.add_argument("--layer", action="append", help="check only this case (repeatable)")
    p.add_argument("--instances", type=int, default=20, help="random instances per case")
    p.add_argument("--seed", type=int, default=0, help="first instance seed")

    p = command("metrics", cmd_metrics, "score a prediction label file against ground truth")
    p.add_argument("pred", help="predicted labels, one integer per line")
    p.add_argument("gt", help="ground-truth labels, one integer per line")
    p.add_argument("--tau", type=float, action="append", help="IoU threshold (repeatable; default 0.1 0.25 0.5)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ContractViolation, *CONTRACT_ERRORS) as exc:
        print(f"msgcn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
