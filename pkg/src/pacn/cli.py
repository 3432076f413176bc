"""Command-line front end.

Every subcommand is deterministic for fixed inputs and seed: rerunning a
command produces byte-identical artifacts. Exit code 0 on success, 1 on any
runtime failure (with a diagnostic on stderr), 2 for bad command lines
(argparse's own convention).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from importlib import resources

import numpy as np

from .audio import read_wav, write_wav
from .augment import augment_clip, pitch_shift
from .errors import IngestionError, PacnError, UsageError
from .evalstats import (draw_subsets, evaluate, format_eval_text, predict,
                        rank_report, subset_accuracy_row, write_eval_csv,
                        write_rank_csv, write_rank_svg)
from .manifest import parse_manifest
from .model import PacnConfig, PacnModel
from .profiler import profile, verify_against_runtime
from .seeding import PURPOSE_AUGMENT, derive_rng
from .synth import SynthSpec, generate_synth_dataset
from .train import (Dataset, TrainConfig, estimate_dataset_correction,
                    exclude_device, extract_features, load_dataset,
                    split_train_val, train_student_kd, train_teacher,
                    write_metrics)

log = logging.getLogger(__name__)


def _packaged_config(name: str) -> PacnConfig:
    text = (resources.files("pacn") / "configs" / name).read_text()
    return PacnConfig.from_json(text)


def _load_clips(manifest_path, threads: int, correction=None) -> Dataset:
    return load_dataset(manifest_path, correction=correction, threads=threads)


def _prepare_training(args, cfg: TrainConfig):
    """Load, optionally exclude a device, estimate correction, split."""
    rows = parse_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    clips = [read_wav(os.path.join(base, r.filename), r.label_index,
                      r.device_id, r.city) for r in rows]
    labels = np.array([r.label_index for r in rows], dtype=np.int64)
    devices = tuple(r.device_id for r in rows)
    names = tuple(r.filename for r in rows)

    keep = np.arange(len(rows))
    if args.exclude_device is not None:
        mask = np.array([d != args.exclude_device for d in devices])
        if mask.all():
            raise UsageError(f"no clips recorded by device "
                             f"{args.exclude_device!r}")
        if not mask.any():
            raise UsageError(f"all clips recorded by device "
                             f"{args.exclude_device!r}; nothing left to train on")
        keep = np.flatnonzero(mask)

    kept_clips = [clips[i] for i in keep]
    correction = None
    if cfg.augment.spectrum_correction:
        correction = estimate_dataset_correction(kept_clips)
    ds = Dataset(clips=kept_clips,
                 features=extract_features(kept_clips, correction,
                                           args.threads),
                 labels=labels[keep],
                 devices=tuple(devices[i] for i in keep),
                 names=tuple(names[i] for i in keep))
    train_ds, val_ds = split_train_val(ds, args.val_fraction, cfg.seed)
    if len(val_ds) == 0:
        val_ds = None
    return train_ds, val_ds, correction


def _finish_training(args, result):
    result.model.save(args.out)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    write_metrics(metrics_path, result)
    last = result.metrics[-1]
    final = f"train_acc {last.train_acc:.4f}"
    if last.val_acc is not None:
        final += f", val_acc {last.val_acc:.4f}"
    print(f"saved {args.out} ({result.model.num_params()} params); {final}")
    return 0


# -- subcommand handlers ---------------------------------------------------------


def cmd_synth_data(args) -> int:
    spec = SynthSpec.from_file(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    rows = generate_synth_dataset(spec, args.out)
    print(f"wrote {len(rows)} clips under {args.out} "
          f"({spec.classes} classes x {spec.clips_per_class} clips, "
          f"{spec.devices} devices)")
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_train_teacher(args) -> int:
    cfg = _train_config(args)
    model_cfg = (PacnConfig.from_file(args.model_config)
                 if args.model_config else _packaged_config("teacher.json"))
    train_ds, val_ds, correction = _prepare_training(args, cfg)
    result = train_teacher(model_cfg, train_ds, cfg, val_ds, correction)
    return _finish_training(args, result)


def cmd_train_student(args) -> int:
    cfg = _train_config(args)
    model_cfg = (PacnConfig.from_file(args.model_config)
                 if args.model_config else _packaged_config("student.json"))
    teacher = PacnModel.load(args.teacher) if args.teacher else None
    train_ds, val_ds, correction = _prepare_training(args, cfg)
    result = train_student_kd(model_cfg, teacher, train_ds, cfg, val_ds,
                              correction)
    return _finish_training(args, result)


def cmd_eval(args) -> int:
    model = PacnModel.load(args.ckpt)
    correction = None
    if not args.no_correction:
        rows = parse_manifest(args.manifest)
        base = os.path.dirname(os.path.abspath(args.manifest))
        clips = [read_wav(os.path.join(base, r.filename), r.label_index,
                          r.device_id, r.city) for r in rows]
        correction = estimate_dataset_correction(clips)
    ds = _load_clips(args.manifest, args.threads, correction)
    unseen = ()
    if args.held_out_device is not None:
        if args.held_out_device not in ds.devices:
            raise UsageError(f"device {args.held_out_device!r} does not appear "
                             "in the manifest")
        unseen = (args.held_out_device,)
    result = evaluate(model, ds, unseen_devices=unseen)
    print(format_eval_text(result))
    if args.report:
        write_eval_csv(args.report, result)
    if args.subset_scores:
        seed = args.seed if args.seed is not None else 0
        subsets = draw_subsets(len(ds), args.subsets, args.fraction, seed)
        correct = predict(model, ds.features) == ds.labels
        row = subset_accuracy_row(correct, subsets)
        with open(args.subset_scores, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method"]
                            + [f"subset_{j + 1}" for j in range(len(row))])
            writer.writerow([args.method_name] + [repr(float(v)) for v in row])
    return 0


def cmd_profile(args) -> int:
    config = PacnConfig.from_file(args.config)
    report = profile(config)
    print(report.format_text())
    if args.csv:
        report.write_csv(args.csv)
    if args.check:
        check = verify_against_runtime(config)
        print(f"runtime multiply tally: {check.runtime_macs} "
              f"(table: {check.kernel_macs})")
        if not check.matched:
            print("error: runtime tally disagrees with the table",
                  file=sys.stderr)
            return 1
    return 0


def _read_scores_csv(path):
    names, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if lineno == 1 and row[0] == "method":
                continue
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from exc
            if not values:
                raise IngestionError(f"{path}:{lineno}: no scores in row")
            if rows and len(values) != len(rows[0]):
                raise IngestionError(f"{path}:{lineno}: expected "
                                     f"{len(rows[0])} scores, got {len(values)}")
            names.append(row[0])
            rows.append(values)
    if len(rows) < 2:
        raise UsageError(f"{path}: need at least 2 method rows, got {len(rows)}")
    return np.array(rows), names


def cmd_significance(args) -> int:
    scores, names = _read_scores_csv(args.scores)
    report = rank_report(scores, names, alpha=args.alpha)
    prefix = args.out or os.path.splitext(args.scores)[0] + "_ranks"
    write_rank_csv(prefix + ".csv", report)
    write_rank_svg(prefix + ".svg", report)
    print(f"friedman statistic: {report.statistic:.6g} "
          f"({len(names)} methods, {report.n_subsets} subsets)")
    print(f"critical distance (alpha={report.alpha:g}): {report.cd:.6g}")
    order = np.argsort(report.avg_ranks, kind="stable")
    for i in order:
        print(f"  {names[i]}: avg rank {report.avg_ranks[i]:.4f}")
    print(f"wrote {prefix}.csv and {prefix}.svg")
    return 0


def cmd_augment_preview(args) -> int:
    rows = parse_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(args.out, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    count = min(args.count, len(rows))
    written = []
    for r in rows[:count]:
        clip = read_wav(os.path.join(base, r.filename), r.label_index,
                        r.device_id, r.city)
        stem = os.path.splitext(os.path.basename(r.filename))[0]
        write_wav(os.path.join(args.out, f"{stem}_orig.wav"), clip.samples)
        pool = [read_wav(os.path.join(base, q.filename), q.label_index,
                         q.device_id, q.city)
                for q in rows if q.scene_label == r.scene_label][:8]
        rng = derive_rng(seed, PURPOSE_AUGMENT, 0, r.filename)
        shifted = pitch_shift(clip, 1.05)
        write_wav(os.path.join(args.out, f"{stem}_pitch105.wav"),
                  shifted.samples)
        out = augment_clip(clip, pool, rng, TrainConfig().augment)
        write_wav(os.path.join(args.out, f"{stem}_policy.wav"), out.samples)
        written.append(stem)
    print(f"wrote {3 * len(written)} preview files under {args.out}")
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacn",
        description="Low-complexity acoustic scene classification toolkit")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the seed from config/spec files")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for feature extraction")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render a synthetic dataset")
    p.add_argument("--spec", required=True, help="SynthSpec JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_data)

    for name, handler, needs_teacher in (
            ("train-teacher", cmd_train_teacher, False),
            ("train-student", cmd_train_student, True)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a manifest")
        p.add_argument("--config", required=True, help="TrainConfig JSON path")
        p.add_argument("--model-config", default=None,
                       help="model config JSON (default: packaged)")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True, help="checkpoint output path")
        p.add_argument("--metrics", default=None,
                       help="metrics CSV path (default: <out>.metrics.csv)")
        p.add_argument("--val-fraction", type=float, default=0.2)
        p.add_argument("--exclude-device", default=None,
                       help="drop this device's clips from training")
        if needs_teacher:
            p.add_argument("--teacher", default=None,
                           help="teacher checkpoint (required for kd_lambda < 1)")
        p.set_defaults(func=handler)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--held-out-device", default=None,
                   help="mark this device as unseen in the report")
    p.add_argument("--report", default=None, help="write a CSV report here")
    p.add_argument("--no-correction", action="store_true",
                   help="skip manifest-estimated spectrum correction")
    p.add_argument("--subset-scores", default=None,
                   help="write a per-subset accuracy row (significance input)")
    p.add_argument("--method-name", default="model")
    p.add_argument("--subsets", type=int, default=20)
    p.add_argument("--fraction", type=float, default=0.05)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="parameter/multiply table for a config")
    p.add_argument("--config", required=True, help="model config JSON path")
    p.add_argument("--csv", default=None)
    p.add_argument("--check", action="store_true",
                   help="also compare against a counted forward pass")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("significance", help="rank analysis of a score matrix")
    p.add_argument("--scores", required=True,
                   help="CSV: method name then one accuracy per subset")
    p.add_argument("--alpha", type=float, default=0.05, choices=[0.05, 0.10])
    p.add_argument("--out", default=None,
                   help="output prefix (default: <scores>_ranks)")
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("augment-preview",
                       help="write before/after augmentation examples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="augment_preview")
    p.add_argument("--count", type=int, default=4)
    p.set_defaults(func=cmd_augment_preview)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(message)s")
    logging.getLogger().setLevel(level)
    try:
        return args.func(args)
    except PacnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
