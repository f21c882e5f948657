"""Command-line surface: synth | annotate | window | train | eval | search | report."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import (WindowSet, gesture_classes, make_splits,
                      read_manifest)
from .detect import annotate_corpus, apply_corrections, save_annotation
from .errors import ConfigError, VibegestError
from .model import load_checkpoint, save_checkpoint
from .pipeline import PipelineConfig, build_windows, load_pipeline_config
from .search import parse_space_file, run_search
from .synth import SynthConfig, generate_corpus
from .train import (TrainConfig, evaluate, summarize_folds, train_fold,
                    write_run_report)


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_pipeline_config(args.config)
    return PipelineConfig()


def _train_config(pcfg: PipelineConfig, args) -> TrainConfig:
    cfg = pcfg.train
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    return cfg


def _cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed, snr_db=args.snr_db,
                      reps_per_class=args.reps_per_class)
    manifest = generate_corpus(cfg, args.participants, args.sessions, args.out)
    print(f"wrote corpus manifest {manifest}")
    return 0


def _cmd_annotate(args) -> int:
    pcfg = _load_config(args)
    manifest_path = Path(args.data)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    paths = [base / entry["path"] for entry in manifest["recordings"]]
    protocols = {entry["id"]: entry.get("protocol")
                 for entry in manifest["recordings"]
                 if entry.get("protocol") is not None}
    annotations, report = annotate_corpus(
        paths, pcfg.detector, expected_count=args.expected_count,
        protocols=protocols)

    if args.corrections:
        doc = json.loads(Path(args.corrections).read_text())
        for corr in doc.get("corrections", []):
            rec_id = corr["recording"]
            if rec_id not in annotations:
                raise ConfigError(f"correction targets unknown recording {rec_id!r}")
            annotations[rec_id] = apply_corrections(
                annotations[rec_id], corr, lockout_ms=pcfg.detector.lockout_ms)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec_id, ann in annotations.items():
        save_annotation(ann, out / f"{rec_id}.events.json")
    (out / "automation_report.json").write_text(
        json.dumps(report.to_dict(), indent=1, sort_keys=True))
    print(f"annotated {report.total_files} files, "
          f"automation rate {report.automation_rate:.1%}; "
          f"{len(report.flagged)} flagged for review")
    return 0


def _cmd_window(args) -> int:
    pcfg = _load_config(args)
    ws = build_windows(args.data, args.annotations, pcfg, gestures=args.gestures)
    ws.save(args.out)
    print(f"wrote {len(ws)} windows ({ws.samples.shape[1]} ch x "
          f"{ws.samples.shape[2]} samples) to {args.out}")
    return 0


def _train_one_fold(task):
    (fold_dir, model_doc, fold_doc, train_doc, windows_path, threads) = task
    if threads is not None:
        _limit_threads(threads)
    from .dataset import Fold
    from .model import SepCnnConfig

    windows = WindowSet.load(windows_path)
    fold = Fold(train=tuple(map(tuple, fold_doc["train"])),
                test=tuple(map(tuple, fold_doc["test"])))
    result = train_fold(SepCnnConfig(**model_doc), windows, fold,
                        TrainConfig(**train_doc))
    fold_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, fold_dir / "checkpoint.sepw")
    (fold_dir / "metrics.json").write_text(
        json.dumps(result.metrics.to_dict(), indent=1, sort_keys=True))
    (fold_dir / "epoch_losses.json").write_text(json.dumps(result.epoch_losses))
    return result.metrics


_thread_limiter = None


def _limit_threads(n: int) -> None:
    # fold workers get one kernel thread and one BLAS thread each; fold-level
    # parallelism beats intra-kernel threading on small hosts
    global _thread_limiter
    try:
        import numba

        numba.set_num_threads(max(1, n))
    except ImportError:
        pass
    try:
        from threadpoolctl import threadpool_limits

        _thread_limiter = threadpool_limits(limits=max(1, n))
    except ImportError:
        pass


def _cmd_train(args) -> int:
    pcfg = _load_config(args)
    train_cfg = _train_config(pcfg, args)
    windows = WindowSet.load(args.windows)
    if args.gestures != len(windows.classes):
        windows = _restrict_gestures(windows, args.gestures)
        restricted_path = Path(args.out) / "windows_restricted.npz"
        Path(args.out).mkdir(parents=True, exist_ok=True)
        windows.save(restricted_path)
        windows_path = restricted_path
    else:
        windows_path = Path(args.windows)

    model_cfg = dataclasses.replace(
        pcfg.model, in_channels=windows.samples.shape[1],
        num_classes=len(windows.classes))
    plan = make_splits(sorted(windows.keys()), args.split, n_folds=args.folds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split_plan.json").write_text(json.dumps(plan.to_dict(), indent=1))

    seeds = [int(np.random.default_rng(
        np.random.SeedSequence([train_cfg.seed, i])).integers(2 ** 31))
        for i in range(len(plan.folds))]

    tasks, done_metrics = [], {}
    for i, fold in enumerate(plan.folds):
        fold_dir = out / f"fold{i:02d}"
        if (fold_dir / "metrics.json").exists():
            done_metrics[i] = _read_fold_metrics(fold_dir)
            print(f"fold {i}: already complete, skipping")
            continue
        fold_doc = {"train": [list(k) for k in fold.train],
                    "test": [list(k) for k in fold.test]}
        train_doc = dataclasses.asdict(
            dataclasses.replace(train_cfg, seed=seeds[i]))
        threads = 1 if args.jobs > 1 else None
        tasks.append((i, (fold_dir, dataclasses.asdict(model_cfg), fold_doc,
                          train_doc, windows_path, threads)))

    if args.jobs > 1 and len(tasks) > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        # spawn: forking a process with live numba/BLAS thread pools hangs
        with ProcessPoolExecutor(max_workers=args.jobs,
                                 mp_context=mp.get_context("spawn")) as pool:
            for (i, _), metrics in zip(tasks, pool.map(
                    _train_one_fold, [t for _, t in tasks])):
                done_metrics[i] = metrics
                print(f"fold {i}: accuracy {metrics.accuracy:.3f}")
    else:
        for i, task in tasks:
            metrics = _train_one_fold(task)
            done_metrics[i] = metrics
            print(f"fold {i}: accuracy {metrics.accuracy:.3f}")

    ordered = [done_metrics[i] for i in sorted(done_metrics)]
    if len(ordered) != len(plan.folds):
        print(f"error: only {len(ordered)} of {len(plan.folds)} folds completed",
              file=sys.stderr)
        return 1
    config_doc = {"pipeline": dataclasses.asdict(pcfg),
                  "split": args.split, "seed": train_cfg.seed}
    write_run_report(out, args.split, ordered, config_doc)
    summary = summarize_folds(ordered)
    print(f"{args.split}: accuracy {summary['accuracy_mean']:.3f} "
          f"+- {summary['accuracy_std']:.3f} over {summary['folds']} folds")
    return 0


def _read_fold_metrics(fold_dir: Path):
    from .train import FoldMetrics

    doc = json.loads((fold_dir / "metrics.json").read_text())
    return FoldMetrics(
        accuracy=doc["accuracy"], macro_precision=doc["macro_precision"],
        confusion=np.asarray(doc["confusion"], dtype=np.int64),
        param_count=doc["param_count"])


def _restrict_gestures(windows: WindowSet, gestures: int) -> WindowSet:
    classes = gesture_classes(gestures)
    index = {c: i for i, c in enumerate(classes)}
    keep = np.array([windows.classes[i] in index for i in windows.label_idx])
    if not keep.any():
        raise ConfigError("no windows left after restricting the gesture set")
    remap = np.array([index.get(c, -1) for c in windows.classes], dtype=np.int16)
    return WindowSet(
        samples=windows.samples[keep],
        label_idx=remap[windows.label_idx[keep]],
        participant=windows.participant[keep],
        session=windows.session[keep],
        onset=windows.onset[keep],
        classes=classes,
    )


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    windows = WindowSet.load(args.windows)
    if args.gestures != len(windows.classes):
        windows = _restrict_gestures(windows, args.gestures)
    if args.split:
        plan = make_splits(sorted(windows.keys()), args.split, n_folds=args.folds)
        if not (0 <= args.fold < len(plan.folds)):
            raise ConfigError(
                f"fold {args.fold} out of range for {len(plan.folds)} folds")
        windows = windows.subset_by_keys(plan.folds[args.fold].test)
    metrics = evaluate(model, windows)
    doc = metrics.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True))
    print(f"accuracy {metrics.accuracy:.3f}, "
          f"macro precision {metrics.macro_precision:.3f} on {len(windows)} windows")
    return 0


def _cmd_search(args) -> int:
    pcfg = _load_config(args)
    train_cfg = _train_config(pcfg, args)
    space = parse_space_file(args.space) if args.space else None
    from .search import SearchSpace

    leaderboard = run_search(
        space or SearchSpace(), args.data, args.out,
        annotations=args.annotations, cv_folds=args.folds,
        train_cfg=train_cfg, gestures=args.gestures,
        budget=args.budget, max_new=args.max_new, jobs=args.jobs)
    for r in leaderboard[:10]:
        print(f"#{r.rank:<3} {r.config.key():<55} "
              f"acc {r.mean_accuracy:.3f} +- {r.std_accuracy:.3f} "
              f"params {r.param_count}")
    print(f"leaderboard written to {Path(args.out) / 'leaderboard.csv'}")
    return 0


def _cmd_report(args) -> int:
    if args.plot_signal:
        return _plot_signal(args)
    rows = []
    for run in args.runs:
        doc = json.loads((Path(run) / "metrics.json").read_text())
        summary = doc["summary"]
        gestures = len(doc["per_fold"][0]["per_class_precision"])
        rows.append((doc["method"], gestures, summary))
    header = f"{'split':<8} {'gestures':<9} {'accuracy':<18} {'precision':<18}"
    print(header)
    print("-" * len(header))
    lines = ["split,gestures,accuracy_mean,accuracy_std,precision_mean,precision_std"]
    for method, gestures, s in rows:
        print(f"{method:<8} {gestures:<9} "
              f"{s['accuracy_mean']:.3f} +- {s['accuracy_std']:.3f}      "
              f"{s['precision_mean']:.3f} +- {s['precision_std']:.3f}")
        lines.append(f"{method},{gestures},{s['accuracy_mean']:.6f},"
                     f"{s['accuracy_std']:.6f},{s['precision_mean']:.6f},"
                     f"{s['precision_std']:.6f}")
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"report written to {args.out}")
    return 0


def _plot_signal(args) -> int:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("error: signal plots require matplotlib (pip install vibegest[plots])",
              file=sys.stderr)
        return 2
    from .dataset import load_recording
    from .dsp import FilterSpec, design_bandpass, filter_block

    rec = load_recording(args.plot_signal)
    band = FilterSpec(args.band[0], args.band[1], rec.sample_rate_hz)
    filtered = filter_block(design_bandpass(band), rec.samples)
    t = np.arange(rec.samples.shape[1]) / rec.sample_rate_hz
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(10, 6))
    axes[0].plot(t, rec.samples[args.channel], lw=0.5)
    axes[0].set_ylabel("raw [V]")
    axes[1].plot(t, filtered[args.channel], lw=0.5, color="tab:orange")
    axes[1].set_ylabel(f"band-pass {args.band[0]:g}-{args.band[1]:g} Hz [V]")
    axes[1].set_xlabel("time [s]")
    fig.suptitle(f"{Path(args.plot_signal).name}, channel {args.channel}")
    fig.tight_layout()
    fig.savefig(args.out or "signal.png", dpi=150)
    print(f"plot written to {args.out or 'signal.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vibegest",
        description="Surface-vibration gesture recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--participants", type=int, default=2)
    p.add_argument("--sessions", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--reps-per-class", type=int, default=10)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("annotate", help="detect events over a corpus")
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--out", required=True, help="annotation output directory")
    p.add_argument("--config")
    p.add_argument("--expected-count", type=int)
    p.add_argument("--corrections", help="correction manifest to merge")
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("window", help="materialize model-ready windows")
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--annotations", required=True,
                   help="annotation directory, or 'truth' for ground truth")
    p.add_argument("--out", required=True, help="window store (.npz)")
    p.add_argument("--config")
    p.add_argument("--gestures", type=int, choices=(4, 6), default=6)
    p.set_defaults(func=_cmd_window)

    p = sub.add_parser("train", help="train one model per fold of a split")
    p.add_argument("--windows", required=True)
    p.add_argument("--split", required=True,
                   choices=("PS", "LOSO", "AOS", "POOLED"))
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--folds", type=int, default=5,
                   help="session folds for PS/POOLED")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--gestures", type=int, choices=(4, 6), default=6)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--split", choices=("PS", "LOSO", "AOS", "POOLED"))
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--gestures", type=int, choices=(4, 6), default=6)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("search", help="grid search over pipeline and model")
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--annotations", default="truth")
    p.add_argument("--out", required=True)
    p.add_argument("--space", help="search-space file (defaults to full grid)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--budget", type=int, help="evaluate a seeded random subset")
    p.add_argument("--max-new", type=int,
                   help="evaluate at most this many configs, then stop")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--gestures", type=int, choices=(4, 6), default=6)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("report", help="summary tables and signal plots")
    p.add_argument("--runs", nargs="*", default=[],
                   help="train output directories to tabulate")
    p.add_argument("--out")
    p.add_argument("--plot-signal", help="recording file to plot raw vs filtered")
    p.add_argument("--band", nargs=2, type=float, default=(225.0, 375.0))
    p.add_argument("--channel", type=int, default=0)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VibegestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
