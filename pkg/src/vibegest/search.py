"""Joint grid search over pre-processing and model hyperparameters.

Every enumerated configuration is either evaluated (5-fold pooled
session-split CV, mean test accuracy) or journaled as skipped with a
machine-readable reason. The leaderboard ranks by mean accuracy descending
with ties broken by smaller parameter count. A JSONL journal makes runs
resumable: an interrupted search continues where it stopped and yields the
same leaderboard as an uninterrupted one.

Pre-processed window sets are cached per (band, window length, decimation)
triple, so the full 1440-configuration space touches only 36 dataset
materializations.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import WindowSet, make_splits, read_manifest, manifest_keys
from .errors import ConfigError
from .model import SepCnnConfig, build_model, count_parameters, validate_input_length
from .pipeline import (DownsampleSection, FilterSection, PipelineConfig,
                       WindowSection, build_windows)
from .train import TrainConfig, train_fold

Band = tuple[float, float] | None


@dataclass(frozen=True)
class TrialConfig:
    band: Band
    downsample: int
    window_ms: float
    kernel: int
    blocks: int
    width: int
    dropout: float

    def key(self) -> str:
        band = "none" if self.band is None else f"{self.band[0]:g}-{self.band[1]:g}"
        return (f"bp={band}|ds={self.downsample}|win={self.window_ms:g}"
                f"|k={self.kernel}|bw={self.blocks}x{self.width}|do={self.dropout:g}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SearchSpace:
    bandpass: tuple = (None, (225.0, 375.0), (300.0, 450.0))
    downsample: tuple = (1, 2, 5, 10)
    window_ms: tuple = (1000.0, 1250.0, 1500.0)
    kernel: tuple = (9, 15, 25, 33, 39)
    blocks_width: tuple = ((4, 16), (4, 32), (6, 16), (6, 32))
    dropout: tuple = (0.2, 0.3)

    def __post_init__(self):
        for name in ("bandpass", "downsample", "window_ms", "kernel",
                     "blocks_width", "dropout"):
            if not getattr(self, name):
                raise ConfigError(f"search axis {name!r} is empty")
        for k in self.kernel:
            if k % 2 != 1:
                raise ConfigError(f"kernel sizes must be odd, got {k}")
        for d in self.downsample:
            if int(d) != d or d < 1:
                raise ConfigError(f"downsample factors must be integers >= 1, got {d}")

    def size(self) -> int:
        return (len(self.bandpass) * len(self.downsample) * len(self.window_ms)
                * len(self.kernel) * len(self.blocks_width) * len(self.dropout))


def enumerate_configs(space: SearchSpace) -> list[TrialConfig]:
    """Deterministic lexicographic order over the axes as declared."""
    out = []
    for band, ds, win, k, (blocks, width), do in itertools.product(
            space.bandpass, space.downsample, space.window_ms,
            space.kernel, space.blocks_width, space.dropout):
        out.append(TrialConfig(
            band=None if band is None else (float(band[0]), float(band[1])),
            downsample=int(ds), window_ms=float(win), kernel=int(k),
            blocks=int(blocks), width=int(width), dropout=float(do)))
    return out


def parse_space_file(path) -> SearchSpace:
    """Read a key = value search-space file.

    One axis per line, values comma-separated; bands as "low-high" or
    "none", block/width pairs as "4x16". Missing axes keep their full
    default range; unknown keys are rejected.
    """
    fields = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = values'")
        key, _, value = line.partition("=")
        key = key.strip()
        values = [v.strip() for v in value.split(",") if v.strip()]
        if key == "bandpass":
            fields[key] = tuple(
                None if v.lower() == "none"
                else tuple(float(x) for x in v.split("-"))
                for v in values)
        elif key == "downsample":
            fields[key] = tuple(int(v) for v in values)
        elif key == "window_ms":
            fields[key] = tuple(float(v) for v in values)
        elif key == "kernel":
            fields[key] = tuple(int(v) for v in values)
        elif key == "blocks_width":
            fields[key] = tuple(
                tuple(int(x) for x in v.lower().split("x")) for v in values)
        elif key == "dropout":
            fields[key] = tuple(float(v) for v in values)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown search axis {key!r}")
    return SearchSpace(**fields)


@dataclass
class SearchResult:
    index: int
    config: TrialConfig
    mean_accuracy: float
    std_accuracy: float
    param_count: int
    rank: int = 0


def rank_results(results: list[SearchResult]) -> list[SearchResult]:
    """Total order: accuracy descending, then fewer parameters, then index."""
    ordered = sorted(results,
                     key=lambda r: (-r.mean_accuracy, r.param_count, r.index))
    for rank, r in enumerate(ordered, 1):
        r.rank = rank
    return ordered


def _variant_key(config: TrialConfig) -> str:
    band = "none" if config.band is None else f"{config.band[0]:g}-{config.band[1]:g}"
    return f"bp{band}_win{config.window_ms:g}_ds{config.downsample}"


def _materialize_variant(manifest_path, annotations, config: TrialConfig,
                         variants_dir: Path, pre_onset_frac: float,
                         gestures: int) -> Path:
    path = variants_dir / f"{_variant_key(config)}.npz"
    if path.exists():
        return path
    pcfg = PipelineConfig(
        filter=FilterSection(enabled=config.band is not None,
                             placement="stream",
                             low_hz=config.band[0] if config.band else 225.0,
                             high_hz=config.band[1] if config.band else 375.0),
        window=WindowSection(window_ms=config.window_ms,
                             pre_onset_frac=pre_onset_frac),
        normalize=True,
        downsample=DownsampleSection(factor=config.downsample),
    )
    ws = build_windows(manifest_path, annotations, pcfg, gestures=gestures)
    variants_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    ws.save(tmp)
    tmp.replace(path)
    return path


def _model_config(config: TrialConfig, in_channels: int,
                  num_classes: int) -> SepCnnConfig:
    return SepCnnConfig(
        in_channels=in_channels, num_blocks=config.blocks,
        block_width=config.width, kernel_size=config.kernel,
        dropout_p=config.dropout, num_classes=num_classes,
    )


def _fold_seed(base_seed: int, index: int, fold: int) -> int:
    return int(np.random.default_rng(
        np.random.SeedSequence([base_seed, index, fold])).integers(2 ** 31))


def _evaluate_trial(args) -> dict:
    (index, config, variant_path, plan_doc, train_cfg_doc) = args
    from .dataset import SplitPlan

    windows = WindowSet.load(variant_path)
    plan = SplitPlan.from_dict(plan_doc)
    base_cfg = TrainConfig(**train_cfg_doc)
    model_cfg = _model_config(config, windows.samples.shape[1],
                              len(windows.classes))
    try:
        validate_input_length(model_cfg, windows.samples.shape[2])
    except ConfigError as exc:
        return {"index": index, "key": config.key(), "status": "skipped",
                "reason": str(exc)}
    accs = []
    for f, fold in enumerate(plan.folds):
        fold_cfg = dataclasses.replace(
            base_cfg, seed=_fold_seed(base_cfg.seed, index, f))
        result = train_fold(model_cfg, windows, fold, fold_cfg)
        accs.append(result.metrics.accuracy)
    params = count_parameters(build_model(model_cfg, seed=0))
    return {
        "index": index, "key": config.key(), "status": "done",
        "mean_accuracy": float(np.mean(accs)),
        "std_accuracy": float(np.std(accs)),
        "param_count": params,
    }


def _read_journal(path: Path) -> dict[int, dict]:
    records = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                records[rec["index"]] = rec
    return records


def run_search(space: SearchSpace, manifest_path, out_dir,
               annotations="truth", cv_folds: int = 5,
               train_cfg: TrainConfig = TrainConfig(),
               pre_onset_frac: float = 0.1, gestures: int = 6,
               budget: int | None = None, max_new: int | None = None,
               jobs: int = 1) -> list[SearchResult]:
    """Evaluate the space (or a seeded ``budget`` subset); resume from the journal.

    ``max_new`` caps how many configurations this call evaluates, leaving the
    rest for a later resume. Returns the ranked leaderboard of everything
    completed so far and writes leaderboard.csv / leaderboard.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    journal_path = out_dir / "journal.jsonl"

    configs = enumerate_configs(space)
    selected = list(range(len(configs)))
    if budget is not None and budget < len(selected):
        rng = np.random.default_rng(
            np.random.SeedSequence([train_cfg.seed, 0xB7D6E7]))
        selected = sorted(
            int(i) for i in rng.choice(len(configs), size=budget, replace=False))

    records = _read_journal(journal_path)
    pending = [i for i in selected if i not in records]
    if max_new is not None:
        pending = pending[:max_new]

    manifest = read_manifest(manifest_path)
    plan = make_splits(manifest_keys(manifest), "POOLED", n_folds=cv_folds)
    plan_doc = plan.to_dict()
    train_doc = dataclasses.asdict(train_cfg)

    variants_dir = out_dir / "variants"
    tasks = []
    for i in pending:
        variant = _materialize_variant(
            manifest_path, annotations, configs[i], variants_dir,
            pre_onset_frac, gestures)
        tasks.append((i, configs[i], variant, plan_doc, train_doc))

    def _record(rec: dict) -> None:
        records[rec["index"]] = rec
        with open(journal_path, "a") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")

    if jobs > 1 and len(tasks) > 1:
        import multiprocessing as mp

        with ProcessPoolExecutor(max_workers=jobs,
                                 mp_context=mp.get_context("spawn")) as pool:
            for rec in pool.map(_evaluate_trial, tasks):
                _record(rec)
    else:
        for task in tasks:
            _record(_evaluate_trial(task))

    results = [
        SearchResult(index=i, config=configs[i],
                     mean_accuracy=rec["mean_accuracy"],
                     std_accuracy=rec["std_accuracy"],
                     param_count=rec["param_count"])
        for i, rec in sorted(records.items())
        if rec["status"] == "done" and i in set(selected)
    ]
    leaderboard = rank_results(results)
    _write_leaderboard(out_dir, leaderboard)
    return leaderboard


def _write_leaderboard(out_dir: Path, leaderboard: list[SearchResult]) -> None:
    lines = ["rank,key,mean_accuracy,std_accuracy,param_count"]
    for r in leaderboard:
        lines.append(f"{r.rank},{r.config.key()},{r.mean_accuracy:.6f},"
                     f"{r.std_accuracy:.6f},{r.param_count}")
    (out_dir / "leaderboard.csv").write_text("\n".join(lines) + "\n")
    doc = [
        {"rank": r.rank, "key": r.config.key(), "config": r.config.to_dict(),
         "mean_accuracy": r.mean_accuracy, "std_accuracy": r.std_accuracy,
         "param_count": r.param_count}
        for r in leaderboard
    ]
    (out_dir / "leaderboard.json").write_text(json.dumps(doc, indent=1))
