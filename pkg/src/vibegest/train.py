"""AdamW optimizer, fold-wise training loop, and evaluation metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Fold, WindowSet
from .errors import ConfigError, TrainingError
from .model import (SepCnnConfig, SepCnnModel, build_model, count_parameters,
                    forward, loss_and_grad, recalibrate_batchnorm)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ConfigError("learning_rate and eps must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adamw_init(params: dict[str, np.ndarray]) -> AdamWState:
    return AdamWState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def _decayed(name: str) -> bool:
    # decoupled decay on conv/dense weights only, not biases or batch norm
    return name.endswith(".w")


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place.

    theta <- theta - lr*wd*theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * np.square(g)
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        if cfg.weight_decay and _decayed(name):
            p -= (cfg.learning_rate * cfg.weight_decay * p).astype(p.dtype, copy=False)
        p -= update.astype(p.dtype, copy=False)


@dataclass
class FoldMetrics:
    accuracy: float
    macro_precision: float
    confusion: np.ndarray  # [classes x classes], rows = true, cols = predicted
    param_count: int

    def per_class_precision(self) -> np.ndarray:
        predicted = self.confusion.sum(axis=0)
        tp = np.diag(self.confusion)
        with np.errstate(invalid="ignore"):
            prec = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
        return prec

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "per_class_precision": [float(x) for x in self.per_class_precision()],
            "confusion": self.confusion.tolist(),
            "param_count": self.param_count,
        }


@dataclass
class FoldResult:
    metrics: FoldMetrics
    model: SepCnnModel
    epoch_losses: list[float] = field(default_factory=list)


def metrics_from_confusion(confusion: np.ndarray,
                           param_count: int = 0) -> FoldMetrics:
    """Accuracy and macro precision; classes never predicted contribute 0."""
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    if total == 0:
        raise ConfigError("empty confusion matrix")
    predicted = confusion.sum(axis=0)
    tp = np.diag(confusion)
    prec = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
    return FoldMetrics(
        accuracy=float(np.trace(confusion) / total),
        macro_precision=float(prec.mean()),
        confusion=confusion,
        param_count=param_count,
    )


def evaluate(model: SepCnnModel, windows: WindowSet,
             eval_batch: int = 256) -> FoldMetrics:
    """Argmax predictions in eval mode, reduced to FoldMetrics."""
    if len(windows) == 0:
        raise ConfigError("cannot evaluate on an empty window set")
    k = len(windows.classes)
    confusion = np.zeros((k, k), dtype=np.int64)
    for i in range(0, len(windows), eval_batch):
        batch = windows.samples[i:i + eval_batch]
        labels = windows.label_idx[i:i + eval_batch]
        pred = forward(model, batch, mode="eval").argmax(axis=1)
        np.add.at(confusion, (labels.astype(np.int64), pred), 1)
    return metrics_from_confusion(confusion, count_parameters(model))


def train_fold(model_cfg: SepCnnConfig, windows: WindowSet, fold: Fold,
               cfg: TrainConfig) -> FoldResult:
    """Train one model on a fold's train keys, evaluate on its test keys.

    Mini-batches are reshuffled each epoch from the seeded generator; the
    whole run is deterministic for a fixed (config, seed, backend).
    """
    overlap = set(fold.train) & set(fold.test)
    if overlap:
        raise ConfigError(f"fold train/test keys overlap: {sorted(overlap)}")
    train_set = windows.subset_by_keys(fold.train)
    test_set = windows.subset_by_keys(fold.test)
    if len(train_set) == 0 or len(test_set) == 0:
        raise ConfigError(
            f"empty partition: {len(train_set)} train / {len(test_set)} test windows"
        )

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    model_seed = int(np.random.default_rng(seeds[0]).integers(2 ** 31))
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])

    model = build_model(model_cfg, seed=model_seed,
                        input_length=train_set.samples.shape[2])
    opt = adamw_init(model.params)

    x = train_set.samples
    y = train_set.label_idx.astype(np.int64)
    n = len(train_set)
    epoch_losses = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            take = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(model, x[take], y[take], rng=dropout_rng)
            adamw_step(model.params, grads, opt, cfg)
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))

    recalibrate_batchnorm(model, train_set.samples)
    metrics = evaluate(model.eval(), test_set)
    return FoldResult(metrics=metrics, model=model, epoch_losses=epoch_losses)


def summarize_folds(fold_metrics: list[FoldMetrics]) -> dict:
    acc = np.array([m.accuracy for m in fold_metrics])
    prec = np.array([m.macro_precision for m in fold_metrics])
    return {
        "folds": len(fold_metrics),
        "accuracy_mean": float(acc.mean()),
        "accuracy_std": float(acc.std()),
        "precision_mean": float(prec.mean()),
        "precision_std": float(prec.std()),
    }


def write_run_report(out_dir, method: str, fold_metrics: list[FoldMetrics],
                     config_doc: dict | None = None) -> Path:
    """Metrics JSON (config, per-fold, mean +- std) plus confusion CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "method": method,
        "config": config_doc or {},
        "summary": summarize_folds(fold_metrics),
        "per_fold": [m.to_dict() for m in fold_metrics],
    }
    path = out_dir / "metrics.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    for i, m in enumerate(fold_metrics):
        with open(out_dir / f"confusion_fold{i}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerows(m.confusion.tolist())
    return path
