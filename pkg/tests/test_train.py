import numpy as np
import pytest

from vibegest.dataset import Fold, WindowSet, gesture_classes
from vibegest.errors import ConfigError, TrainingError
from vibegest.model import SepCnnConfig, build_model
from vibegest.train import (TrainConfig, adamw_init, adamw_step, evaluate,
                            summarize_folds, train_fold)


def reference_adam(params, grads, m, v, t, lr, b1, b2, eps):
    # textbook Adam, the independent oracle for the wd=0 reduction
    out = {}
    for k in params:
        m[k] = b1 * m[k] + (1 - b1) * grads[k]
        v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
        mh = m[k] / (1 - b1 ** t)
        vh = v[k] / (1 - b2 ** t)
        out[k] = params[k] - lr * mh / (np.sqrt(vh) + eps)
    return out


class TestAdamW:
    def test_single_step_no_decay(self):
        params = {"fc.w": np.array([1.0])}
        grads = {"fc.w": np.array([1.0])}
        state = adamw_init(params)
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
        adamw_step(params, grads, state, cfg)
        # m_hat = 1, v_hat = 1 -> update ~ 0.1/(1+eps)
        assert abs(params["fc.w"][0] - 0.9) < 1e-8
        assert state.t == 1

    def test_single_step_decoupled_decay(self):
        params = {"fc.w": np.array([1.0])}
        grads = {"fc.w": np.array([1.0])}
        state = adamw_init(params)
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.01)
        adamw_step(params, grads, state, cfg)
        # theta - lr*wd*theta - lr*m_hat/(sqrt(v_hat)+eps) = 1 - 0.001 - 0.1
        assert abs(params["fc.w"][0] - 0.899) < 1e-8

    def test_zero_gradient_fixed_point(self):
        params = {"fc.w": np.array([2.0, -3.0]), "fc.b": np.array([0.5])}
        grads = {k: np.zeros_like(p) for k, p in params.items()}
        state = adamw_init(params)
        cfg = TrainConfig(weight_decay=0.0)
        before = {k: p.copy() for k, p in params.items()}
        for _ in range(5):
            adamw_step(params, grads, state, cfg)
        for k in params:
            np.testing.assert_array_equal(params[k], before[k])

    def test_wd_zero_equals_adam(self, rng):
        shapes = {"a.w": (5, 3), "b.b": (4,), "c.gamma": (6,)}
        params = {k: rng.standard_normal(s) for k, s in shapes.items()}
        grads_seq = [{k: rng.standard_normal(s) for k, s in shapes.items()}
                     for _ in range(7)]
        ref_params = {k: p.copy() for k, p in params.items()}
        ref_m = {k: np.zeros_like(p) for k, p in params.items()}
        ref_v = {k: np.zeros_like(p) for k, p in params.items()}
        state = adamw_init(params)
        cfg = TrainConfig(learning_rate=1e-3, weight_decay=0.0)
        for t, grads in enumerate(grads_seq, 1):
            adamw_step(params, grads, state, cfg)
            ref_params = reference_adam(ref_params, grads, ref_m, ref_v, t,
                                        cfg.learning_rate, cfg.beta1,
                                        cfg.beta2, cfg.eps)
        for k in params:
            np.testing.assert_allclose(params[k], ref_params[k],
                                       rtol=0, atol=1e-12)

    def test_decay_skips_biases_and_bn(self):
        params = {"fc.w": np.array([1.0]), "fc.b": np.array([1.0]),
                  "bn.gamma": np.array([1.0])}
        grads = {k: np.zeros_like(p) for k, p in params.items()}
        state = adamw_init(params)
        adamw_step(params, grads, state, TrainConfig(weight_decay=0.1))
        assert params["fc.w"][0] < 1.0
        assert params["fc.b"][0] == 1.0
        assert params["bn.gamma"][0] == 1.0

    def test_non_finite_gradient_named(self):
        params = {"block0.dw.w": np.array([1.0])}
        grads = {"block0.dw.w": np.array([np.nan])}
        state = adamw_init(params)
        with pytest.raises(TrainingError, match="block0.dw.w"):
            adamw_step(params, grads, state, TrainConfig())


def synthetic_windows(rng, n_per_class=50, n_classes=6, channels=4, length=128):
    """Margin-separated classes: per-class carrier frequency and channel mix."""
    samples, labels, participants, sessions = [], [], [], []
    t = np.arange(length) / 1000.0
    for c in range(n_classes):
        freq = 60.0 + 35.0 * c
        mix = 0.4 + 0.6 * np.roll(np.linspace(0, 1, channels), c)[:, None]
        for i in range(n_per_class):
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(2 * np.pi * freq * t + phase)[None, :] * mix
            wave = wave + 0.05 * rng.standard_normal((channels, length))
            samples.append(wave.astype(np.float32))
            labels.append(c)
            participants.append(1 + i % 2)
            sessions.append(1 + (i // 2) % 2)
    classes = gesture_classes(6)[:n_classes]
    return WindowSet(
        samples=np.stack(samples), label_idx=np.array(labels, dtype=np.int16),
        participant=np.array(participants, dtype=np.int16),
        session=np.array(sessions, dtype=np.int16),
        onset=np.zeros(len(labels)), classes=classes)


TINY_MODEL = SepCnnConfig(in_channels=4, num_blocks=2, block_width=8,
                          kernel_size=9, dropout_p=0.2, pool_out=1,
                          classifier_hidden=16, num_classes=6)


class TestTrainFold:
    def test_separable_dataset_reaches_95(self, rng):
        ws = synthetic_windows(rng)
        fold = Fold(train=((1, 1), (1, 2), (2, 1)), test=((2, 2),))
        cfg = TrainConfig(epochs=50, batch_size=32, learning_rate=1e-3, seed=0)
        result = train_fold(TINY_MODEL, ws, fold, cfg)
        assert result.metrics.accuracy >= 0.95

    def test_overlapping_fold_rejected(self, rng):
        ws = synthetic_windows(rng, n_per_class=4)
        fold = Fold(train=((1, 1), (2, 2)), test=((2, 2),))
        with pytest.raises(ConfigError, match="overlap"):
            train_fold(TINY_MODEL, ws, fold, TrainConfig(epochs=1))

    def test_empty_partition_rejected(self, rng):
        ws = synthetic_windows(rng, n_per_class=4)
        fold = Fold(train=((1, 1),), test=((9, 9),))
        with pytest.raises(ConfigError, match="empty"):
            train_fold(TINY_MODEL, ws, fold, TrainConfig(epochs=1))

    def test_deterministic_per_seed(self, rng):
        ws = synthetic_windows(rng, n_per_class=8)
        fold = Fold(train=((1, 1), (1, 2)), test=((2, 1), (2, 2)))
        cfg = TrainConfig(epochs=3, batch_size=16, seed=11)
        a = train_fold(TINY_MODEL, ws, fold, cfg)
        b = train_fold(TINY_MODEL, ws, fold, cfg)
        assert a.epoch_losses == b.epoch_losses
        assert a.metrics.accuracy == b.metrics.accuracy
        np.testing.assert_array_equal(a.metrics.confusion, b.metrics.confusion)
        for k in a.model.params:
            np.testing.assert_array_equal(a.model.params[k], b.model.params[k])

    def test_loss_trend_non_increasing_smoke(self, rng):
        ws = synthetic_windows(rng, n_per_class=20)
        fold = Fold(train=((1, 1), (1, 2), (2, 1)), test=((2, 2),))
        cfg = TrainConfig(epochs=20, batch_size=32, seed=5)
        result = train_fold(TINY_MODEL, ws, fold, cfg)
        smoothed = np.convolve(result.epoch_losses, np.ones(5) / 5, mode="valid")
        assert smoothed[-1] < smoothed[0]
        # after the early epochs the averaged trend never meaningfully rises
        assert np.diff(smoothed).max() < 0.05


class TestEvaluate:
    def _windows(self, rng, labels):
        n = len(labels)
        return WindowSet(
            samples=rng.standard_normal((n, 2, 32)).astype(np.float32),
            label_idx=np.asarray(labels, dtype=np.int16),
            participant=np.ones(n, dtype=np.int16),
            session=np.ones(n, dtype=np.int16),
            onset=np.zeros(n), classes=gesture_classes(6))

    def test_perfect_predictor(self):
        from vibegest.train import metrics_from_confusion

        metrics = metrics_from_confusion(np.diag([3, 1, 2, 4, 2, 3]))
        assert metrics.accuracy == 1.0
        assert metrics.macro_precision == 1.0
        assert np.all(metrics.confusion == np.diag([3, 1, 2, 4, 2, 3]))

    def test_constant_predictor_balanced(self):
        from vibegest.train import metrics_from_confusion

        # balanced 6-class truth, everything predicted as class 0
        confusion = np.zeros((6, 6), dtype=int)
        confusion[:, 0] = 2
        metrics = metrics_from_confusion(confusion)
        assert abs(metrics.accuracy - 1 / 6) < 1e-12
        assert abs(metrics.macro_precision - (1 / 6) / 6) < 1e-12

    def test_evaluate_confusion_consistent_with_predictions(self, rng):
        m = build_model(SepCnnConfig(in_channels=2, num_blocks=1, block_width=4,
                                     kernel_size=3, num_classes=6), seed=0).eval()
        ws = self._windows(rng, labels=list(rng.integers(0, 6, 20)))
        from vibegest.model import forward

        pred = forward(m, ws.samples).argmax(axis=1)
        metrics = evaluate(m, ws)
        expect = np.zeros((6, 6), dtype=np.int64)
        np.add.at(expect, (ws.label_idx.astype(int), pred), 1)
        np.testing.assert_array_equal(metrics.confusion, expect)
        assert metrics.accuracy == (pred == ws.label_idx).mean()

    def test_confusion_row_sums(self, rng):
        m = build_model(SepCnnConfig(in_channels=2, num_blocks=1, block_width=4,
                                     kernel_size=3, num_classes=6), seed=0).eval()
        labels = list(rng.integers(0, 6, 30))
        ws = self._windows(rng, labels)
        metrics = evaluate(m, ws)
        counts = np.bincount(labels, minlength=6)
        np.testing.assert_array_equal(metrics.confusion.sum(axis=1), counts)
        assert metrics.accuracy == np.trace(metrics.confusion) / 30

    def test_empty_rejected(self, rng):
        m = build_model(SepCnnConfig(in_channels=2, num_blocks=1, block_width=4,
                                     kernel_size=3, num_classes=6), seed=0).eval()
        ws = self._windows(rng, labels=[0])
        empty = ws.subset_by_keys([(5, 5)])
        with pytest.raises(ConfigError):
            evaluate(m, empty)

    def test_accuracy_equals_trace_over_total_property(self, rng):
        from vibegest.train import FoldMetrics

        for _ in range(20):
            k = int(rng.integers(2, 7))
            confusion = rng.integers(0, 20, (k, k))
            if confusion.sum() == 0:
                continue
            acc = np.trace(confusion) / confusion.sum()
            fm = FoldMetrics(accuracy=acc, macro_precision=0.0,
                             confusion=confusion, param_count=0)
            assert fm.accuracy == np.trace(fm.confusion) / fm.confusion.sum()


def test_summarize_folds():
    from vibegest.train import FoldMetrics

    folds = [FoldMetrics(accuracy=a, macro_precision=p,
                         confusion=np.eye(2, dtype=int), param_count=10)
             for a, p in [(0.8, 0.7), (1.0, 0.9)]]
    s = summarize_folds(folds)
    assert s["folds"] == 2
    assert abs(s["accuracy_mean"] - 0.9) < 1e-12
    assert abs(s["accuracy_std"] - 0.1) < 1e-12
