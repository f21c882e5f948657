"""Depthwise-separable 1D-CNN: build, forward, analytic backward, checkpoints.

Each convolutional block applies, in order: depthwise conv (one filter per
input channel, same padding, stride 1) -> pointwise conv (kernel 1) ->
batch norm -> max-pool (kernel 2, stride 2) -> ReLU -> dropout. All
depthwise layers share one kernel size. After the last block an adaptive
average pool reduces the time axis to ``pool_out``, followed by a two-layer
classifier. The backward pass is exact, including the path through the
batch statistics in training mode.

Checkpoint format (little-endian, version 1): header ``SEPW`` + u16 version
+ u16 fields (in_channels, num_blocks, block_width, kernel_size, pool_out,
classifier_hidden, num_classes) + f32 dropout_p, then every learnable
parameter as flat float32 in build order (per block: dw.w, dw.b, pw.w,
pw.b, bn.gamma, bn.beta; then fc1.w, fc1.b, fc2.w, fc2.b), then the
batch-norm running mean/var per block.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import (ConfigError, FormatError, InvalidArgumentError,
                     InvalidSpecError, ShapeError)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_CKPT_MAGIC = b"SEPW"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4s8Hf")


@dataclass(frozen=True)
class SepCnnConfig:
    in_channels: int = 4
    num_blocks: int = 6
    block_width: int = 32
    kernel_size: int = 15
    dropout_p: float = 0.2
    pool_out: int = 1
    classifier_hidden: int = 32
    num_classes: int = 6

    def __post_init__(self):
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise InvalidSpecError(f"kernel size must be odd, got {self.kernel_size}")
        for name in ("in_channels", "num_blocks", "block_width", "pool_out",
                     "classifier_hidden", "num_classes"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be >= 1")
        if not (0.0 <= self.dropout_p < 1.0):
            raise InvalidSpecError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    def block_channels(self) -> list[tuple[int, int]]:
        chans = [self.in_channels] + [self.block_width] * self.num_blocks
        return list(zip(chans[:-1], chans[1:]))


@dataclass
class SepCnnModel:
    config: SepCnnConfig
    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    mode: str = "train"

    @property
    def dtype(self):
        return self.params["fc1.w"].dtype

    def train(self) -> "SepCnnModel":
        self.mode = "train"
        return self

    def eval(self) -> "SepCnnModel":
        self.mode = "eval"
        return self


def validate_input_length(cfg: SepCnnConfig, input_length: int) -> list[int]:
    """Walk the pooling chain; reject configs that collapse the time axis."""
    lengths = [int(input_length)]
    l = int(input_length)
    for i in range(cfg.num_blocks):
        l = l // 2
        if l < 1:
            raise ConfigError(
                f"time axis collapses to {l} after block {i} "
                f"(input length {input_length}, {cfg.num_blocks} blocks)"
            )
        lengths.append(l)
    if l < cfg.pool_out:
        raise ConfigError(
            f"final time axis {l} is shorter than pool_out={cfg.pool_out}"
        )
    return lengths


def build_model(cfg: SepCnnConfig, seed: int = 0, dtype=np.float32,
                input_length: int | None = None) -> SepCnnModel:
    """He-uniform (fan-in) initialized model, deterministic per seed."""
    if input_length is not None:
        validate_input_length(cfg, input_length)
    rng = np.random.default_rng(np.random.SeedSequence([0x5EB, seed]))

    def he_uniform(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    params: dict[str, np.ndarray] = {}
    running: dict[str, np.ndarray] = {}
    for i, (c_in, c_out) in enumerate(cfg.block_channels()):
        params[f"block{i}.dw.w"] = he_uniform((c_in, cfg.kernel_size), cfg.kernel_size)
        params[f"block{i}.dw.b"] = np.zeros(c_in, dtype=dtype)
        params[f"block{i}.pw.w"] = he_uniform((c_out, c_in), c_in)
        params[f"block{i}.pw.b"] = np.zeros(c_out, dtype=dtype)
        params[f"block{i}.bn.gamma"] = np.ones(c_out, dtype=dtype)
        params[f"block{i}.bn.beta"] = np.zeros(c_out, dtype=dtype)
        running[f"block{i}.bn.mean"] = np.zeros(c_out, dtype=dtype)
        running[f"block{i}.bn.var"] = np.ones(c_out, dtype=dtype)
    flat = cfg.block_width * cfg.pool_out
    params["fc1.w"] = he_uniform((cfg.classifier_hidden, flat), flat)
    params["fc1.b"] = np.zeros(cfg.classifier_hidden, dtype=dtype)
    params["fc2.w"] = he_uniform((cfg.num_classes, cfg.classifier_hidden),
                                 cfg.classifier_hidden)
    params["fc2.b"] = np.zeros(cfg.num_classes, dtype=dtype)
    return SepCnnModel(config=cfg, params=params, running=running)


def count_parameters(model: SepCnnModel) -> int:
    """Learnable scalars only; batch-norm running statistics excluded."""
    return int(sum(p.size for p in model.params.values()))


def _adaptive_avg_pool(x: np.ndarray, out: int) -> np.ndarray:
    b, c, l = x.shape
    if out == 1:
        return x.mean(axis=2, keepdims=True)
    starts = (np.arange(out) * l) // out
    ends = -(-(np.arange(1, out + 1) * l) // out)
    return np.stack([x[:, :, s:e].mean(axis=2) for s, e in zip(starts, ends)], axis=2)


def _adaptive_avg_pool_backward(dy: np.ndarray, l: int) -> np.ndarray:
    b, c, out = dy.shape
    dx = np.zeros((b, c, l), dtype=dy.dtype)
    starts = (np.arange(out) * l) // out
    ends = -(-(np.arange(1, out + 1) * l) // out)
    for i, (s, e) in enumerate(zip(starts, ends)):
        dx[:, :, s:e] += dy[:, :, i:i + 1] / (e - s)
    return dx


def _check_batch(model: SepCnnModel, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=model.dtype)
    if batch.ndim != 3 or batch.shape[1] != model.config.in_channels:
        raise ShapeError(
            f"input: expected [batch x {model.config.in_channels} x length], "
            f"got {batch.shape}"
        )
    validate_input_length(model.config, batch.shape[2])
    return np.ascontiguousarray(batch)


def _make_dropout_mask(shape, p, rng, dtype):
    if rng is None:
        raise InvalidArgumentError(
            "training-mode forward with dropout_p > 0 needs an rng or "
            "explicit dropout masks"
        )
    draw_dtype = np.float32 if dtype == np.float32 else np.float64
    mask = (rng.random(shape, dtype=draw_dtype) >= p).astype(dtype)
    mask /= 1.0 - p
    return mask


def _forward_impl(model: SepCnnModel, batch: np.ndarray, mode: str,
                  rng=None, dropout_masks=None, want_cache: bool = False):
    cfg = model.config
    p = model.params
    x = batch
    caches = []
    for i in range(cfg.num_blocks):
        x_in = x
        a = _accel.depthwise_forward(x_in, p[f"block{i}.dw.w"], p[f"block{i}.dw.b"])
        z = np.matmul(p[f"block{i}.pw.w"], a)
        z += p[f"block{i}.pw.b"][:, None]
        gamma = p[f"block{i}.bn.gamma"]
        beta = p[f"block{i}.bn.beta"]
        n = z.shape[0] * z.shape[2]
        if mode == "train":
            mu = z.mean(axis=(0, 2))
            var = np.einsum("bcl,bcl->c", z, z, optimize=True) / n - mu * mu
            np.maximum(var, 0.0, out=var)
            rm, rv = model.running[f"block{i}.bn.mean"], model.running[f"block{i}.bn.var"]
            rm *= 1.0 - BN_MOMENTUM
            rm += BN_MOMENTUM * mu.astype(rm.dtype)
            rv *= 1.0 - BN_MOMENTUM
            rv += BN_MOMENTUM * var.astype(rv.dtype)
        else:
            mu = model.running[f"block{i}.bn.mean"]
            var = model.running[f"block{i}.bn.var"]
        invstd = (1.0 / np.sqrt(var + BN_EPS)).astype(z.dtype)
        # z is dead after normalization: the kernel reuses it as xhat
        y = _accel.bn_affine(z, mu.astype(z.dtype), invstd, gamma, beta)
        xhat = z
        l_bn = y.shape[2]
        pooled, pool_code = _accel.maxpool2_relu_forward(y)
        mask = None
        if mode == "train" and cfg.dropout_p > 0.0:
            if dropout_masks is not None:
                mask = np.asarray(dropout_masks[i]).astype(model.dtype)
                mask /= 1.0 - cfg.dropout_p
            else:
                mask = _make_dropout_mask(pooled.shape, cfg.dropout_p,
                                          rng, model.dtype)
            pooled *= mask
        if want_cache:
            caches.append({
                "x_in": x_in, "a": a, "xhat": xhat, "invstd": invstd,
                "pool_code": pool_code, "l_bn": l_bn, "dropout_mask": mask,
            })
        x = pooled

    l_last = x.shape[2]
    pooled = _adaptive_avg_pool(x, cfg.pool_out)
    flat = pooled.reshape(batch.shape[0], -1)
    h = flat @ p["fc1.w"].T + p["fc1.b"]
    hr = np.maximum(h, 0)
    logits = hr @ p["fc2.w"].T + p["fc2.b"]
    head_cache = {"l_last": l_last, "flat": flat, "h_mask": h > 0, "hr": hr}
    return logits, caches, head_cache


def forward(model: SepCnnModel, batch: np.ndarray, mode: str | None = None,
            rng=None, dropout_masks=None) -> np.ndarray:
    """Run the network; ``mode`` overrides the model's current mode.

    Training mode uses batch statistics (and updates the running ones);
    eval mode uses running statistics and skips dropout entirely.
    """
    mode = mode or model.mode
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    batch = _check_batch(model, batch)
    logits, _, _ = _forward_impl(model, batch, mode, rng, dropout_masks)
    return logits


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidArgumentError(
            f"label out of range [0, {k}): {labels.min()}..{labels.max()}"
        )
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    denom = ex.sum(axis=1, keepdims=True)
    log_probs = (logits - m) - np.log(denom)
    loss = float(-log_probs[np.arange(n), labels].mean())
    dlogits = ex / denom
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype)


def loss_and_grad(model: SepCnnModel, batch: np.ndarray, labels: np.ndarray,
                  rng=None, dropout_masks=None):
    """Mean softmax cross-entropy and exact gradients for every parameter.

    Requires training mode; gradients flow through the batch statistics.
    ``dropout_masks`` (one boolean keep-mask per block) freezes dropout for
    gradient checking; otherwise masks are drawn from ``rng``.
    """
    if model.mode != "train":
        raise ConfigError("loss_and_grad requires the model in training mode")
    cfg = model.config
    p = model.params
    batch = _check_batch(model, batch)
    logits, caches, head = _forward_impl(
        model, batch, "train", rng, dropout_masks, want_cache=True)
    loss, dlogits = softmax_cross_entropy(logits, labels)

    grads: dict[str, np.ndarray] = {}
    grads["fc2.w"] = dlogits.T @ head["hr"]
    grads["fc2.b"] = dlogits.sum(axis=0)
    dhr = dlogits @ p["fc2.w"]
    dh = dhr * head["h_mask"]
    grads["fc1.w"] = dh.T @ head["flat"]
    grads["fc1.b"] = dh.sum(axis=0)
    dflat = dh @ p["fc1.w"]
    dpooled = dflat.reshape(batch.shape[0], cfg.block_width, cfg.pool_out)
    dx = _adaptive_avg_pool_backward(dpooled, head["l_last"])

    for i in reversed(range(cfg.num_blocks)):
        c = caches[i]
        if c["dropout_mask"] is not None:
            dx *= c["dropout_mask"]
        dy = _accel.maxpool2_relu_backward(np.ascontiguousarray(dx),
                                           c["pool_code"], c["l_bn"])
        gamma = p[f"block{i}.bn.gamma"]
        xhat = c["xhat"]
        n = xhat.shape[0] * xhat.shape[2]
        ggamma = np.einsum("bcl,bcl->c", dy, xhat, optimize=True)
        gbeta = dy.sum(axis=(0, 2))
        grads[f"block{i}.bn.gamma"] = ggamma
        grads[f"block{i}.bn.beta"] = gbeta
        # dz = invstd * (gamma*dy - mean(gamma*dy) - xhat*mean(gamma*dy*xhat));
        # both means are per-channel rescalings of the gamma/beta grad sums
        scale = c["invstd"] * gamma
        dz = _accel.bn_input_grad(dy, xhat, scale, scale * (gbeta / n),
                                  scale * (ggamma / n))
        grads[f"block{i}.pw.w"] = np.matmul(
            dz, c["a"].transpose(0, 2, 1)).sum(axis=0)
        grads[f"block{i}.pw.b"] = dz.sum(axis=(0, 2))
        da = np.matmul(p[f"block{i}.pw.w"].T.copy(), dz)
        dx, dw, db = _accel.depthwise_backward(
            c["x_in"], p[f"block{i}.dw.w"], np.ascontiguousarray(da))
        grads[f"block{i}.dw.w"] = dw
        grads[f"block{i}.dw.b"] = db

    return loss, grads


def recalibrate_batchnorm(model: SepCnnModel, samples: np.ndarray,
                          chunk: int = 512) -> None:
    """Replace batch-norm running statistics with reference-set statistics.

    The momentum EMA tracks noisy per-batch statistics; on small training
    sets the batch/population mismatch costs real eval accuracy. This
    propagates the whole reference set once, computing each block's exact
    statistics and feeding them forward self-consistently (dropout off),
    so an eval-mode pass then reproduces the calibration activations.
    """
    cfg = model.config
    p = model.params
    x = _check_batch(model, samples)
    for i in range(cfg.num_blocks):
        zs = []
        for s in range(0, x.shape[0], chunk):
            a = _accel.depthwise_forward(
                x[s:s + chunk], p[f"block{i}.dw.w"], p[f"block{i}.dw.b"])
            z = np.matmul(p[f"block{i}.pw.w"], a)
            z += p[f"block{i}.pw.b"][:, None]
            zs.append(z)
        z = zs[0] if len(zs) == 1 else np.concatenate(zs)
        n = z.shape[0] * z.shape[2]
        mu = z.mean(axis=(0, 2))
        var = np.einsum("bcl,bcl->c", z, z, optimize=True) / n - mu * mu
        np.maximum(var, 0.0, out=var)
        model.running[f"block{i}.bn.mean"] = mu.astype(model.dtype)
        model.running[f"block{i}.bn.var"] = var.astype(model.dtype)
        invstd = (1.0 / np.sqrt(var + BN_EPS)).astype(z.dtype)
        y = _accel.bn_affine(z, mu.astype(z.dtype), invstd,
                             p[f"block{i}.bn.gamma"], p[f"block{i}.bn.beta"])
        pooled, _ = _accel.maxpool2_relu_forward(y)
        x = pooled


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(model: SepCnnModel, path) -> None:
    cfg = model.config
    header = _CKPT_HEADER.pack(
        _CKPT_MAGIC, _CKPT_VERSION, cfg.in_channels, cfg.num_blocks,
        cfg.block_width, cfg.kernel_size, cfg.pool_out, cfg.classifier_hidden,
        cfg.num_classes, cfg.dropout_p,
    )
    with open(path, "wb") as f:
        f.write(header)
        for name in model.params:
            f.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
        for name in model.running:
            f.write(np.ascontiguousarray(model.running[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> SepCnnModel:
    with open(path, "rb") as f:
        header = f.read(_CKPT_HEADER.size)
        if len(header) < _CKPT_HEADER.size:
            raise FormatError(f"{path}: truncated checkpoint header at byte {len(header)}")
        (magic, version, in_channels, num_blocks, block_width, kernel_size,
         pool_out, classifier_hidden, num_classes, dropout_p) = \
            _CKPT_HEADER.unpack(header)
        if magic != _CKPT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r} at byte 0")
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        cfg = SepCnnConfig(
            in_channels=in_channels, num_blocks=num_blocks,
            block_width=block_width, kernel_size=kernel_size,
            dropout_p=round(float(dropout_p), 6), pool_out=pool_out,
            classifier_hidden=classifier_hidden, num_classes=num_classes,
        )
        model = build_model(cfg, seed=0, dtype=np.float32)
        offset = _CKPT_HEADER.size
        for store in (model.params, model.running):
            for name in store:
                n = store[name].size
                raw = f.read(4 * n)
                if len(raw) < 4 * n:
                    raise FormatError(
                        f"{path}: truncated checkpoint payload at byte "
                        f"{offset + len(raw)} (parameter {name})"
                    )
                store[name] = np.frombuffer(raw, dtype="<f4").reshape(
                    store[name].shape).copy()
                offset += 4 * n
        trailing = f.read(1)
        if trailing:
            raise FormatError(f"{path}: unexpected trailing bytes at {offset}")
    return model.eval()
