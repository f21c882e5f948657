#!/usr/bin/env python3
"""Compare the numba kernels against the pure-numpy fallback.

Runs the hot kernels (biquad IIR recurrence, depthwise conv forward and
backward, max-pool) on representative shapes, plus one full training step,
and prints a timing table. Select what the package itself uses via
VIBEGEST_BACKEND; this script always times both implementations directly.
"""
import time

import numpy as np

from vibegest._accel import numpy_backend

try:
    from vibegest._accel import numba_backend
except ImportError:
    numba_backend = None


def bench(fn, repeats=10):
    fn()  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def kernel_cases(rng):
    stream = rng.standard_normal((4, 120_000))
    coeffs = np.array([[0.3375, 0.0, -0.3375, 0.4595, 0.3249]])
    x = rng.random((128, 32, 625), dtype=np.float32)
    w = rng.random((32, 15), dtype=np.float32)
    b = np.zeros(32, dtype=np.float32)
    dy = rng.random((128, 32, 625), dtype=np.float32)

    def biquad(impl):
        state = np.zeros((1, 4, 2))
        return lambda: impl.biquad_apply(stream, coeffs, state)

    def dw_fwd(impl):
        return lambda: impl.depthwise_forward(x, w, b)

    def dw_bwd(impl):
        return lambda: impl.depthwise_backward(x, w, dy)

    def pool(impl):
        return lambda: impl.maxpool2_relu_forward(x)

    return [
        ("biquad 4ch x 120k samples", biquad, 5),
        ("depthwise fwd 128x32x625 k15", dw_fwd, 10),
        ("depthwise bwd 128x32x625 k15", dw_bwd, 10),
        ("maxpool2+relu fwd 128x32x625", pool, 20),
    ]


def train_step_case(rng):
    from vibegest.model import SepCnnConfig, build_model, loss_and_grad

    cfg = SepCnnConfig(in_channels=4, num_blocks=6, block_width=32,
                       kernel_size=15, dropout_p=0.2, num_classes=6)
    model = build_model(cfg, seed=0)
    batch = rng.random((128, 4, 1250), dtype=np.float32)
    labels = rng.integers(0, 6, 128)
    drop_rng = np.random.default_rng(0)
    return lambda: loss_and_grad(model, batch, labels, rng=drop_rng)


def main():
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    print("-" * 68)
    for name, make, repeats in kernel_cases(rng):
        t_np = bench(make(numpy_backend), repeats)
        if numba_backend is not None:
            t_nb = bench(make(numba_backend), repeats)
            print(f"{name:36s} {t_np:8.2f}ms {t_nb:8.2f}ms {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:36s} {t_np:8.2f}ms {'n/a':>10s}")

    # the full step exercises whichever backend the package selected
    from vibegest import _accel

    step = train_step_case(rng)
    t = bench(step, repeats=5)
    print("-" * 68)
    print(f"full training step ({_accel.backend()} backend, 128x4x1250): {t:.0f} ms")


if __name__ == "__main__":
    main()
