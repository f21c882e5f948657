"""Backend dispatch for the numeric hot kernels.

The IIR recurrence, the depthwise convolution, and max-pooling dominate
runtime; each exists as a numba-jitted kernel and as a plain numpy/scipy
fallback. The active backend is fixed at import time from the
``VIBEGEST_BACKEND`` environment variable:

    auto    (default) numba when importable, numpy otherwise
    numba   require the jitted kernels, raise if numba is missing
    numpy   force the pure-numpy path

``benchmarks/bench_backends.py`` compares the two on representative sizes.
"""
import os

from . import numpy_backend

_requested = os.environ.get("VIBEGEST_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"VIBEGEST_BACKEND={_requested!r} not understood; use auto, numba, or numpy"
    )

_impl = None
if _requested in ("auto", "numba"):
    try:
        from . import numba_backend
    except ImportError:
        if _requested == "numba":
            raise
    else:
        _impl = numba_backend

if _impl is None:
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    BACKEND = "numba"

biquad_apply = _impl.biquad_apply
depthwise_forward = _impl.depthwise_forward
depthwise_backward = _impl.depthwise_backward
maxpool2_relu_forward = _impl.maxpool2_relu_forward
maxpool2_relu_backward = _impl.maxpool2_relu_backward
bn_affine = _impl.bn_affine
bn_input_grad = _impl.bn_input_grad


def backend() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return BACKEND
