"""Band-pass design, stateful stream filtering, normalization, decimation.

The band-pass is a second-order Butterworth IIR realized as a single biquad
(direct form II transposed): an order-1 analog low-pass prototype is taken
through the band-pass transformation and the bilinear transform with
frequency pre-warping. State is carried per channel so chunked processing
is exactly equivalent to one-shot filtering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import InvalidArgumentError, InvalidSpecError, ShapeError


@dataclass(frozen=True)
class FilterSpec:
    """Cut-off frequencies and sample rate for the band-pass block.

    Invariant: 0 < low_cut_hz < high_cut_hz < sample_rate_hz / 2.
    """

    low_cut_hz: float
    high_cut_hz: float
    sample_rate_hz: float
    order: int = 2

    def __post_init__(self):
        fs = self.sample_rate_hz
        if not (fs > 0 and math.isfinite(fs)):
            raise InvalidSpecError(f"sample rate must be positive, got {fs}")
        if not (0 < self.low_cut_hz < fs / 2):
            raise InvalidSpecError(
                f"low cut-off {self.low_cut_hz} Hz outside (0, {fs / 2}) Hz"
            )
        if not (0 < self.high_cut_hz < fs / 2):
            raise InvalidSpecError(
                f"high cut-off {self.high_cut_hz} Hz outside (0, {fs / 2}) Hz"
            )
        if self.high_cut_hz <= self.low_cut_hz:
            raise InvalidSpecError(
                f"degenerate band: high cut-off {self.high_cut_hz} Hz <= "
                f"low cut-off {self.low_cut_hz} Hz"
            )
        if self.order != 2:
            raise InvalidSpecError("only the second-order band-pass is supported")


@dataclass(frozen=True)
class BiquadSection:
    """One second-order section; a0 is normalized to 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])

    def coefficients(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2, self.a1, self.a2], dtype=np.float64)


@dataclass(frozen=True)
class BiquadCascade:
    """Ordered biquad sections plus the sample rate they were designed for."""

    sections: tuple[BiquadSection, ...]
    sample_rate_hz: float

    def coefficient_matrix(self) -> np.ndarray:
        return np.stack([s.coefficients() for s in self.sections])

    def create_state(self, channels: int) -> np.ndarray:
        if channels < 1:
            raise InvalidArgumentError(f"channel count must be >= 1, got {channels}")
        return np.zeros((len(self.sections), channels, 2), dtype=np.float64)

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Evaluate H(e^{j 2 pi f / fs}) at the given frequencies."""
        w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.sample_rate_hz
        z1 = np.exp(-1j * w)
        h = np.ones_like(z1)
        for s in self.sections:
            num = s.b0 + s.b1 * z1 + s.b2 * z1 * z1
            den = 1.0 + s.a1 * z1 + s.a2 * z1 * z1
            h = h * num / den
        return h


@dataclass
class ChunkedStream:
    """A multi-channel stream delivered as an ordered sequence of blocks."""

    channels: int
    sample_rate_hz: float
    chunks: list = field(default_factory=list)

    def __post_init__(self):
        for c in self.chunks:
            if c.ndim != 2 or c.shape[0] != self.channels:
                raise ShapeError(
                    f"chunk shape {c.shape} incompatible with {self.channels} channels"
                )

    @classmethod
    def from_array(cls, samples: np.ndarray, sample_rate_hz: float,
                   chunk_len: int | None = None) -> "ChunkedStream":
        samples = np.atleast_2d(samples)
        if chunk_len is None:
            chunks = [samples]
        else:
            chunks = [samples[:, i:i + chunk_len]
                      for i in range(0, samples.shape[1], chunk_len)]
        return cls(channels=samples.shape[0], sample_rate_hz=sample_rate_hz,
                   chunks=chunks)

    def concatenate(self) -> np.ndarray:
        return np.concatenate(self.chunks, axis=1)


def design_bandpass(spec: FilterSpec) -> BiquadCascade:
    """Design the second-order Butterworth band-pass for ``spec``.

    The order-1 low-pass prototype H(s) = 1/(s+1) is band-pass transformed to
    H(s) = B s / (s^2 + B s + w0^2) with pre-warped edge frequencies, then
    discretized with the bilinear transform. The result is one biquad with
    zeros pinned at z = +1 and z = -1 (DC and Nyquist gains are exactly 0).
    """
    fs = spec.sample_rate_hz
    c = 2.0 * fs
    w1 = c * math.tan(math.pi * spec.low_cut_hz / fs)
    w2 = c * math.tan(math.pi * spec.high_cut_hz / fs)
    bw = w2 - w1
    w0_sq = w1 * w2
    d = c * c + bw * c + w0_sq
    section = BiquadSection(
        b0=bw * c / d,
        b1=0.0,
        b2=-bw * c / d,
        a1=(2.0 * w0_sq - 2.0 * c * c) / d,
        a2=(c * c - bw * c + w0_sq) / d,
    )
    return BiquadCascade(sections=(section,), sample_rate_hz=fs)


def design_lowpass(cutoff_hz: float, sample_rate_hz: float) -> BiquadCascade:
    """Second-order Butterworth low-pass (used as optional anti-alias filter)."""
    if not (0 < cutoff_hz < sample_rate_hz / 2):
        raise InvalidSpecError(
            f"cut-off {cutoff_hz} Hz outside (0, {sample_rate_hz / 2}) Hz"
        )
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    d = k * k + math.sqrt(2.0) * k + 1.0
    section = BiquadSection(
        b0=k * k / d,
        b1=2.0 * k * k / d,
        b2=k * k / d,
        a1=2.0 * (k * k - 1.0) / d,
        a2=(k * k - math.sqrt(2.0) * k + 1.0) / d,
    )
    return BiquadCascade(sections=(section,), sample_rate_hz=sample_rate_hz)


class StreamFilter:
    """A biquad cascade with per-channel state for chunk-by-chunk processing.

    State is single-owner: one StreamFilter per stream. Feeding the same
    recording in chunks of any size reproduces one-shot filtering exactly.
    """

    def __init__(self, cascade: BiquadCascade, channels: int):
        self.cascade = cascade
        self.channels = channels
        self._coeffs = cascade.coefficient_matrix()
        self._state = cascade.create_state(channels)

    def process(self, chunk: np.ndarray) -> np.ndarray:
        chunk = np.atleast_2d(chunk)
        if chunk.shape[0] != self.channels:
            raise ShapeError(
                f"chunk has {chunk.shape[0]} channels, filter state has {self.channels}"
            )
        return _accel.biquad_apply(chunk, self._coeffs, self._state)

    def reset(self) -> None:
        self._state[:] = 0.0


def filter_block(cascade: BiquadCascade, block: np.ndarray) -> np.ndarray:
    """One-shot filtering of a whole block from zero initial state."""
    block = np.atleast_2d(block)
    return StreamFilter(cascade, block.shape[0]).process(block)


def filter_stream(stream: ChunkedStream, cascade: BiquadCascade) -> ChunkedStream:
    """Filter every chunk of ``stream``, carrying state across chunks."""
    sf = StreamFilter(cascade, stream.channels)
    return ChunkedStream(
        channels=stream.channels,
        sample_rate_hz=stream.sample_rate_hz,
        chunks=[sf.process(c) for c in stream.chunks],
    )


def minmax_normalize(window: np.ndarray) -> np.ndarray:
    """Rescale a window to [0, 1] using its joint min/max over all channels.

    Joint extrema (rather than per-channel) preserve inter-channel amplitude
    ratios. A constant window maps to all zeros.
    """
    window = np.asarray(window)
    if window.size == 0:
        raise ShapeError("cannot normalize an empty window")
    lo = window.min()
    hi = window.max()
    if hi == lo:
        return np.zeros_like(window)
    return (window - lo) / (hi - lo)


def downsample(block: np.ndarray, factor: int, anti_alias: bool = False) -> np.ndarray:
    """Keep every ``factor``-th sample along the last axis.

    Plain decimation by default, mirroring a pipeline where the band-pass
    already precedes this block; ``anti_alias=True`` applies a second-order
    Butterworth low-pass at 0.4 x the post-decimation rate first.
    """
    if int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"decimation factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    block = np.asarray(block)
    if factor == 1:
        return block
    if anti_alias:
        # cutoff expressed relative to the input rate; absolute fs cancels out
        lp = design_lowpass(0.4 / factor, 1.0)
        was_1d = block.ndim == 1
        filtered = filter_block(lp, block).astype(block.dtype, copy=False)
        block = filtered[0] if was_1d else filtered
    return block[..., ::factor]
