"""Synthetic surface-vibration corpus with exact ground-truth annotations.

Signals mimic the 4-sensor cross layout: two sensors on an X axis (channels
0, 1) and two on a Y axis (channels 2, 3). Class identity is encoded
physically, not just by waveform shape:

  swipes  band-limited burst on all channels; the matching axis pair gets an
          inter-channel onset lag whose sign encodes direction, plus a
          monotone amplitude gradient from leading to trailing sensor
  tap     one short sharp burst, equal lags and amplitudes
  knock   a train of 2-3 short impulses, equal lags

The noise floor is white (sensor thermal noise dominated). Per-event burst
amplitude is scaled so that the in-band burst power over the in-band noise
power matches the configured SNR; the in-band noise reference is measured by
running the session's own noise through the burst-band filter. Everything is
deterministic per (seed, participant, session).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (GESTURES, Recording, recording_key, store_recording,
                      write_manifest)
from .detect import EventAnnotation, save_annotation
from .dsp import FilterSpec, design_bandpass, filter_block
from .errors import InvalidSpecError

X_PAIR = (0, 1)  # X- , X+
Y_PAIR = (2, 3)  # Y- , Y+

_SWIPE_AXES = {
    "swipe-left": (X_PAIR, -1),
    "swipe-right": (X_PAIR, +1),
    "swipe-up": (Y_PAIR, +1),
    "swipe-down": (Y_PAIR, -1),
}


@dataclass(frozen=True)
class SynthConfig:
    sample_rate_hz: float = 1000.0
    channels: int = 4
    reps_per_class: int = 10
    classes: tuple[str, ...] = GESTURES
    inter_event_gap_s: float = 2.0
    gap_jitter_s: float = 0.3
    burst_band_hz: tuple[float, float] = (250.0, 350.0)
    swipe_dur_ms: tuple[float, float] = (600.0, 900.0)
    tap_dur_ms: tuple[float, float] = (80.0, 150.0)
    knock_impulses: tuple[int, int] = (2, 3)
    knock_impulse_ms: tuple[float, float] = (45.0, 60.0)
    knock_gap_ms: tuple[float, float] = (10.0, 30.0)
    swipe_lag_ms: tuple[float, float] = (8.0, 18.0)
    snr_db: float = 10.0
    noise_rms: float = 110.5e-6
    leadin_s: float = 1.5
    tail_s: float = 1.5
    min_gap_s: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.channels != 4:
            raise InvalidSpecError("the cross layout requires exactly 4 channels")
        if not (0 < self.burst_band_hz[0] < self.burst_band_hz[1]
                < self.sample_rate_hz / 2):
            raise InvalidSpecError(f"burst band {self.burst_band_hz} outside (0, fs/2)")
        if self.noise_rms <= 0:
            raise InvalidSpecError("noise floor must be positive")
        if not (math.isfinite(self.snr_db) or self.snr_db == -math.inf):
            raise InvalidSpecError("snr_db must be finite (or -inf for no signal)")
        for pair in (self.swipe_dur_ms, self.tap_dur_ms, self.knock_impulse_ms,
                     self.knock_gap_ms, self.swipe_lag_ms):
            if pair[0] <= 0 or pair[1] < pair[0]:
                raise InvalidSpecError(f"invalid duration/lag range {pair}")

    @property
    def events_per_session(self) -> int:
        return self.reps_per_class * len(self.classes)


@dataclass(frozen=True)
class ParticipantStyle:
    """Per-participant rendering quirks; what makes LOSO non-trivial."""

    duration_scale: float
    lag_scale: float
    amp_db: float
    attack_scale: float


def participant_style(cfg: SynthConfig, participant_id: int) -> ParticipantStyle:
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0x57E1, participant_id]))
    return ParticipantStyle(
        duration_scale=rng.uniform(0.85, 1.2),
        lag_scale=rng.uniform(0.6, 1.4),
        amp_db=rng.uniform(-0.3, 0.3),
        attack_scale=rng.uniform(0.75, 1.3),
    )


def _soft_attack(n: int) -> np.ndarray:
    # squared raised-cosine: stays quiet for roughly the first half, so the
    # low threshold is crossed well after the nominal onset, never before
    if n <= 0:
        return np.empty(0)
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(1, n + 1) / n))
    return ramp * ramp


def _swipe_envelope(dur: int, attack: int, fs: float) -> np.ndarray:
    """Attack, short plateau, deep decay: energy concentrated early so the
    tail cannot re-trigger the detector once its lockout expires."""
    env = np.zeros(dur)
    attack = min(attack, dur)
    env[:attack] = _soft_attack(attack)
    plateau_end = max(attack, int(0.30 * dur))
    env[attack:plateau_end] = 1.0
    decay_end = max(plateau_end, min(int(0.55 * dur), int(0.430 * fs)))
    n_dec = max(decay_end - plateau_end, 1)
    env[plateau_end:decay_end] = 0.02 + 0.98 * 0.5 * (
        1.0 + np.cos(np.pi * np.arange(1, n_dec + 1) / n_dec))
    env[decay_end:] = np.linspace(0.02, 0.0, dur - decay_end, endpoint=False)
    return env


def _tap_envelope(dur: int, attack: int) -> np.ndarray:
    """Soft attack, flat body, quick release."""
    env = np.zeros(dur)
    attack = max(1, min(attack, dur))
    env[:attack] = _soft_attack(attack)
    plateau_end = max(attack, int(0.70 * dur))
    env[attack:plateau_end] = 1.0
    n_dec = dur - plateau_end
    if n_dec > 0:
        env[plateau_end:] = 0.5 * (1.0 + np.cos(np.pi * np.arange(1, n_dec + 1) / n_dec))
    return env


def _knock_envelope(rng, cfg: SynthConfig, style: ParticipantStyle, fs: float):
    n_imp = int(rng.integers(cfg.knock_impulses[0], cfg.knock_impulses[1] + 1))
    durs = sorted(
        (int(round(rng.uniform(*cfg.knock_impulse_ms) / 1000.0 * fs
                   * style.duration_scale)) for _ in range(n_imp)),
        reverse=True)  # lead with the longest impulse
    pieces = []
    for i, dur in enumerate(durs):
        # the first impulse ramps in gently; follow-ups strike sharply
        attack = min(max(4, int(0.034 * fs)), int(0.9 * max(dur, 16))) \
            if i == 0 else max(2, int(0.004 * fs))
        pieces.append(_tap_envelope(max(dur, 16), attack=attack))
        if i < n_imp - 1:
            gap = int(round(rng.uniform(*cfg.knock_gap_ms) / 1000.0 * fs))
            # the surface keeps ringing between strikes
            pieces.append(np.full(gap, 0.22))
    return np.concatenate(pieces)


def render_gesture(label: str, cfg: SynthConfig, rng,
                   style: ParticipantStyle | None = None) -> np.ndarray:
    """Render the clean multi-channel waveform of one gesture (unit scale).

    The returned block is [channels x span]; amplitude normalization against
    the noise floor happens at injection time.
    """
    fs = cfg.sample_rate_hz
    if style is None:
        style = ParticipantStyle(1.0, 1.0, 0.0, 1.0)

    # contact mechanics differ per class: fingertip taps ring near the top
    # of the burst band, knuckle knocks near the bottom, swipes broadband
    band_lo, band_hi = cfg.burst_band_hz
    mid = 0.5 * (band_lo + band_hi)
    carrier_band = (band_lo, band_hi)
    if label == "tap":
        carrier_band = (mid, band_hi)
    elif label == "knock":
        carrier_band = (band_lo, mid)

    shared_carrier = True
    if label in _SWIPE_AXES:
        dur = int(round(rng.uniform(*cfg.swipe_dur_ms) / 1000.0 * fs
                        * style.duration_scale))
        attack = max(8, int(round(0.060 * fs * style.attack_scale)))
        env = _swipe_envelope(dur, attack, fs)
        lag = int(round(rng.uniform(*cfg.swipe_lag_ms) / 1000.0 * fs
                        * style.lag_scale))
        axis, direction = _SWIPE_AXES[label]
        lead, trail = (axis[0], axis[1]) if direction > 0 else (axis[1], axis[0])
        lags = np.zeros(cfg.channels, dtype=int)
        amps = np.full(cfg.channels, 0.45)
        lags[lead], amps[lead] = 0, 1.0
        lags[trail], amps[trail] = lag, 1.6
        off_axis = [c for c in range(cfg.channels) if c not in axis]
        for c in off_axis:
            lags[c] = lag // 2
    elif label == "tap":
        dur = max(int(round(rng.uniform(*cfg.tap_dur_ms) / 1000.0 * fs
                            * style.duration_scale)), int(0.078 * fs))
        attack = min(max(4, int(round(0.045 * fs * style.attack_scale))),
                     int(0.5 * dur))
        env = _tap_envelope(dur, attack=attack)
        lags = np.zeros(cfg.channels, dtype=int)
        amps = np.ones(cfg.channels)
        shared_carrier = False
    elif label == "knock":
        env = _knock_envelope(rng, cfg, style, fs)
        lags = np.zeros(cfg.channels, dtype=int)
        amps = np.ones(cfg.channels)
        shared_carrier = False
    else:
        raise InvalidSpecError(f"unknown gesture class {label!r}")

    # contact compliance: the surface takes a few ms to start accelerating
    env = np.concatenate([np.zeros(max(1, int(round(0.010 * fs)))), env])

    max_lag = int(lags.max())
    span = len(env) + max_lag
    band = design_bandpass(FilterSpec(*carrier_band, fs))
    # swipes share one carrier so channel lags stay physically meaningful;
    # tap/knock reach the sensors over distinct paths, so their channels
    # carry independent in-band noise (the rectified aggregate then has no
    # common zero crossings)
    n_carriers = 1 if shared_carrier else cfg.channels
    carriers = filter_block(band, rng.standard_normal((n_carriers, span)))
    carriers = carriers / np.sqrt(np.mean(carriers ** 2))

    block = np.zeros((cfg.channels, span))
    for c in range(cfg.channels):
        carrier = carriers[0] if shared_carrier else carriers[c]
        base = env * carrier[lags[c]:lags[c] + len(env)]
        block[c, lags[c]:lags[c] + len(env)] = amps[c] * base
    return block


def generate_session(cfg: SynthConfig, participant_id: int,
                     session_id: int) -> tuple[Recording, EventAnnotation]:
    """Generate one session: noisy recording plus exact ground truth."""
    fs = cfg.sample_rate_hz
    style = participant_style(cfg, participant_id)
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, participant_id, session_id]))

    labels = [c for c in cfg.classes for _ in range(cfg.reps_per_class)]
    rng.shuffle(labels)

    blocks = [render_gesture(lab, cfg, rng, style) for lab in labels]

    onsets = []
    t = cfg.leadin_s
    for i, block in enumerate(blocks):
        onsets.append(t)
        gap = rng.uniform(cfg.inter_event_gap_s - cfg.gap_jitter_s,
                          cfg.inter_event_gap_s + cfg.gap_jitter_s)
        # re-space rather than drop: the next onset must clear this burst
        min_next = block.shape[1] / fs + 0.2
        t += max(gap, min_next, cfg.min_gap_s)

    total = int(round((onsets[-1] + blocks[-1].shape[1] / fs + cfg.tail_s) * fs))
    noise = rng.normal(0.0, cfg.noise_rms, size=(cfg.channels, total))

    band = design_bandpass(FilterSpec(*cfg.burst_band_hz, fs))
    noise_inband_power = float(np.mean(filter_block(band, noise) ** 2))

    samples = noise.copy()
    if cfg.snr_db != -math.inf:
        for onset, block in zip(onsets, blocks):
            snr = cfg.snr_db + style.amp_db + rng.uniform(-0.1, 0.1)
            p_sig = float(np.mean(block ** 2))
            alpha = math.sqrt(noise_inband_power * 10.0 ** (snr / 10.0) / p_sig)
            start = int(round(onset * fs))
            samples[:, start:start + block.shape[1]] += alpha * block
    else:
        # draw the same per-event randomness so layouts stay comparable
        for _ in blocks:
            rng.uniform(-0.1, 0.1)

    recording = Recording(
        participant_id=participant_id,
        session_id=session_id,
        sample_rate_hz=fs,
        samples=samples.astype(np.float32),
    )
    truth = EventAnnotation(
        sample_rate_hz=fs,
        timestamps=np.asarray(onsets, dtype=np.float64),
        labels=labels,
        source="ground-truth",
        recording_id=recording.key,
        durations_s=np.array([b.shape[1] / fs for b in blocks]),
    )
    return recording, truth


def generate_corpus(cfg: SynthConfig, participants: int, sessions: int,
                    out_dir) -> Path:
    """Write a P x S corpus (recordings, truth annotations, index manifest)."""
    out_dir = Path(out_dir)
    rec_dir = out_dir / "recordings"
    truth_dir = out_dir / "truth"
    rec_dir.mkdir(parents=True, exist_ok=True)
    truth_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for p in range(1, participants + 1):
        for s in range(1, sessions + 1):
            recording, truth = generate_session(cfg, p, s)
            key = recording_key(p, s)
            rec_path = rec_dir / f"{key}.vibr"
            truth_path = truth_dir / f"{key}.events.json"
            store_recording(recording, rec_path)
            save_annotation(truth, truth_path)
            entries.append({
                "id": key,
                "participant": p,
                "session": s,
                "path": str(rec_path.relative_to(out_dir)),
                "truth": str(truth_path.relative_to(out_dir)),
                "protocol": list(truth.labels),
            })
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, cfg.sample_rate_hz, cfg.channels, entries,
                   classes=cfg.classes)
    return manifest_path
