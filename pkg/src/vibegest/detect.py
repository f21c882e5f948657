"""Robust event detection on continuous streams and corpus annotation.

Detection pipeline: band-pass -> per-sample mean of channel magnitudes ->
median/MAD thresholds -> sliding-window trigger with a refractory lockout.
Thresholds are T = median + gain * MAD, so the detected timestamps are
invariant under positive rescaling of the input.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import ChunkedStream, FilterSpec, design_bandpass, filter_block
from .errors import ConfigError, FormatError, InvalidArgumentError, InvalidSpecError, ShapeError

SOURCE_AUTOMATIC = "automatic"
SOURCE_CORRECTED = "manually-corrected"


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholding and sliding-window parameters for event detection."""

    band_hz: tuple[float, float] = (225.0, 375.0)
    high_gain: float = 4.0
    low_gain: float = 2.0
    occupancy_frac: float = 0.40
    det_window_ms: float = 100.0
    hop_ms: float = 10.0
    lockout_ms: float = 500.0
    streaming: bool = False
    history_s: float = 10.0

    def __post_init__(self):
        if not (self.high_gain > self.low_gain > 0):
            raise InvalidSpecError("need high_gain > low_gain > 0")
        if not (0 < self.occupancy_frac <= 1):
            raise InvalidSpecError("occupancy_frac must be in (0, 1]")
        if self.hop_ms > self.det_window_ms:
            raise InvalidSpecError("hop_ms must not exceed det_window_ms")
        if self.lockout_ms < self.det_window_ms:
            raise InvalidSpecError("lockout_ms must be >= det_window_ms")
        if self.band_hz[1] <= self.band_hz[0] or self.band_hz[0] <= 0:
            raise InvalidSpecError(f"invalid detection band {self.band_hz}")


@dataclass
class EventAnnotation:
    """Time-sorted gesture onsets for one recording, with optional labels.

    ``durations_s`` is optional extent metadata (ground-truth annotations
    carry it; detector output does not).
    """

    sample_rate_hz: float
    timestamps: np.ndarray
    labels: list | None = None
    source: str = SOURCE_AUTOMATIC
    recording_id: str | None = None
    durations_s: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.timestamps.ndim != 1:
            raise ShapeError("timestamps must be one-dimensional")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InvalidSpecError("timestamps must be strictly increasing")
        if self.labels is not None and len(self.labels) != len(self.timestamps):
            raise InvalidSpecError("one label per timestamp required")
        if self.durations_s is not None:
            self.durations_s = np.asarray(self.durations_s, dtype=np.float64)
            if len(self.durations_s) != len(self.timestamps):
                raise InvalidSpecError("one duration per timestamp required")

    def __len__(self) -> int:
        return len(self.timestamps)

    def min_gap_s(self) -> float:
        if len(self.timestamps) < 2:
            return np.inf
        return float(np.diff(self.timestamps).min())

    def to_dict(self) -> dict:
        labels = self.labels if self.labels is not None else [None] * len(self)
        events = []
        for i, (t, lab) in enumerate(zip(self.timestamps, labels)):
            e = {"t_sec": float(t), "label": lab, "source": self.source}
            if self.durations_s is not None:
                e["dur_sec"] = float(self.durations_s[i])
            events.append(e)
        return {
            "recording_id": self.recording_id,
            "sample_rate_hz": self.sample_rate_hz,
            "events": events,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EventAnnotation":
        try:
            events = doc["events"]
            ts = [e["t_sec"] for e in events]
            labels = [e.get("label") for e in events]
            durs = [e.get("dur_sec") for e in events]
            sources = {e.get("source", SOURCE_AUTOMATIC) for e in events}
            return cls(
                sample_rate_hz=float(doc["sample_rate_hz"]),
                timestamps=np.asarray(ts, dtype=np.float64),
                labels=labels if any(l is not None for l in labels) else None,
                source=SOURCE_CORRECTED if SOURCE_CORRECTED in sources else SOURCE_AUTOMATIC,
                recording_id=doc.get("recording_id"),
                durations_s=durs if all(d is not None for d in durs) and durs else None,
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed annotation document: {exc}") from exc


def save_annotation(annotation: EventAnnotation, path) -> None:
    Path(path).write_text(json.dumps(annotation.to_dict(), indent=1, sort_keys=True))


def load_annotation(path) -> EventAnnotation:
    return EventAnnotation.from_dict(json.loads(Path(path).read_text()))


def aggregate_abs_mean(block: np.ndarray) -> np.ndarray:
    """Mean of absolute values across channels at each time point."""
    block = np.atleast_2d(np.asarray(block))
    if block.size == 0:
        raise ShapeError("cannot aggregate an empty block")
    return np.abs(block).mean(axis=0)


def mad(signal: np.ndarray) -> float:
    """Median absolute deviation: median(|x - median(x)|)."""
    signal = np.asarray(signal)
    if signal.size == 0:
        raise InvalidArgumentError("MAD of an empty signal is undefined")
    return float(np.median(np.abs(signal - np.median(signal))))


def _candidate_windows(agg: np.ndarray, win: int, hop: int):
    """Window starts plus per-window peak; views, no copies."""
    windows = sliding_window_view(agg, win)[::hop]
    starts = np.arange(windows.shape[0]) * hop
    return starts, windows


def detect_events(stream, cfg: DetectorConfig = DetectorConfig(),
                  sample_rate_hz: float | None = None) -> EventAnnotation:
    """Detect gesture onsets in a continuous multi-channel stream.

    ``stream`` is a ChunkedStream or a [channels x T] array (then
    ``sample_rate_hz`` is required). A detection window triggers when its
    peak exceeds the high threshold and at least ``occupancy_frac`` of its
    samples exceed the low threshold; after a trigger the detector is locked
    for ``lockout_ms``. The emitted timestamp is the start of the first
    triggering window. Offline mode (default) computes the thresholds over
    the whole recording; ``cfg.streaming`` uses trailing-history statistics.
    """
    if isinstance(stream, ChunkedStream):
        samples = stream.concatenate()
        fs = stream.sample_rate_hz
    else:
        if sample_rate_hz is None:
            raise InvalidArgumentError("sample_rate_hz required for array input")
        samples = np.atleast_2d(np.asarray(stream))
        fs = float(sample_rate_hz)

    win = int(round(cfg.det_window_ms * fs / 1000.0))
    hop = max(1, int(round(cfg.hop_ms * fs / 1000.0)))
    if samples.shape[1] <= win:
        raise InvalidArgumentError(
            f"stream of {samples.shape[1]} samples is shorter than one "
            f"{win}-sample detection window"
        )

    band = FilterSpec(cfg.band_hz[0], cfg.band_hz[1], fs)
    filtered = filter_block(design_bandpass(band), samples)
    agg = aggregate_abs_mean(filtered)

    starts, windows = _candidate_windows(agg, win, hop)
    if cfg.streaming:
        events = _detect_streaming(agg, starts, windows, cfg, fs, win)
    else:
        med = float(np.median(agg))
        spread = mad(agg)
        t_high = med + cfg.high_gain * spread
        t_low = med + cfg.low_gain * spread
        peaks = windows.max(axis=1)
        occupancy = (windows > t_low).mean(axis=1)
        triggering = starts[(peaks > t_high) & (occupancy >= cfg.occupancy_frac)]
        events = _apply_lockout(triggering, cfg.lockout_ms * fs / 1000.0)

    return EventAnnotation(
        sample_rate_hz=fs,
        timestamps=np.asarray(events, dtype=np.float64) / fs,
        source=SOURCE_AUTOMATIC,
    )


def _apply_lockout(triggering: np.ndarray, lockout_samples: float) -> list:
    events = []
    for s in triggering:
        if not events or s >= events[-1] + lockout_samples:
            events.append(int(s))
    return events


def _detect_streaming(agg, starts, windows, cfg, fs, win):
    """Causal variant: thresholds from a trailing history buffer per window."""
    history = max(win + 1, int(round(cfg.history_s * fs)))
    lockout = cfg.lockout_ms * fs / 1000.0
    events: list[int] = []
    for s, w in zip(starts, windows):
        if events and s < events[-1] + lockout:
            continue
        past = agg[max(0, s + win - history): s + win]
        med = float(np.median(past))
        spread = float(np.median(np.abs(past - med)))
        t_high = med + cfg.high_gain * spread
        t_low = med + cfg.low_gain * spread
        if w.max() > t_high and (w > t_low).mean() >= cfg.occupancy_frac:
            events.append(int(s))
    return events


@dataclass
class AnnotationReport:
    """Corpus-level automation summary for the semi-automatic workflow."""

    total_files: int
    automatic_files: int
    flagged: list = field(default_factory=list)

    @property
    def automation_rate(self) -> float:
        return self.automatic_files / self.total_files if self.total_files else 1.0

    def to_dict(self) -> dict:
        return {
            "total_files": self.total_files,
            "automatic_files": self.automatic_files,
            "automation_rate": self.automation_rate,
            "flagged": list(self.flagged),
        }


def annotate_corpus(recording_paths, cfg: DetectorConfig = DetectorConfig(),
                    expected_count: int | None = None,
                    protocols: dict | None = None):
    """Run detection over recording files; flag files needing manual review.

    A file is flagged when ``expected_count`` is given and the detected count
    differs. When a protocol (the scripted per-session label order) is known
    and the count matches, labels are attached in order. Returns a dict of
    per-file annotations keyed by recording id plus an AnnotationReport.
    """
    from .dataset import load_recording, recording_key

    annotations: dict[str, EventAnnotation] = {}
    flagged = []
    for path in recording_paths:
        path = Path(path)
        try:
            rec = load_recording(path)
        except OSError as exc:
            raise OSError(f"cannot read recording {path}: {exc}") from exc
        ann = detect_events(rec.samples, cfg, sample_rate_hz=rec.sample_rate_hz)
        rec_id = recording_key(rec.participant_id, rec.session_id)
        ann.recording_id = rec_id
        needs_review = expected_count is not None and len(ann) != expected_count
        protocol = (protocols or {}).get(rec_id)
        if protocol is not None and len(protocol) == len(ann):
            ann.labels = list(protocol)
        annotations[rec_id] = ann
        if needs_review:
            flagged.append(rec_id)
    report = AnnotationReport(
        total_files=len(annotations),
        automatic_files=len(annotations) - len(flagged),
        flagged=flagged,
    )
    return annotations, report


def apply_corrections(annotation: EventAnnotation, correction: dict,
                      lockout_ms: float = 500.0,
                      match_tol_s: float = 1e-3) -> EventAnnotation:
    """Merge a manual correction manifest into an annotation.

    The manifest carries ``add`` (events with t_sec and optional label) and
    ``remove`` (timestamps matched within ``match_tol_s``) directives. The
    merged annotation keeps strictly increasing timestamps and must respect
    the lockout gap, otherwise the correction is rejected.
    """
    ts = list(annotation.timestamps)
    labels = list(annotation.labels) if annotation.labels is not None \
        else [None] * len(ts)

    for directive in correction.get("remove", []):
        target = float(directive["t_sec"])
        dist = [abs(t - target) for t in ts]
        if not dist or min(dist) > match_tol_s:
            raise ConfigError(f"no event within {match_tol_s}s of t={target} to remove")
        i = int(np.argmin(dist))
        ts.pop(i)
        labels.pop(i)

    for directive in correction.get("add", []):
        ts.append(float(directive["t_sec"]))
        labels.append(directive.get("label"))

    order = np.argsort(ts)
    ts = [ts[i] for i in order]
    labels = [labels[i] for i in order]
    merged = EventAnnotation(
        sample_rate_hz=annotation.sample_rate_hz,
        timestamps=np.asarray(ts),
        labels=labels if any(l is not None for l in labels) else None,
        source=SOURCE_CORRECTED,
        recording_id=annotation.recording_id,
    )
    if merged.min_gap_s() < lockout_ms / 1000.0:
        raise ConfigError(
            f"corrected events violate the {lockout_ms} ms lockout gap"
        )
    return merged
