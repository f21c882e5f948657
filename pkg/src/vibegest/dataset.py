"""Recording persistence, window sequencing, dataset assembly, split plans.

Recording file format (little-endian, version 1):

    offset  size  field
    0       4     magic "VIBR"
    4       2     format version (u16)
    6       4     sample rate in Hz (u32)
    10      2     channel count (u16)
    12      8     samples per channel (u64)
    20      2     participant id (u16)
    22      2     session id (u16)
    24      ...   payload: frame-interleaved float32, frame t =
                  [ch0[t], ch1[t], ...]

The payload is trivially parseable from any language and supports streaming
reads; round trips are bit-exact.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InvalidArgumentError, ShapeError

log = logging.getLogger(__name__)

MAGIC = b"VIBR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIHQHH")

GESTURES = ("swipe-left", "swipe-right", "swipe-up", "swipe-down", "tap", "knock")
SWIPES = GESTURES[:4]


def gesture_classes(num_gestures: int = 6) -> tuple[str, ...]:
    """The 6-gesture vocabulary, or its 4-gesture swipe subset."""
    if num_gestures == 6:
        return GESTURES
    if num_gestures == 4:
        return SWIPES
    raise InvalidArgumentError(f"gesture set must be 4 or 6, got {num_gestures}")


def recording_key(participant_id: int, session_id: int) -> str:
    return f"p{participant_id:02d}_s{session_id:02d}"


@dataclass
class Recording:
    """A uniformly sampled multi-channel recording with provenance metadata."""

    participant_id: int
    session_id: int
    sample_rate_hz: float
    samples: np.ndarray  # [channels x T]

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float32))
        if self.samples.shape[1] == 0:
            raise ShapeError("recording must contain at least one sample")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate_hz

    @property
    def key(self) -> str:
        return recording_key(self.participant_id, self.session_id)


def store_recording(recording: Recording, path) -> None:
    """Write a recording in the binary format documented in this module."""
    c, t = recording.samples.shape
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, int(round(recording.sample_rate_hz)), c, t,
        recording.participant_id, recording.session_id,
    )
    payload = np.ascontiguousarray(recording.samples.T, dtype="<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def load_recording(path) -> Recording:
    """Read a recording; raises FormatError with a byte offset on corruption."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(
                f"{path}: truncated header at byte {len(header)} "
                f"(expected {_HEADER.size} bytes)"
            )
        magic, version, rate, channels, n_samples, participant, session = \
            _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version} at byte 4")
        if channels < 1:
            raise FormatError(f"{path}: invalid channel count {channels} at byte 10")
        if n_samples < 1:
            raise FormatError(f"{path}: invalid sample count {n_samples} at byte 12")
        expected = channels * n_samples * 4
        payload = f.read(expected)
        if len(payload) < expected:
            raise FormatError(
                f"{path}: truncated payload at byte {_HEADER.size + len(payload)} "
                f"(expected {_HEADER.size + expected} bytes total)"
            )
    frames = np.frombuffer(payload, dtype="<f4").reshape(n_samples, channels)
    return Recording(
        participant_id=participant,
        session_id=session,
        sample_rate_hz=float(rate),
        samples=frames.T.copy(),
    )


@dataclass
class GestureWindow:
    """A fixed-length labeled sample block, the model-ready unit."""

    samples: np.ndarray  # [channels x L]
    label: str | None
    participant_id: int
    session_id: int
    onset_sec: float


def sequence_windows(recording: Recording, annotation, window_ms: float,
                     pre_onset_frac: float = 0.1) -> list[GestureWindow]:
    """Extract one fixed-length window per annotated onset.

    A window starts ``pre_onset_frac * window_ms`` before its onset and spans
    exactly ``window_ms * fs / 1000`` samples. Events whose window would
    cross a recording boundary are dropped (with a log warning), not padded.
    """
    fs = recording.sample_rate_hz
    if annotation.sample_rate_hz != fs:
        raise ConfigError(
            f"annotation rate {annotation.sample_rate_hz} Hz does not match "
            f"recording rate {fs} Hz"
        )
    length_f = window_ms * fs / 1000.0
    length = int(round(length_f))
    if abs(length_f - length) > 1e-9 or length < 1:
        raise ConfigError(
            f"window of {window_ms} ms is not a whole number of samples at {fs} Hz"
        )
    offset = int(round(pre_onset_frac * length))
    total = recording.samples.shape[1]
    labels = annotation.labels if annotation.labels is not None \
        else [None] * len(annotation)

    windows = []
    dropped = 0
    for t_sec, label in zip(annotation.timestamps, labels):
        start = int(round(t_sec * fs)) - offset
        if start < 0 or start + length > total:
            dropped += 1
            continue
        windows.append(GestureWindow(
            samples=recording.samples[:, start:start + length].copy(),
            label=label,
            participant_id=recording.participant_id,
            session_id=recording.session_id,
            onset_sec=float(t_sec),
        ))
    if dropped:
        log.warning("%s: dropped %d event(s) whose window crossed a boundary",
                    recording.key, dropped)
    return windows


@dataclass
class WindowSet:
    """Dense array form of a labeled window collection."""

    samples: np.ndarray        # [N x C x L] float32
    label_idx: np.ndarray      # [N] int16, index into classes
    participant: np.ndarray    # [N] int16
    session: np.ndarray        # [N] int16
    onset: np.ndarray          # [N] float64 seconds
    classes: tuple[str, ...]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def keys(self) -> set:
        return {(int(p), int(s)) for p, s in zip(self.participant, self.session)}

    def subset_by_keys(self, keys) -> "WindowSet":
        keys = set(keys)
        mask = np.array([(int(p), int(s)) in keys
                         for p, s in zip(self.participant, self.session)])
        return WindowSet(
            samples=self.samples[mask],
            label_idx=self.label_idx[mask],
            participant=self.participant[mask],
            session=self.session[mask],
            onset=self.onset[mask],
            classes=self.classes,
        )

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            samples=self.samples, label_idx=self.label_idx,
            participant=self.participant, session=self.session,
            onset=self.onset, classes=np.asarray(self.classes),
        )

    @classmethod
    def load(cls, path) -> "WindowSet":
        with np.load(path, allow_pickle=False) as z:
            try:
                return cls(
                    samples=z["samples"], label_idx=z["label_idx"],
                    participant=z["participant"], session=z["session"],
                    onset=z["onset"], classes=tuple(str(c) for c in z["classes"]),
                )
            except KeyError as exc:
                raise FormatError(f"{path}: missing window-store array {exc}") from exc


def assemble_windows(windows: list[GestureWindow],
                     classes: tuple[str, ...] = GESTURES) -> WindowSet:
    """Stack labeled windows into a WindowSet, keeping only known classes."""
    kept = [w for w in windows if w.label in classes]
    if not kept:
        raise ConfigError("no windows carry a label from the requested gesture set")
    shapes = {w.samples.shape for w in kept}
    if len(shapes) != 1:
        raise ShapeError(f"windows have inconsistent shapes: {sorted(shapes)}")
    class_index = {c: i for i, c in enumerate(classes)}
    return WindowSet(
        samples=np.stack([w.samples for w in kept]).astype(np.float32),
        label_idx=np.array([class_index[w.label] for w in kept], dtype=np.int16),
        participant=np.array([w.participant_id for w in kept], dtype=np.int16),
        session=np.array([w.session_id for w in kept], dtype=np.int16),
        onset=np.array([w.onset_sec for w in kept], dtype=np.float64),
        classes=tuple(classes),
    )


# --- split plans -----------------------------------------------------------

Key = tuple[int, int]  # (participant_id, session_id)


@dataclass(frozen=True)
class Fold:
    train: tuple[Key, ...]
    test: tuple[Key, ...]


@dataclass
class SplitPlan:
    """Disjoint train/test key assignments for one cross-validation scheme."""

    method: str
    folds: list[Fold] = field(default_factory=list)

    def validate(self) -> None:
        for i, fold in enumerate(self.folds):
            overlap = set(fold.train) & set(fold.test)
            if overlap:
                raise ConfigError(f"fold {i}: train/test overlap {sorted(overlap)}")
            if not fold.train or not fold.test:
                raise ConfigError(f"fold {i}: empty train or test partition")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "folds": [
                {"train": [list(k) for k in f.train],
                 "test": [list(k) for k in f.test]}
                for f in self.folds
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitPlan":
        return cls(
            method=doc["method"],
            folds=[
                Fold(train=tuple((int(p), int(s)) for p, s in f["train"]),
                     test=tuple((int(p), int(s)) for p, s in f["test"]))
                for f in doc["folds"]
            ],
        )


def _sessions_by_participant(keys) -> dict[int, list[int]]:
    by_p: dict[int, list[int]] = {}
    for p, s in sorted(set(keys)):
        by_p.setdefault(p, []).append(s)
    return by_p


def make_splits(keys, method: str, n_folds: int = 5,
                calibration_session: int | None = None) -> SplitPlan:
    """Build a split plan over (participant, session) keys.

    PS      per participant: n_folds session folds, train/test within that
            participant only (each session tested exactly once).
    LOSO    one fold per participant; all their sessions form the test set.
    AOS     LOSO plus one calibration session of the held-out participant
            (their first session unless ``calibration_session`` is given)
            moved into the training set.
    POOLED  n_folds folds; fold k tests the k-th session chunk of every
            participant and trains on the rest, pooled into one model.
    """
    keys = sorted(set((int(p), int(s)) for p, s in keys))
    if not keys:
        raise ConfigError("empty dataset index")
    by_p = _sessions_by_participant(keys)
    method = method.upper()

    if method in ("PS", "POOLED"):
        chunks_by_p: dict[int, list[list[Key]]] = {}
        for p, sessions in by_p.items():
            if len(sessions) % n_folds != 0:
                raise ConfigError(
                    f"participant {p} has {len(sessions)} sessions; "
                    f"not divisible into {n_folds} folds"
                )
            per = len(sessions) // n_folds
            chunks_by_p[p] = [
                [(p, s) for s in sessions[i * per:(i + 1) * per]]
                for i in range(n_folds)
            ]
        folds = []
        if method == "PS":
            for p in by_p:
                all_keys = [k for chunk in chunks_by_p[p] for k in chunk]
                for i in range(n_folds):
                    test = chunks_by_p[p][i]
                    train = [k for k in all_keys if k not in test]
                    folds.append(Fold(train=tuple(train), test=tuple(test)))
        else:
            for i in range(n_folds):
                test = [k for p in by_p for k in chunks_by_p[p][i]]
                train = [k for k in keys if k not in set(test)]
                folds.append(Fold(train=tuple(train), test=tuple(test)))
    elif method == "LOSO":
        folds = []
        for p in by_p:
            test = [(p, s) for s in by_p[p]]
            train = [k for k in keys if k[0] != p]
            folds.append(Fold(train=tuple(train), test=tuple(test)))
    elif method == "AOS":
        folds = []
        for p in by_p:
            cal = calibration_session if calibration_session is not None \
                else min(by_p[p])
            if cal not in by_p[p]:
                raise ConfigError(
                    f"calibration session {cal} missing for participant {p}"
                )
            test = [(p, s) for s in by_p[p] if s != cal]
            train = [k for k in keys if k[0] != p] + [(p, cal)]
            folds.append(Fold(train=tuple(train), test=tuple(test)))
    else:
        raise ConfigError(f"unknown split method {method!r}")

    plan = SplitPlan(method=method, folds=folds)
    plan.validate()
    return plan


# --- corpus manifest -------------------------------------------------------


def write_manifest(path, sample_rate_hz: float, channels: int,
                   entries: list[dict], classes: tuple[str, ...] = GESTURES) -> None:
    """Write the dataset index: recording paths with participant/session ids."""
    doc = {
        "sample_rate_hz": sample_rate_hz,
        "channels": channels,
        "classes": list(classes),
        "recordings": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("sample_rate_hz", "channels", "recordings"):
        if key not in doc:
            raise FormatError(f"{path}: manifest missing field {key!r}")
    return doc


def manifest_keys(manifest: dict) -> list[Key]:
    return [(int(r["participant"]), int(r["session"]))
            for r in manifest["recordings"]]
