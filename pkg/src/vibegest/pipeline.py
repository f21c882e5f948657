"""Declarative pipeline configuration and window materialization.

One JSON document configures the whole chain: filter placement and band,
detector parameters, window sequencing, normalization, decimation, model,
and training. Unknown keys are rejected with their dotted path so config
typos fail loudly before any compute happens.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .dataset import (Recording, WindowSet, assemble_windows, gesture_classes,
                      load_recording, read_manifest, sequence_windows)
from .detect import DetectorConfig, load_annotation
from .dsp import (FilterSpec, design_bandpass, downsample, filter_block,
                  minmax_normalize)
from .errors import ConfigError
from .model import SepCnnConfig
from .train import TrainConfig


@dataclass(frozen=True)
class FilterSection:
    enabled: bool = True
    placement: str = "stream"  # apply to the continuous stream or per window
    low_hz: float = 225.0
    high_hz: float = 375.0

    def __post_init__(self):
        if self.placement not in ("stream", "window"):
            raise ConfigError(
                f"filter.placement must be 'stream' or 'window', got {self.placement!r}"
            )


@dataclass(frozen=True)
class WindowSection:
    window_ms: float = 1250.0
    pre_onset_frac: float = 0.1

    def __post_init__(self):
        if self.window_ms <= 0:
            raise ConfigError("window.window_ms must be positive")
        if not (0.0 <= self.pre_onset_frac < 1.0):
            raise ConfigError("window.pre_onset_frac must be in [0, 1)")


@dataclass(frozen=True)
class DownsampleSection:
    factor: int = 1
    anti_alias: bool = False

    def __post_init__(self):
        if self.factor < 1:
            raise ConfigError("downsample.factor must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterSection = FilterSection()
    detector: DetectorConfig = DetectorConfig()
    window: WindowSection = WindowSection()
    normalize: bool = True
    downsample: DownsampleSection = DownsampleSection()
    model: SepCnnConfig = SepCnnConfig()
    train: TrainConfig = TrainConfig()


_SECTIONS = {
    "filter": FilterSection,
    "detector": DetectorConfig,
    "window": WindowSection,
    "downsample": DownsampleSection,
    "model": SepCnnConfig,
    "train": TrainConfig,
}


def _build_section(cls, doc: dict, prefix: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config key {prefix}.{sorted(unknown)[0]!r}")
    kwargs = dict(doc)
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    return cls(**kwargs)


def pipeline_config_from_dict(doc: dict) -> PipelineConfig:
    """Strict parse: every key must be a known section field."""
    allowed = set(_SECTIONS) | {"normalize"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"config section {name!r} must be an object")
            kwargs[name] = _build_section(cls, doc[name], name)
    if "normalize" in doc:
        if not isinstance(doc["normalize"], bool):
            raise ConfigError("config key 'normalize' must be true or false")
        kwargs["normalize"] = doc["normalize"]
    return PipelineConfig(**kwargs)


def load_pipeline_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return pipeline_config_from_dict(doc)


def pipeline_config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def annotation_path_for(entry: dict, base_dir: Path, annotations) -> Path:
    """Resolve the annotation file for a manifest entry.

    ``annotations`` is either the literal string "truth" (use the generator's
    ground truth referenced by the manifest) or a directory of
    ``<id>.events.json`` files produced by the annotate step.
    """
    if annotations == "truth":
        if "truth" not in entry:
            raise ConfigError(f"recording {entry['id']} carries no truth annotation")
        return base_dir / entry["truth"]
    return Path(annotations) / f"{entry['id']}.events.json"


def build_windows(manifest_path, annotations, pcfg: PipelineConfig,
                  gestures: int = 6) -> WindowSet:
    """Materialize the model-ready window set for one pipeline configuration.

    Fixed block order: filter -> (events from annotations) -> windowing ->
    normalization -> downsampling; only the filter may move between the
    stream and the individual windows.
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base_dir = manifest_path.parent
    fs = float(manifest["sample_rate_hz"])

    cascade = None
    if pcfg.filter.enabled:
        cascade = design_bandpass(
            FilterSpec(pcfg.filter.low_hz, pcfg.filter.high_hz, fs))

    windows = []
    for entry in manifest["recordings"]:
        rec = load_recording(base_dir / entry["path"])
        ann = load_annotation(annotation_path_for(entry, base_dir, annotations))
        if cascade is not None and pcfg.filter.placement == "stream":
            rec = Recording(
                participant_id=rec.participant_id,
                session_id=rec.session_id,
                sample_rate_hz=rec.sample_rate_hz,
                samples=filter_block(cascade, rec.samples),
            )
        ws = sequence_windows(rec, ann, pcfg.window.window_ms,
                              pcfg.window.pre_onset_frac)
        for w in ws:
            block = w.samples
            if cascade is not None and pcfg.filter.placement == "window":
                block = filter_block(cascade, block)
            if pcfg.normalize:
                block = minmax_normalize(block)
            if pcfg.downsample.factor > 1:
                block = downsample(block, pcfg.downsample.factor,
                                   anti_alias=pcfg.downsample.anti_alias)
            w.samples = block
        windows.extend(ws)

    return assemble_windows(windows, classes=gesture_classes(gestures))
