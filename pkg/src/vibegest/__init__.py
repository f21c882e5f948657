"""Surface-vibration gesture recognition: DSP, event detection, separable CNN."""

from ._accel import backend as accel_backend
from .dataset import (GESTURES, Fold, GestureWindow, Recording, SplitPlan,
                      WindowSet, load_recording, make_splits, sequence_windows,
                      store_recording)
from .detect import (DetectorConfig, EventAnnotation, aggregate_abs_mean,
                     annotate_corpus, apply_corrections, detect_events, mad)
from .dsp import (BiquadCascade, BiquadSection, ChunkedStream, FilterSpec,
                  StreamFilter, design_bandpass, downsample, filter_block,
                  minmax_normalize)
from .model import (SepCnnConfig, SepCnnModel, build_model, count_parameters,
                    forward, load_checkpoint, loss_and_grad, save_checkpoint)
from .pipeline import PipelineConfig, build_windows, load_pipeline_config
from .search import SearchSpace, enumerate_configs, run_search
from .synth import SynthConfig, generate_corpus, generate_session
from .train import (FoldMetrics, TrainConfig, adamw_init, adamw_step, evaluate,
                    train_fold)

__version__ = "0.1.0"
