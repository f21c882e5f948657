import numpy as np
import pytest

from vibegest.synth import SynthConfig, generate_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """P=2, S=2 corpus at SNR 10 dB with the default 60 events per session."""
    root = tmp_path_factory.mktemp("corpus_small")
    cfg = SynthConfig(snr_db=10.0, seed=0)
    manifest = generate_corpus(cfg, participants=2, sessions=2, out_dir=root)
    return {"root": root, "manifest": manifest, "cfg": cfg,
            "participants": 2, "sessions": 2}


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Tiny 12-events-per-session corpus for fast end-to-end tests."""
    root = tmp_path_factory.mktemp("corpus_mini")
    cfg = SynthConfig(snr_db=10.0, seed=3, reps_per_class=2)
    manifest = generate_corpus(cfg, participants=2, sessions=2, out_dir=root)
    return {"root": root, "manifest": manifest, "cfg": cfg,
            "participants": 2, "sessions": 2}


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
