"""Shared fixtures: a small synthetic corpus and a quickly trained bundle.

Both are session-scoped; training here is a few dozen steps at 64x64 with
tiny widths, just enough to produce loadable checkpoints for pipeline,
service and CLI tests. Acceptance-grade training lives in test_acceptance.py.
"""

import numpy as np
import pytest

from facegan.data import build_corpus, load_corpus
from facegan.e2e import landmark_triples, mixer_samples, reenactor_samples
from facegan.geometry import default_connectivity
from facegan.mixer import MixerTrainConfig, train_mixer
from facegan.pipeline import PipelineBundle
from facegan.reenactor import ReenactorTrainConfig, train_reenactor
from facegan.synthetic import HeuristicEstimators, synthetic_video
from facegan.transformer import LandmarkTrainConfig, train_landmark_transformer

TINY_RES = 64


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    estimators = HeuristicEstimators()
    for i in range(2):
        frames = synthetic_video(identity_seed=i, n_frames=12, seed=100 + i)
        build_corpus(root, f"vid_{i}", frames, estimators, out_size=TINY_RES)
    return root


@pytest.fixture(scope="session")
def corpus_index(corpus_root):
    index = load_corpus(corpus_root)
    assert len(index.records()) > 0
    return index


@pytest.fixture(scope="session")
def bundle_dir(tmp_path_factory, corpus_index):
    out = tmp_path_factory.mktemp("bundle")
    rng = np.random.default_rng(0)

    lt_cfg = LandmarkTrainConfig(steps=30, hidden=(64, 64), seed=0,
                                 checkpoint_dir=str(out), checkpoint_interval=0)
    train_landmark_transformer(landmark_triples(corpus_index, 40, rng), lt_cfg,
                               default_connectivity())

    gr_cfg = ReenactorTrainConfig(schedule=((TINY_RES, 30),), fade_steps=5,
                                  base_width=8, depth=3, disc_base=8,
                                  n_disc_scales=2, seed=0,
                                  checkpoint_dir=str(out), checkpoint_interval=0)
    train_reenactor(reenactor_samples(corpus_index, 20, rng, TINY_RES), gr_cfg)

    gb_cfg = MixerTrainConfig(steps=30, resolution=TINY_RES, base_width=8,
                              depth=3, disc_base=8, seed=0,
                              checkpoint_dir=str(out), checkpoint_interval=0)
    train_mixer(mixer_samples(corpus_index, 20, rng, TINY_RES), gb_cfg)

    PipelineBundle.write_manifest(
        out, resolution=TINY_RES,
        transformer_ckpt="landmark_transformer_0000030.pt",
        reenactor_ckpt="reenactor_0000030.pt",
        mixer_ckpt="mixer_0000030.pt")
    return out


@pytest.fixture(scope="session")
def bundle(bundle_dir):
    return PipelineBundle.load(bundle_dir)
