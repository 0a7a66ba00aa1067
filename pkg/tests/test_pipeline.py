"""Bundle loading, validation and the full inference chain."""

import json

import numpy as np
import pytest

from facegan.data import load_image, sample_pair
from facegan.geometry import LandmarkSet, MotionVector
from facegan.pipeline import PipelineBundle, get_device, make_estimators


class TestBundleLoading:
    def test_loaded_modules_in_eval_mode(self, bundle):
        assert not bundle.transformer.training
        assert not bundle.reenactor.training
        assert not bundle.mixer.training
        assert bundle.resolution == 64

    def test_resolution_mismatch_rejected(self, bundle_dir, tmp_path):
        manifest = json.loads((bundle_dir / "bundle.json").read_text())
        manifest["resolution"] = 128
        bad = tmp_path / "bad_bundle"
        bad.mkdir()
        for p in bundle_dir.glob("*.pt"):
            (bad / p.name).write_bytes(p.read_bytes())
        (bad / "bundle.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError):
            PipelineBundle.load(bad)

    def test_unknown_estimators(self):
        with pytest.raises(ValueError):
            make_estimators("external")

    def test_device_env(self, monkeypatch):
        monkeypatch.setenv("FACEGAN_DEVICE", "cpu")
        assert get_device() == "cpu"
        monkeypatch.delenv("FACEGAN_DEVICE")
        assert get_device() == "cpu"


class TestInference:
    def test_full_chain_outputs(self, bundle, corpus_index):
        rng = np.random.default_rng(0)
        src, drv = sample_pair(corpus_index, rng)
        img = load_image(src.crop_path)
        out = bundle.reenact(img, src.landmarks, drv.motion)
        assert out["output"].shape == (64, 64, 3)
        assert out["output"].min() >= 0.0 and out["output"].max() <= 1.0
        assert out["segmentation"].shape == (3, 64, 64)
        assert np.allclose(out["segmentation"].sum(axis=0), 1.0, atol=1e-5)
        assert out["mask"].shape == (64, 64)
        assert isinstance(out["landmarks"], LandmarkSet)

    def test_wrong_resolution_rejected(self, bundle):
        lm = LandmarkSet(points=np.zeros((68, 2)))
        mv = MotionVector(au=np.zeros(17), pose=np.zeros(3))
        with pytest.raises(ValueError):
            bundle.reenact(np.zeros((32, 32, 3)), lm, mv)

    def test_ablation_needs_driving_landmarks(self, bundle):
        lm = LandmarkSet(points=np.zeros((68, 2)))
        mv = MotionVector(au=np.zeros(17), pose=np.zeros(3))
        with pytest.raises(ValueError):
            bundle.reenact(np.zeros((64, 64, 3)), lm, mv,
                           use_landmark_transformer=False)

    def test_deterministic(self, bundle, corpus_index):
        rng = np.random.default_rng(1)
        src, drv = sample_pair(corpus_index, rng)
        img = load_image(src.crop_path)
        a = bundle.reenact(img, src.landmarks, drv.motion)["output"]
        b = bundle.reenact(img, src.landmarks, drv.motion)["output"]
        assert np.array_equal(a, b)

    def test_transform_landmarks_shape(self, bundle):
        lm = LandmarkSet(points=np.random.default_rng(0).uniform(-0.5, 0.5, (68, 2)))
        mv = MotionVector(au=np.full(17, 0.5), pose=np.zeros(3))
        out = bundle.transform_landmarks(lm, mv)
        assert out.points.shape == (68, 2)

    def test_custom_background(self, bundle, corpus_index):
        rng = np.random.default_rng(2)
        src, drv = sample_pair(corpus_index, rng)
        img = load_image(src.crop_path)
        bg = np.flip(img, axis=1).copy()
        out = bundle.reenact(img, src.landmarks, drv.motion, background_img=bg)
        assert out["output"].shape == (64, 64, 3)
