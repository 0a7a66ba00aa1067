"""Synthetic face generator and heuristic estimators."""

import numpy as np
import pytest

from facegan.synthetic import (HeuristicEstimators, Identity, NoFaceDetected,
                               landmark_pair_dataset, motion_walk, render_crop,
                               synthesize_landmarks, synthetic_video,
                               template_landmarks)


class TestLandmarks:
    def test_template_shape_and_range(self):
        pts = template_landmarks()
        assert pts.shape == (68, 2)
        assert np.abs(pts).max() <= 1.0

    def test_deterministic(self):
        au = np.random.default_rng(0).uniform(0, 1, 17)
        pose = np.array([0.1, -0.1, 0.05])
        a = synthesize_landmarks(Identity(), au, pose)
        b = synthesize_landmarks(Identity(), au, pose)
        assert np.array_equal(a, b)

    def test_jaw_drop_moves_chin_down(self):
        neutral = synthesize_landmarks(Identity(), np.zeros(17), np.zeros(3))
        au = np.zeros(17)
        au[15] = 1.0  # AU26 jaw drop
        dropped = synthesize_landmarks(Identity(), au, np.zeros(3))
        assert dropped[8, 1] > neutral[8, 1]

    def test_roll_rotates(self):
        neutral = synthesize_landmarks(Identity(), np.zeros(17), np.zeros(3))
        rolled = synthesize_landmarks(Identity(), np.zeros(17), np.array([0, 0, 0.5]))
        assert not np.allclose(neutral, rolled)
        # rotation preserves distances from the origin
        assert np.allclose(np.linalg.norm(neutral, axis=1),
                           np.linalg.norm(rolled, axis=1), atol=1e-9)


class TestDatasets:
    def test_pair_dataset_shapes(self):
        ds = landmark_pair_dataset(5, seed=0)
        assert len(ds) == 5
        l_s, l_d, m_d = ds[0]
        assert l_s.shape == (136,) and l_d.shape == (136,) and m_d.shape == (20,)

    def test_pair_dataset_self_pairs(self):
        ds = landmark_pair_dataset(50, seed=0, with_source_motion=True,
                                   self_pair_fraction=1.0)
        for l_s, l_d, m_d, m_s in ds:
            assert np.array_equal(l_s, l_d)
            assert np.array_equal(m_d, m_s)

    def test_motion_walk_in_range(self):
        for mv in motion_walk(np.random.default_rng(0), 20):
            assert np.all(mv.au >= 0) and np.all(mv.au <= 1)
            assert np.all(np.abs(mv.pose) <= 1)

    def test_synthetic_video(self):
        frames = synthetic_video(identity_seed=0, n_frames=3, frame_size=64)
        assert len(frames) == 3
        assert frames[0].shape == (64, 64, 3)
        assert frames[0].min() >= 0 and frames[0].max() <= 1


class TestEstimators:
    def test_on_render(self):
        img, labels, lm = render_crop(Identity(), np.zeros(17), np.zeros(3), size=64)
        est = HeuristicEstimators()
        pts = est.landmarks(img)
        assert pts.shape == (68, 2)
        assert np.abs(pts).max() <= 1.5
        seg = est.segment(img)
        assert seg.shape == (64, 64) and set(np.unique(seg)) <= {0, 1, 2}
        raw_au, raw_pose = est.motion(img)
        assert raw_au.shape == (17,) and raw_pose.shape == (3,)

    def test_no_face_on_blank(self):
        est = HeuristicEstimators()
        blank = np.zeros((64, 64, 3))
        with pytest.raises(NoFaceDetected):
            est.landmarks(blank)
        with pytest.raises(NoFaceDetected):
            est.motion(blank)
        with pytest.raises(NoFaceDetected):
            est.embed(blank)

    def test_embed_unit_norm_and_deterministic(self):
        img, _, _ = render_crop(Identity(), np.zeros(17), np.zeros(3), size=64)
        est = HeuristicEstimators()
        v1, v2 = est.embed(img), est.embed(img)
        assert np.array_equal(v1, v2)
        assert np.linalg.norm(v1) == pytest.approx(1.0)
