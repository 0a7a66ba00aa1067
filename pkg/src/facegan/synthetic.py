"""Synthetic faces for desk-scale training, tests and demos.

A parametric 68-point template face is driven by normalized AU/pose values:
AUs move brows, eyes and mouth; pose angles rotate and foreshorten the whole
point set. A matching renderer turns landmarks into flat-shaded face images
with ground-truth segmentation, and heuristic estimators recover approximate
landmarks/motion/segmentation from any image so the full pipeline can run
without third-party detectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (NUM_AUS, NUM_POSE, LandmarkSet, MotionVector)

# template color palette (also used by the heuristic segmenter)
SKIN = np.array([0.85, 0.65, 0.50])
HAIR = np.array([0.25, 0.15, 0.10])
MOUTH_COLOR = np.array([0.65, 0.25, 0.25])
EYE_COLOR = np.array([0.15, 0.15, 0.20])

# AU channel indices (ascending OpenFace order)
AU01, AU02, AU04 = 0, 1, 2
AU12, AU25, AU26, AU45 = 8, 14, 15, 16


def _ellipse_points(cx, cy, rx, ry, n, start=0.0):
    ang = start + 2 * math.pi * np.arange(n) / n
    return np.stack([cx + rx * np.cos(ang), cy + ry * np.sin(ang)], axis=1)


def template_landmarks() -> np.ndarray:
    """Neutral 68-point face in [-1, 1] coordinates (iBUG layout)."""
    pts = np.zeros((68, 2))
    phi = math.pi * np.arange(17) / 16
    pts[0:17, 0] = -0.62 * np.cos(phi)
    pts[0:17, 1] = -0.05 + 0.70 * np.sin(phi)
    pts[17:22, 0] = np.linspace(-0.46, -0.12, 5)
    pts[17:22, 1] = -0.42 - 0.04 * np.sin(math.pi * np.linspace(0, 1, 5))
    pts[22:27, 0] = np.linspace(0.12, 0.46, 5)
    pts[22:27, 1] = -0.42 - 0.04 * np.sin(math.pi * np.linspace(0, 1, 5))
    pts[27:31, 0] = 0.0
    pts[27:31, 1] = np.linspace(-0.32, 0.02, 4)
    pts[31:36, 0] = np.linspace(-0.12, 0.12, 5)
    pts[31:36, 1] = 0.10
    pts[36:42] = _ellipse_points(-0.28, -0.28, 0.10, 0.045, 6, start=math.pi)
    pts[42:48] = _ellipse_points(0.28, -0.28, 0.10, 0.045, 6, start=math.pi)
    pts[48:60] = _ellipse_points(0.0, 0.38, 0.22, 0.10, 12, start=math.pi)
    pts[60:68] = _ellipse_points(0.0, 0.38, 0.13, 0.05, 8, start=math.pi)
    return pts


@dataclass(frozen=True)
class Identity:
    """Per-identity shape and appearance parameters."""
    scale_x: float = 1.0
    scale_y: float = 1.0
    skin_shift: float = 0.0

    @classmethod
    def from_seed(cls, seed: int) -> "Identity":
        rng = np.random.default_rng(seed)
        return cls(scale_x=float(rng.uniform(0.88, 1.12)),
                   scale_y=float(rng.uniform(0.88, 1.12)),
                   skin_shift=float(rng.uniform(-0.08, 0.08)))


MAX_ANGLE = 0.5  # radians reachable at |pose| = 1 before normalization by pi

# Every AU channel additionally drives a small fixed smooth displacement
# field, so the landmark <-> AU mapping is well-posed in both directions.
_AU_BASIS = np.random.default_rng(12345).normal(0.0, 0.012, (17, 68, 2))


def synthesize_landmarks(identity: Identity, au: np.ndarray,
                         pose: np.ndarray) -> np.ndarray:
    """Deterministic landmarks for (identity, normalized AU, normalized pose)."""
    au = np.asarray(au, dtype=np.float64)
    pose = np.asarray(pose, dtype=np.float64)
    pts = template_landmarks()
    pts[:, 0] *= identity.scale_x
    pts[:, 1] *= identity.scale_y

    # brows
    pts[17:27, 1] -= 0.05 * (au[AU01] + au[AU02]) / 2
    pts[17:27, 1] += 0.04 * au[AU04]
    # smile: pull mouth corners out and up
    for corner, sign in ((48, -1), (54, 1), (60, -1), (64, 1)):
        pts[corner, 0] += sign * 0.06 * au[AU12]
        pts[corner, 1] -= 0.05 * au[AU12]
    # jaw drop / lips part: lower half of the mouth and the chin move down
    drop = 0.10 * au[AU26] + 0.04 * au[AU25]
    lower_outer = [i for i in range(48, 60) if template_landmarks()[i, 1] > 0.38]
    lower_inner = [i for i in range(60, 68) if template_landmarks()[i, 1] > 0.38]
    pts[lower_outer, 1] += drop
    pts[lower_inner, 1] += drop
    pts[6:11, 1] += 0.5 * drop
    pts += np.tensordot(au, _AU_BASIS, axes=1)
    # blink: squash the eyes vertically
    for sl, cy in ((slice(36, 42), pts[36:42, 1].mean()), (slice(42, 48), pts[42:48, 1].mean())):
        pts[sl, 1] = cy + (pts[sl, 1] - cy) * (1.0 - 0.9 * au[AU45])

    pitch, yaw, roll = pose * MAX_ANGLE  # normalized pose -> radians
    # foreshortening plus a small translation for out-of-plane rotation
    pts[:, 0] = pts[:, 0] * math.cos(yaw) + 0.15 * math.sin(yaw)
    pts[:, 1] = pts[:, 1] * math.cos(pitch) + 0.15 * math.sin(pitch)
    c, s = math.cos(roll), math.sin(roll)
    pts = pts @ np.array([[c, -s], [s, c]]).T
    return pts


def _fill_ellipse(img, labels, cx, cy, rx, ry, color, label=None):
    h, w = labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    mask = ((xs - cx) / max(rx, 1e-6)) ** 2 + ((ys - cy) / max(ry, 1e-6)) ** 2 <= 1.0
    img[mask] = color
    if label is not None:
        labels[mask] = label


def render_face(landmarks_px: np.ndarray, size: tuple[int, int],
                identity: Identity = Identity()) -> tuple[np.ndarray, np.ndarray]:
    """Flat-shaded face image plus segmentation labels (0 bg, 1 face, 2 hair).

    `landmarks_px` are pixel coordinates in the output image.
    """
    h, w = size
    ys = np.linspace(0.25, 0.55, h)[:, None]
    img = np.broadcast_to(ys, (h, w)).copy()[..., None] * np.array([0.9, 1.0, 1.1])
    img = np.clip(img, 0, 1)
    labels = np.zeros((h, w), dtype=np.uint8)

    jaw = landmarks_px[0:17]
    cx, cy = jaw.mean(axis=0)
    rx = (jaw[:, 0].max() - jaw[:, 0].min()) / 2 * 1.05
    face_top = landmarks_px[17:27, 1].min()
    ry = (jaw[:, 1].max() - face_top) / 2 * 1.25
    fcy = (jaw[:, 1].max() + face_top) / 2
    skin = np.clip(SKIN + identity.skin_shift, 0, 1)
    # hair cap above the face
    _fill_ellipse(img, labels, cx, fcy - 0.55 * ry, rx * 1.08, ry * 0.85, HAIR, label=2)
    _fill_ellipse(img, labels, cx, fcy, rx, ry, skin, label=1)

    for sl in (slice(36, 42), slice(42, 48)):
        eye = landmarks_px[sl]
        ecx, ecy = eye.mean(axis=0)
        erx = (eye[:, 0].max() - eye[:, 0].min()) / 2
        ery = max((eye[:, 1].max() - eye[:, 1].min()) / 2, 0.015 * h)
        _fill_ellipse(img, labels, ecx, ecy, erx, ery, EYE_COLOR)
    mouth = landmarks_px[48:60]
    mcx, mcy = mouth.mean(axis=0)
    mrx = (mouth[:, 0].max() - mouth[:, 0].min()) / 2
    mry = max((mouth[:, 1].max() - mouth[:, 1].min()) / 2, 0.01 * h)
    _fill_ellipse(img, labels, mcx, mcy, mrx, mry, MOUTH_COLOR)
    return img, labels


def normalized_to_px(pts: np.ndarray, size: int) -> np.ndarray:
    return (pts + 1.0) / 2.0 * (size - 1)


def render_crop(identity: Identity, au, pose, size: int = 256):
    """Crop-space sample: (image HxWx3, labels HxW, LandmarkSet)."""
    lm = synthesize_landmarks(identity, np.asarray(au), np.asarray(pose))
    img, labels = render_face(normalized_to_px(lm, size), (size, size), identity)
    return img, labels, LandmarkSet(points=lm)


def motion_walk(rng: np.random.Generator, n: int) -> list[MotionVector]:
    """Smooth random walk over AU/pose space for synthetic tracks."""
    au = rng.uniform(0.1, 0.5, NUM_AUS)
    pose = rng.uniform(-0.05, 0.05, NUM_POSE)
    out = []
    for _ in range(n):
        au = np.clip(au + rng.normal(0, 0.06, NUM_AUS), 0.0, 1.0)
        pose = np.clip(pose + rng.normal(0, 0.015, NUM_POSE), -0.12, 0.12)
        out.append(MotionVector(au=au.copy(), pose=pose.copy()))
    return out


def landmark_pair_dataset(n_pairs: int, seed: int = 0, identity_seed: int = 1,
                          with_source_motion: bool = False,
                          self_pair_fraction: float = 0.2) -> list[tuple]:
    """Same-identity (l_s, l_d, motion_d) triples with known pose perturbations
    and AU-correlated mouth/eye offsets, for transformer overfit runs.

    A `self_pair_fraction` share of the pairs uses the source's own motion as
    the driver (zero expected displacement), so the trained transformer also
    learns the self-motion identity instead of extrapolating to it.
    With `with_source_motion` each tuple gains a fourth element, the source's
    own motion vector (useful for self-motion identity checks).
    """
    rng = np.random.default_rng(seed)
    identity = Identity.from_seed(identity_seed)
    triples = []
    for _ in range(n_pairs):
        au_s = rng.uniform(0.0, 1.0, NUM_AUS)
        pose_s = rng.uniform(-0.12, 0.12, NUM_POSE)
        if rng.uniform() < self_pair_fraction:
            au_d, pose_d = au_s, pose_s
        else:
            au_d = rng.uniform(0.0, 1.0, NUM_AUS)
            pose_d = rng.uniform(-0.12, 0.12, NUM_POSE)
        l_s = synthesize_landmarks(identity, au_s, pose_s).reshape(-1)
        l_d = synthesize_landmarks(identity, au_d, pose_d).reshape(-1)
        motion_d = MotionVector(au=au_d, pose=pose_d).as_vector()
        if with_source_motion:
            motion_s = MotionVector(au=au_s, pose=pose_s).as_vector()
            triples.append((l_s, l_d, motion_d, motion_s))
        else:
            triples.append((l_s, l_d, motion_d))
    return triples


def synthetic_video(identity_seed: int, n_frames: int, frame_size: int = 256,
                    face_scale: float = 0.6, seed: int = 0) -> list[np.ndarray]:
    """Full frames with the face occupying a sub-region, for the data pipeline."""
    rng = np.random.default_rng(seed)
    identity = Identity.from_seed(identity_seed)
    frames = []
    center = np.array([frame_size * 0.5, frame_size * 0.45])
    for mv in motion_walk(rng, n_frames):
        lm = synthesize_landmarks(identity, mv.au, mv.pose)
        lm_px = center + lm * face_scale * frame_size
        img, _ = render_face(lm_px, (frame_size, frame_size), identity)
        frames.append(img)
    return frames


# --- heuristic stub estimators --------------------------------------------

class NoFaceDetected(RuntimeError):
    pass


class HeuristicEstimators:
    """Deterministic estimators that work on any image.

    Landmarks are the template fitted to the skin-colored region; motion is
    derived from region statistics; segmentation classifies pixels by color
    distance to the synthetic palette. Accurate on synthetic renders, merely
    plausible elsewhere; pluggable with real detectors in production.
    """

    def __init__(self, min_face_fraction: float = 0.01):
        self.min_face_fraction = min_face_fraction

    def _skin_mask(self, img: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(img - SKIN, axis=-1)
        return d < 0.35

    def landmarks(self, img: np.ndarray) -> np.ndarray:
        h, w = img.shape[:2]
        mask = self._skin_mask(img)
        if mask.mean() < self.min_face_fraction:
            raise NoFaceDetected("no skin-colored region found")
        ys, xs = np.nonzero(mask)
        cx, cy = xs.mean(), ys.mean()
        sx = max(xs.std() * 2.2, 1.0)
        sy = max(ys.std() * 2.2, 1.0)
        pts = template_landmarks()
        px = np.stack([cx + pts[:, 0] * sx / 1.24, cy + pts[:, 1] * sy / 1.45], axis=1)
        return 2.0 * px / np.array([w - 1, h - 1]) - 1.0

    def motion(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h, w = img.shape[:2]
        mask = self._skin_mask(img)
        if mask.mean() < self.min_face_fraction:
            raise NoFaceDetected("no skin-colored region found")
        ys, xs = np.nonzero(mask)
        cx, cy = xs.mean() / w, ys.mean() / h
        # mouth openness from the red-dominant region height
        mouth = np.linalg.norm(img - MOUTH_COLOR, axis=-1) < 0.25
        mouth_h = (mouth.any(axis=1).sum() / h) if mouth.any() else 0.0
        eye = np.linalg.norm(img - EYE_COLOR, axis=-1) < 0.2
        eye_h = (eye.any(axis=1).sum() / h) if eye.any() else 0.0
        gray = img.mean(axis=-1)
        cells = [gray[i * h // 4:(i + 1) * h // 4, j * w // 4:(j + 1) * w // 4].mean()
                 for i in range(4) for j in range(4)]
        raw_au = np.zeros(NUM_AUS)
        raw_au[:16] = np.clip(np.array(cells) * 5.0, 0.0, 5.0)
        raw_au[AU26] = np.clip(mouth_h * 40.0, 0.0, 5.0)
        raw_au[AU45] = np.clip((0.08 - eye_h) * 60.0, 0.0, 5.0)
        raw_pose = np.clip(np.array([(cy - 0.45) * 4.0, (cx - 0.5) * 4.0, 0.0]),
                           -math.pi, math.pi)
        return raw_au, raw_pose

    def segment(self, img: np.ndarray) -> np.ndarray:
        dist = np.stack([
            np.full(img.shape[:2], 0.40),                 # background threshold
            np.linalg.norm(img - SKIN, axis=-1),
            np.linalg.norm(img - HAIR, axis=-1),
        ])
        # face-internal features (eyes, mouth) count as face
        feat = np.minimum(np.linalg.norm(img - MOUTH_COLOR, axis=-1),
                          np.linalg.norm(img - EYE_COLOR, axis=-1))
        dist[1] = np.minimum(dist[1], feat)
        return dist.argmin(axis=0).astype(np.uint8)

    def embed(self, img: np.ndarray) -> np.ndarray:
        """Cheap identity embedding: 8x8 gray thumbnail, unit-normalized."""
        gray = np.asarray(img).mean(axis=-1)
        h, w = gray.shape
        thumb = gray[:h - h % 8, :w - w % 8].reshape(8, h // 8, 8, w // 8).mean(axis=(1, 3))
        v = thumb.reshape(-1)
        v = v - v.mean()
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise NoFaceDetected("blank image")
        return v / n
