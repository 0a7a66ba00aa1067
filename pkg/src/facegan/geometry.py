"""Landmark, motion-vector and heatmap primitives shared by every module.

Conventions:
  * 68 iBUG landmarks, coordinates normalized to [-1, 1] relative to the crop.
  * Flattened landmark vectors are interleaved (x0, y0, x1, y1, ...), length 136.
  * Motion vectors are 17 AU intensities in [0, 1] (raw estimator scale / 5)
    concatenated with 3 pose angles in [-1, 1] (radians / pi).
  * Heatmaps combine per-keypoint Gaussians with a per-pixel max, so values
    stay in [0, 1] and an on-grid keypoint peaks at exactly 1.0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

NUM_LANDMARKS = 68
LANDMARK_DIM = 2 * NUM_LANDMARKS  # 136
NUM_AUS = 17
NUM_POSE = 3
MOTION_DIM = NUM_AUS + NUM_POSE  # 20

AU_RAW_MAX = 5.0  # OpenFace-style intensity scale

# OpenFace intensity channels in ascending AU order, with FACS names.
AU_NAMES: list[tuple[str, str]] = [
    ("AU01", "inner brow raiser"),
    ("AU02", "outer brow raiser"),
    ("AU04", "brow lowerer"),
    ("AU05", "upper lid raiser"),
    ("AU06", "cheek raiser"),
    ("AU07", "lid tightener"),
    ("AU09", "nose wrinkler"),
    ("AU10", "upper lip raiser"),
    ("AU12", "lip corner puller"),
    ("AU14", "dimpler"),
    ("AU15", "lip corner depressor"),
    ("AU17", "chin raiser"),
    ("AU20", "lip stretcher"),
    ("AU23", "lip tightener"),
    ("AU25", "lips part"),
    ("AU26", "jaw drop"),
    ("AU45", "blink"),
]
POSE_NAMES: list[tuple[str, str]] = [
    ("pose_Rx", "pitch"),
    ("pose_Ry", "yaw"),
    ("pose_Rz", "roll"),
]


class ClampCounter:
    """Counts out-of-range raw motion values that had to be clamped."""

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


# Module-level default counter; callers may supply their own.
clamp_warnings = ClampCounter()


@dataclass(frozen=True)
class LandmarkSet:
    """68 facial keypoints in normalized [-1, 1] crop coordinates."""

    points: np.ndarray  # (68, 2) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (NUM_LANDMARKS, 2):
            raise ValueError(f"expected ({NUM_LANDMARKS}, 2) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def flatten(self) -> np.ndarray:
        """Interleaved (x0, y0, x1, y1, ...) vector of length 136."""
        return self.points.reshape(-1).copy()

    @classmethod
    def unflatten(cls, vec) -> "LandmarkSet":
        v = np.asarray(vec, dtype=np.float64).reshape(-1)
        if v.shape != (LANDMARK_DIM,):
            raise ValueError(f"expected length-{LANDMARK_DIM} vector, got {v.shape}")
        return cls(points=v.reshape(NUM_LANDMARKS, 2))

    def translated(self, dx: float, dy: float) -> "LandmarkSet":
        return LandmarkSet(self.points + np.array([dx, dy]))

    def scaled(self, s: float) -> "LandmarkSet":
        return LandmarkSet(self.points * s)


def flatten(lm: LandmarkSet) -> np.ndarray:
    return lm.flatten()


def unflatten(vec) -> LandmarkSet:
    return LandmarkSet.unflatten(vec)


@dataclass(frozen=True)
class MotionVector:
    """17 normalized AU intensities plus 3 normalized head-pose angles."""

    au: np.ndarray    # (17,) in [0, 1]
    pose: np.ndarray  # (3,) in [-1, 1]

    def __post_init__(self):
        au = np.asarray(self.au, dtype=np.float64).reshape(-1)
        pose = np.asarray(self.pose, dtype=np.float64).reshape(-1)
        if au.shape != (NUM_AUS,):
            raise ValueError(f"expected {NUM_AUS} AU values, got {au.shape}")
        if pose.shape != (NUM_POSE,):
            raise ValueError(f"expected {NUM_POSE} pose values, got {pose.shape}")
        if not (np.all(np.isfinite(au)) and np.all(np.isfinite(pose))):
            raise ValueError("motion values must be finite")
        object.__setattr__(self, "au", au)
        object.__setattr__(self, "pose", pose)

    def as_vector(self) -> np.ndarray:
        """Concatenated 20-vector (au, pose)."""
        return np.concatenate([self.au, self.pose])

    @classmethod
    def from_vector(cls, vec) -> "MotionVector":
        v = np.asarray(vec, dtype=np.float64).reshape(-1)
        if v.shape != (MOTION_DIM,):
            raise ValueError(f"expected length-{MOTION_DIM} vector, got {v.shape}")
        return cls(au=v[:NUM_AUS], pose=v[NUM_AUS:])


def normalize_motion(raw_au, raw_pose, counter: ClampCounter | None = None) -> MotionVector:
    """Map raw estimator outputs (AU in [0, 5], pose radians in [-pi, pi])
    to the normalized MotionVector ranges. Out-of-range values are clamped
    and counted on `counter` (module default if omitted)."""
    counter = counter if counter is not None else clamp_warnings
    au = np.asarray(raw_au, dtype=np.float64).reshape(-1)
    pose = np.asarray(raw_pose, dtype=np.float64).reshape(-1)
    if au.shape != (NUM_AUS,) or pose.shape != (NUM_POSE,):
        raise ValueError("raw motion has wrong dimensions")
    n_clamped = int(np.sum((au < 0) | (au > AU_RAW_MAX)))
    n_clamped += int(np.sum((pose < -math.pi) | (pose > math.pi)))
    if n_clamped:
        counter.add(n_clamped)
    au = np.clip(au, 0.0, AU_RAW_MAX)
    pose = np.clip(pose, -math.pi, math.pi)
    return MotionVector(au=au / AU_RAW_MAX, pose=pose / math.pi)


def denormalize_motion(mv: MotionVector) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of normalize_motion for in-range values."""
    return mv.au * AU_RAW_MAX, mv.pose * math.pi


@dataclass(frozen=True)
class ConnectivityGraph:
    """Undirected landmark edges used by the connectivity loss."""

    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < NUM_LANDMARKS and 0 <= j < NUM_LANDMARKS):
                raise ValueError(f"edge ({i}, {j}) out of range")
            if i == j:
                raise ValueError(f"self-loop at landmark {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add(key)
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))

    def __len__(self) -> int:
        return len(self.edges)

    def index_tensor(self) -> torch.Tensor:
        """(d, 2) long tensor of edge endpoints."""
        return torch.tensor(self.edges, dtype=torch.long)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps([list(e) for e in self.edges]))

    @classmethod
    def load(cls, path) -> "ConnectivityGraph":
        return cls(edges=tuple(tuple(e) for e in json.loads(Path(path).read_text())))


def _chain(lo: int, hi: int, closed: bool = False) -> list[tuple[int, int]]:
    edges = [(i, i + 1) for i in range(lo, hi)]
    if closed:
        edges.append((hi, lo))
    return edges


def default_connectivity() -> ConnectivityGraph:
    """Standard iBUG chain segments: jaw, brows, nose, eyes, mouth."""
    edges: list[tuple[int, int]] = []
    edges += _chain(0, 16)            # jaw
    edges += _chain(17, 21)           # right brow
    edges += _chain(22, 26)           # left brow
    edges += _chain(27, 30)           # nose bridge
    edges += _chain(31, 35)           # nostrils
    edges += _chain(36, 41, closed=True)   # right eye
    edges += _chain(42, 47, closed=True)   # left eye
    edges += _chain(48, 59, closed=True)   # outer mouth
    edges += _chain(60, 67, closed=True)   # inner mouth
    return ConnectivityGraph(edges=tuple(edges))


def _as_points_tensor(lm) -> torch.Tensor:
    """Accept LandmarkSet / (68,2) / (...,136) and return (..., 68, 2) tensor."""
    if isinstance(lm, LandmarkSet):
        return torch.from_numpy(lm.points)
    t = torch.as_tensor(lm, dtype=torch.get_default_dtype() if not torch.is_tensor(lm) else lm.dtype)
    if t.shape[-1] == LANDMARK_DIM:
        t = t.reshape(*t.shape[:-1], NUM_LANDMARKS, 2)
    if t.shape[-2:] != (NUM_LANDMARKS, 2):
        raise ValueError(f"cannot interpret shape {tuple(t.shape)} as landmarks")
    return t


def connectivity_distances(lm, graph: ConnectivityGraph) -> torch.Tensor:
    """Euclidean length of every graph edge; differentiable in the points.

    Returns a (..., d) tensor matching the batch shape of the input.
    """
    pts = _as_points_tensor(lm)
    idx = graph.index_tensor()
    diff = pts[..., idx[:, 0], :] - pts[..., idx[:, 1], :]
    return torch.sqrt((diff * diff).sum(dim=-1))


def normalized_to_pixel(coords, height: int, width: int):
    """[-1, 1] -> continuous pixel coordinates; corners map to corner pixels."""
    c = torch.as_tensor(coords, dtype=torch.float64) if not torch.is_tensor(coords) else coords
    px = (c[..., 0] + 1.0) * 0.5 * (width - 1)
    py = (c[..., 1] + 1.0) * 0.5 * (height - 1)
    return px, py


def pixel_to_normalized(px, py, height: int, width: int) -> np.ndarray:
    x = 2.0 * np.asarray(px, dtype=np.float64) / (width - 1) - 1.0
    y = 2.0 * np.asarray(py, dtype=np.float64) / (height - 1) - 1.0
    return np.stack([x, y], axis=-1)


def heatmap_sigma(height: int, base_sigma: float = 2.0, base_resolution: int = 256) -> float:
    """Default Gaussian width, scaled proportionally with resolution."""
    return base_sigma * height / base_resolution


def render_heatmap(lm, height: int, width: int, sigma: float) -> torch.Tensor:
    """Render landmarks as a 1xHxW max-of-Gaussians heatmap in [0, 1].

    Differentiable with respect to the landmark coordinates when `lm` is a
    tensor that requires grad, so the full pipeline can be trained end to end.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if height <= 0 or width <= 0:
        raise ValueError("heatmap dimensions must be positive")
    pts = _as_points_tensor(lm)
    if not pts.is_floating_point():
        pts = pts.double()
    px, py = normalized_to_pixel(pts, height, width)
    ys = torch.arange(height, dtype=pts.dtype)
    xs = torch.arange(width, dtype=pts.dtype)
    dy = ys.view(1, height, 1) - py.view(-1, 1, 1)
    dx = xs.view(1, 1, width) - px.view(-1, 1, 1)
    d2 = dx * dx + dy * dy
    g = torch.exp(-d2 / (2.0 * sigma * sigma))
    return g.max(dim=0).values.unsqueeze(0)


# --- landmark cache files -------------------------------------------------

def write_landmark_cache(path, records: list[dict]) -> None:
    """One JSON record per frame:
    {"track": int, "frame": int, "landmarks": [136], "au": [17], "pose": [3]}."""
    out = []
    for r in records:
        out.append({
            "track": int(r["track"]),
            "frame": int(r["frame"]),
            "landmarks": [float(v) for v in np.asarray(r["landmarks"]).reshape(-1)],
            "au": [float(v) for v in np.asarray(r["au"]).reshape(-1)],
            "pose": [float(v) for v in np.asarray(r["pose"]).reshape(-1)],
        })
    Path(path).write_text(json.dumps(out, indent=1))


def read_landmark_cache(path) -> list[dict]:
    records = json.loads(Path(path).read_text())
    for r in records:
        if len(r["landmarks"]) != LANDMARK_DIM:
            raise ValueError(f"record track={r.get('track')} frame={r.get('frame')}: bad landmark length")
        if len(r["au"]) != NUM_AUS or len(r["pose"]) != NUM_POSE:
            raise ValueError(f"record track={r.get('track')} frame={r.get('frame')}: bad motion length")
    return records
