"""Video-to-corpus pipeline: detection tracking, eye-anchored cropping,
small-face rejection, annotation and same-track pair sampling.

Corpus layout: `<root>/<video_id>/<track_id>/frame_%06d.png` with
`frame_%06d_seg.png` label images ({0: background, 1: face, 2: hair})
and a `track.json` landmark cache per track.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (LandmarkSet, MotionVector, normalize_motion,
                       read_landmark_cache, write_landmark_cache)

EYE_RIGHT = slice(36, 42)
EYE_LEFT = slice(42, 48)

CROP_ANCHOR = (0.5, 0.4)   # eye midpoint position in the crop (x, y fractions)
CROP_SCALE = 4.0           # crop side as a multiple of the inter-ocular distance


# --- centroid tracking ----------------------------------------------------

@dataclass
class TrackerConfig:
    # threshold as a fraction of the frame diagonal
    match_threshold: float = 0.05
    miss_tolerance: int = 5


def track_faces(detections, frame_size: tuple[int, int],
                config: TrackerConfig | None = None) -> list[list[int]]:
    """Greedy nearest-centroid tracking.

    `detections` is a per-frame list of (x0, y0, x1, y1) boxes. Returns the
    per-frame list of track ids, aligned with the input boxes.
    """
    config = config or TrackerConfig()
    diag = math.hypot(*frame_size)
    max_dist = config.match_threshold * diag

    active: dict[int, dict] = {}  # id -> {"center", "misses"}
    next_id = 0
    assignments: list[list[int]] = []

    for boxes in detections:
        centers = [((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0) for b in boxes]
        frame_ids: list[int] = []
        claimed: set[int] = set()
        for c in centers:
            best_id, best_d = None, max_dist
            for tid, t in active.items():
                if tid in claimed:
                    continue
                d = math.hypot(c[0] - t["center"][0], c[1] - t["center"][1])
                if d <= best_d:
                    best_id, best_d = tid, d
            if best_id is None:
                best_id = next_id
                next_id += 1
                active[best_id] = {"center": c, "misses": 0}
            else:
                active[best_id]["center"] = c
                active[best_id]["misses"] = 0
            claimed.add(best_id)
            frame_ids.append(best_id)
        for tid in list(active):
            if tid not in claimed:
                active[tid]["misses"] += 1
                if active[tid]["misses"] > config.miss_tolerance:
                    del active[tid]
        assignments.append(frame_ids)
    return assignments


def detections_from_landmarks(landmarks_px: np.ndarray) -> tuple[float, float, float, float]:
    """Bounding box of frame-space landmarks, usable as a face detection."""
    x0, y0 = landmarks_px.min(axis=0)
    x1, y1 = landmarks_px.max(axis=0)
    return float(x0), float(y0), float(x1), float(y1)


# --- cropping -------------------------------------------------------------

def reject_small(landmarks_px: np.ndarray, min_extent: float = 80.0) -> bool:
    """True (reject) iff the landmark bbox width or height is strictly below
    `min_extent` pixels."""
    span = landmarks_px.max(axis=0) - landmarks_px.min(axis=0)
    return bool(span[0] < min_extent or span[1] < min_extent)


def crop_transform(landmarks_px: np.ndarray, out_size: int,
                   scale: float = CROP_SCALE) -> tuple[np.ndarray, float]:
    """Frame -> crop similarity anchored on the inter-eye midpoint.

    Returns (midpoint, pixels-per-frame-pixel) such that
    crop_xy = (frame_xy - midpoint) * s + anchor * out_size.
    """
    right = landmarks_px[EYE_RIGHT].mean(axis=0)
    left = landmarks_px[EYE_LEFT].mean(axis=0)
    mid = (right + left) / 2.0
    iod = float(np.linalg.norm(left - right))
    if iod <= 0:
        raise ValueError("degenerate eye landmarks (zero inter-ocular distance)")
    side = scale * iod
    return mid, out_size / side


def crop_align(frame: np.ndarray, landmarks_px: np.ndarray, out_size: int,
               scale: float = CROP_SCALE):
    """Square eye-anchored crop.

    `frame` is HxWx3 float in [0, 1]; `landmarks_px` are frame pixel coords.
    Returns (crop HxWx3, landmarks normalized to [-1, 1], padded flag).
    Out-of-frame regions are zero-padded and flagged.
    """
    mid, s = crop_transform(landmarks_px, out_size, scale)
    anchor = np.array([CROP_ANCHOR[0] * out_size, CROP_ANCHOR[1] * out_size])

    ys, xs = np.mgrid[0:out_size, 0:out_size]
    src_x = np.rint((xs - anchor[0]) / s + mid[0]).astype(int)
    src_y = np.rint((ys - anchor[1]) / s + mid[1]).astype(int)
    h, w = frame.shape[:2]
    inside = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    crop = np.zeros((out_size, out_size, 3), dtype=frame.dtype)
    crop[inside] = frame[src_y[inside], src_x[inside]]

    crop_px = (landmarks_px - mid) * s + anchor
    normalized = 2.0 * crop_px / (out_size - 1) - 1.0
    return crop, LandmarkSet(points=normalized), bool(not inside.all())


def crop_to_frame(landmarks: LandmarkSet, landmarks_px_ref: np.ndarray,
                  out_size: int, scale: float = CROP_SCALE) -> np.ndarray:
    """Inverse landmark remapping, crop-normalized -> frame pixels."""
    mid, s = crop_transform(landmarks_px_ref, out_size, scale)
    anchor = np.array([CROP_ANCHOR[0] * out_size, CROP_ANCHOR[1] * out_size])
    crop_px = (landmarks.points + 1.0) * (out_size - 1) / 2.0
    return (crop_px - anchor) / s + mid


# --- annotation -----------------------------------------------------------

class AnnotationError(RuntimeError):
    pass


def annotate(crop: np.ndarray, estimators):
    """Run the pluggable estimators on a crop.

    `estimators` provides landmarks(img) -> (68, 2) normalized points,
    motion(img) -> (raw_au 17, raw_pose 3) and segment(img) -> HxW labels.
    Estimator exceptions surface as AnnotationError; callers skip and count.
    """
    try:
        lm = LandmarkSet(points=np.asarray(estimators.landmarks(crop)))
        raw_au, raw_pose = estimators.motion(crop)
        motion = normalize_motion(raw_au, raw_pose)
        labels = np.asarray(estimators.segment(crop), dtype=np.uint8)
    except Exception as e:  # noqa: BLE001 - error policy: skip the record
        raise AnnotationError(str(e)) from e
    if labels.shape != crop.shape[:2]:
        raise AnnotationError(f"segmentation shape {labels.shape} != crop {crop.shape[:2]}")
    return lm, motion, labels


# --- corpus ---------------------------------------------------------------

@dataclass(frozen=True)
class FrameRecord:
    video_id: str
    track_id: int
    frame_index: int
    crop_path: Path
    seg_path: Path
    landmarks: LandmarkSet
    motion: MotionVector

    @property
    def identity(self) -> str:
        # one identity per source video
        return self.video_id


@dataclass
class TrackIndex:
    tracks: dict[tuple[str, int], list[FrameRecord]] = field(default_factory=dict)

    def add(self, rec: FrameRecord) -> None:
        key = (rec.video_id, rec.track_id)
        lst = self.tracks.setdefault(key, [])
        if lst and rec.frame_index <= lst[-1].frame_index:
            raise ValueError(f"frame indices must be strictly increasing in track {key}")
        lst.append(rec)

    def records(self) -> list[FrameRecord]:
        return [r for recs in self.tracks.values() for r in recs]

    def __len__(self) -> int:
        return len(self.tracks)


def save_image(path, array: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if array.ndim == 2:  # label image
        Image.fromarray(array.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray((np.clip(array, 0, 1) * 255).round().astype(np.uint8)).save(path)


def load_image(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 2:
        return arr
    return arr[..., :3].astype(np.float64) / 255.0


@dataclass
class CorpusStats:
    detected: int = 0
    rejected: int = 0
    failed: int = 0

    @property
    def kept(self) -> int:
        return self.detected - self.rejected - self.failed


def build_corpus(root, video_id: str, frames, estimators, *,
                 out_size: int = 256, min_extent: float = 80.0,
                 tracker_config: TrackerConfig | None = None,
                 crop_scale: float = CROP_SCALE) -> tuple[TrackIndex, CorpusStats]:
    """Process one video's frames into the on-disk corpus.

    `frames` yields HxWx3 float images; the estimators' landmark output on the
    full frame drives detection, tracking, rejection and cropping.
    """
    root = Path(root)
    stats = CorpusStats()
    frames = list(frames)
    if not frames:
        return TrackIndex(), stats

    frame_landmarks = []
    detections = []
    for frame in frames:
        try:
            h, w = frame.shape[:2]
            norm = np.asarray(estimators.landmarks(frame))
            px = (norm + 1.0) / 2.0 * np.array([w - 1, h - 1])
            frame_landmarks.append(px)
            detections.append([detections_from_landmarks(px)])
        except Exception:  # noqa: BLE001
            frame_landmarks.append(None)
            detections.append([])

    h, w = frames[0].shape[:2]
    assignments = track_faces(detections, (w, h), tracker_config)

    per_track: dict[int, list[dict]] = {}
    index = TrackIndex()
    for fi, (frame, lm_px, ids) in enumerate(zip(frames, frame_landmarks, assignments)):
        if lm_px is None or not ids:
            continue
        stats.detected += 1
        if reject_small(lm_px, min_extent):
            stats.rejected += 1
            continue
        tid = ids[0]
        try:
            crop, _, _ = crop_align(frame, lm_px, out_size, crop_scale)
            lm, motion, labels = annotate(crop, estimators)
        except (AnnotationError, ValueError):
            stats.failed += 1
            continue
        tdir = root / video_id / str(tid)
        crop_path = tdir / f"frame_{fi:06d}.png"
        seg_path = tdir / f"frame_{fi:06d}_seg.png"
        save_image(crop_path, crop)
        save_image(seg_path, labels)
        rec = FrameRecord(video_id=video_id, track_id=tid, frame_index=fi,
                          crop_path=crop_path, seg_path=seg_path,
                          landmarks=lm, motion=motion)
        index.add(rec)
        per_track.setdefault(tid, []).append({
            "track": tid, "frame": fi,
            "landmarks": lm.flatten(), "au": motion.au, "pose": motion.pose})

    for tid, records in per_track.items():
        write_landmark_cache(root / video_id / str(tid) / "track.json", records)
    return index, stats


def load_corpus(root) -> TrackIndex:
    """Rebuild a TrackIndex from the on-disk layout."""
    root = Path(root)
    index = TrackIndex()
    for cache in sorted(root.glob("*/*/track.json")):
        video_id = cache.parent.parent.name
        tdir = cache.parent
        for r in read_landmark_cache(cache):
            fi = int(r["frame"])
            index.add(FrameRecord(
                video_id=video_id, track_id=int(r["track"]), frame_index=fi,
                crop_path=tdir / f"frame_{fi:06d}.png",
                seg_path=tdir / f"frame_{fi:06d}_seg.png",
                landmarks=LandmarkSet.unflatten(r["landmarks"]),
                motion=MotionVector(au=np.asarray(r["au"]), pose=np.asarray(r["pose"]))))
    return index


def sample_pair(index: TrackIndex, rng: np.random.Generator) -> tuple[FrameRecord, FrameRecord]:
    """Uniform draw over ordered same-track (source, driving) pairs."""
    keys = sorted(k for k, recs in index.tracks.items() if len(recs) >= 2)
    if not keys:
        raise ValueError("no track with at least two frames")
    weights = np.array([len(index.tracks[k]) * (len(index.tracks[k]) - 1) for k in keys],
                       dtype=np.float64)
    key = keys[int(rng.choice(len(keys), p=weights / weights.sum()))]
    recs = index.tracks[key]
    i = int(rng.integers(len(recs)))
    j = int(rng.integers(len(recs) - 1))
    if j >= i:
        j += 1
    return recs[i], recs[j]


# --- OpenFace CSV adapter -------------------------------------------------

OPENFACE_AU_COLUMNS = [
    "AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r",
    "AU10_r", "AU12_r", "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r",
    "AU25_r", "AU26_r", "AU45_r"]
OPENFACE_POSE_COLUMNS = ["pose_Rx", "pose_Ry", "pose_Rz"]


def read_openface_csv(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-frame (raw AU intensities, raw pose radians) from an OpenFace CSV."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        fields = {name.strip(): name for name in reader.fieldnames or []}
        missing = [c for c in OPENFACE_AU_COLUMNS + OPENFACE_POSE_COLUMNS if c not in fields]
        if missing:
            raise ValueError(f"{path}: missing OpenFace columns {missing}")
        for row in reader:
            au = np.array([float(row[fields[c]]) for c in OPENFACE_AU_COLUMNS])
            pose = np.array([float(row[fields[c]]) for c in OPENFACE_POSE_COLUMNS])
            rows.append((au, pose))
    return rows
