"""Reenactment metrics (MSE, CSIM, PSIM, ED, LSIM) and the self-/cross-
reenactment experiment drivers with CSV + JSON + figure reports.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FrameRecord, TrackIndex, load_image
from .geometry import NUM_AUS, LandmarkSet, MotionVector

METRIC_COLUMNS = ["MSE", "CSIM", "PSIM", "ED", "LSIM"]


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-normalized face-recognition embedding."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise ValueError("cannot normalize a zero embedding")
        object.__setattr__(self, "values", v / n)


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def csim(a: EmbeddingVector, b: EmbeddingVector) -> float:
    return float(np.dot(a.values, b.values))


def psim(pose_a, pose_b) -> tuple[float, bool]:
    """Cosine similarity of raw pose-angle vectors.

    Returns (value, degenerate_flag); both-zero vectors define 1.0, a single
    zero vector defines 0.0, each flagged.
    """
    a = np.asarray(pose_a, dtype=np.float64).reshape(-1)
    b = np.asarray(pose_b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0, True
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    return float(np.dot(a, b) / (na * nb)), False


def ed(au_a, au_b) -> float:
    """Per-dimension-scaled Euclidean AU distance."""
    a = np.asarray(au_a, dtype=np.float64).reshape(-1)
    b = np.asarray(au_b, dtype=np.float64).reshape(-1)
    if a.shape != (NUM_AUS,) or b.shape != (NUM_AUS,):
        raise ValueError("ed expects 17-dim AU vectors")
    return float(np.linalg.norm(a - b) / NUM_AUS)


def lsim(output_lm: LandmarkSet, pseudo_gt_lm: LandmarkSet) -> float:
    """Mean over points of the squared Euclidean landmark distance."""
    d = output_lm.points - pseudo_gt_lm.points
    return float(np.mean(np.sum(d * d, axis=1)))


def motion_distance(a: MotionVector, b: MotionVector, mode: str = "au20") -> float:
    if mode == "au17":
        return float(np.linalg.norm(a.au - b.au))
    if mode == "au20":
        return float(np.linalg.norm(a.as_vector() - b.as_vector()))
    raise ValueError(f"unknown lsim_distance mode {mode!r}")


def lsim_search(query_motion: MotionVector, query_identity: str,
                index: TrackIndex, mode: str = "au20") -> FrameRecord:
    """Closest-motion record of a different identity; ties break on the
    lowest (track_id, frame_index)."""
    best: FrameRecord | None = None
    best_key = None
    for (video_id, track_id) in sorted(index.tracks):
        if video_id == query_identity:
            continue
        for rec in index.tracks[(video_id, track_id)]:
            key = (motion_distance(query_motion, rec.motion, mode),
                   rec.track_id, rec.frame_index)
            if best_key is None or key < best_key:
                best, best_key = rec, key
    if best is None:
        raise ValueError(f"no record with identity != {query_identity!r}")
    return best


# --- experiment drivers ---------------------------------------------------

@dataclass
class EvalReport:
    mode: str
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def aggregates(self) -> dict:
        agg = {}
        for col in METRIC_COLUMNS:
            vals = [r[col] for r in self.rows if col in r and r[col] is not None]
            if vals:
                agg[col] = float(np.mean(vals))
        return agg

    def write(self, out_dir, make_figures: bool = True) -> dict[str, Path]:
        """CSV of per-pair rows, JSON summary and metric-distribution figures."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        columns = [c for c in ("pair",) + tuple(METRIC_COLUMNS)
                   if any(c in r for r in self.rows)]
        csv_path = out_dir / f"report_{self.mode}.csv"
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(row.get(k)) for k in columns})
        json_path = out_dir / f"report_{self.mode}.json"
        json_path.write_text(json.dumps({
            "mode": self.mode, "metadata": self.metadata,
            "n_pairs": len(self.rows), "aggregates": self.aggregates(),
        }, indent=2, sort_keys=True))
        paths = {"csv": csv_path, "json": json_path}
        if make_figures:
            from .plots import plot_metric_histograms
            paths["figure"] = plot_metric_histograms(self, out_dir / f"report_{self.mode}.png")
        return paths


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.8f}"
    return v


def _record_motion_raw(rec: FrameRecord):
    from .geometry import denormalize_motion
    return denormalize_motion(rec.motion)


def run_self_reenactment(reenact_fn, index: TrackIndex, n_pairs: int, seed: int,
                         metadata: dict | None = None) -> EvalReport:
    """Same-track pairs; the driving frame is pixel ground truth, scored by MSE.

    `reenact_fn(source: FrameRecord, driving: FrameRecord) -> HxWx3 image`.
    """
    from .data import sample_pair
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_pairs):
        src, drv = sample_pair(index, rng)
        out = np.asarray(reenact_fn(src, drv))
        rows.append({"pair": k, "MSE": mse(out, load_image(drv.crop_path))})
    return EvalReport(mode="self", rows=rows,
                      metadata={"seed": seed, **(metadata or {})})


def run_cross_reenactment(reenact_fn, index: TrackIndex, n_pairs: int, seed: int,
                          estimators, metadata: dict | None = None) -> EvalReport:
    """Cross-identity pairs scored with CSIM / PSIM / ED / LSIM.

    LSIM follows the two-source protocol: a second same-identity source frame
    acts as pseudo ground truth, reenacted via the closest-motion driving
    record of a third identity.
    """
    rng = np.random.default_rng(seed)
    identities = sorted({vid for vid, _ in index.tracks})
    if len(identities) < 2:
        raise ValueError("cross-reenactment needs at least two identities")
    all_records = sorted(index.records(), key=lambda r: (r.video_id, r.track_id, r.frame_index))
    by_identity = {ident: [r for r in all_records if r.identity == ident]
                   for ident in identities}

    rows = []
    for k in range(n_pairs):
        src_ident = identities[int(rng.integers(len(identities)))]
        src_pool = by_identity[src_ident]
        src = src_pool[int(rng.integers(len(src_pool)))]
        # second same-identity frame = LSIM pseudo ground truth
        gt_pool = [r for r in src_pool if r is not src] or [src]
        pseudo_gt = gt_pool[int(rng.integers(len(gt_pool)))]
        drv = lsim_search(pseudo_gt.motion, src_ident, index)

        out = np.asarray(reenact_fn(src, drv))
        src_img = load_image(src.crop_path)
        drv_img = load_image(drv.crop_path)

        emb_out = EmbeddingVector(estimators.embed(out))
        emb_src = EmbeddingVector(estimators.embed(src_img))
        raw_au_out, raw_pose_out = estimators.motion(out)
        raw_au_drv, raw_pose_drv = _record_motion_raw(drv)
        out_lm = LandmarkSet(points=np.asarray(estimators.landmarks(out)))

        psim_val, _ = psim(raw_pose_out, raw_pose_drv)
        rows.append({
            "pair": k,
            "CSIM": csim(emb_out, emb_src),
            "PSIM": psim_val,
            "ED": ed(raw_au_out, raw_au_drv),
            "LSIM": lsim(out_lm, pseudo_gt.landmarks),
        })
    return EvalReport(mode="cross", rows=rows,
                      metadata={"seed": seed, **(metadata or {})})
