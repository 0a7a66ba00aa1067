"""Frozen-checkpoint inference: bundle loading/validation and the full
landmark-transform -> heatmap -> reenact -> background-mix chain.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import FrameRecord, load_image
from .geometry import LandmarkSet, MotionVector, heatmap_sigma, render_heatmap
from .mixer import MixerGenerator, blend, gb_forward
from .reenactor import ReenactorGenerator, gr_forward, mask_background, mask_face
from .synthetic import HeuristicEstimators
from .transformer import AuRegressor, LandmarkTransformer

BUNDLE_MANIFEST = "bundle.json"


def get_device() -> str:
    return os.environ.get("FACEGAN_DEVICE", "cpu")


def make_estimators(name: str):
    if name == "heuristic":
        return HeuristicEstimators()
    raise ValueError(f"unknown estimator adapter {name!r}")


@dataclass
class PipelineBundle:
    """Validated set of frozen checkpoints plus estimator adapters."""

    transformer: LandmarkTransformer
    au_regressor: AuRegressor
    reenactor: ReenactorGenerator
    mixer: MixerGenerator
    estimators: object
    resolution: int
    manifest: dict

    @classmethod
    def load(cls, bundle_dir) -> "PipelineBundle":
        bundle_dir = Path(bundle_dir)
        manifest = json.loads((bundle_dir / BUNDLE_MANIFEST).read_text())
        device = get_device()

        lt_payload = ckpt.load_checkpoint(bundle_dir / manifest["checkpoints"]["transformer"])
        hidden = tuple(lt_payload["config"]["hidden"])
        transformer = LandmarkTransformer(hidden=hidden)
        au_regressor = AuRegressor(hidden=hidden)
        ckpt.restore_module(lt_payload, "transformer", transformer)
        ckpt.restore_module(lt_payload, "au_regressor", au_regressor)

        gr_payload = ckpt.load_checkpoint(bundle_dir / manifest["checkpoints"]["reenactor"])
        gr_cfg = gr_payload["config"]
        reenactor = ReenactorGenerator(
            base=gr_cfg["base_width"], depth=gr_cfg["depth"],
            resolutions=tuple(r for r, _ in gr_cfg["schedule"]))
        ckpt.restore_module(gr_payload, "generator", reenactor)

        gb_payload = ckpt.load_checkpoint(bundle_dir / manifest["checkpoints"]["mixer"])
        gb_cfg = gb_payload["config"]
        mixer = MixerGenerator(base=gb_cfg["base_width"], depth=gb_cfg["depth"],
                               resolutions=(gb_cfg["resolution"],))
        if "mixer" in gb_payload["modules"]:
            ckpt.restore_module(gb_payload, "mixer", mixer)
        if "reenactor" in gb_payload["modules"]:  # end-to-end checkpoint
            ckpt.restore_module(gb_payload, "reenactor", reenactor)

        resolution = int(manifest["resolution"])
        if resolution not in reenactor.resolutions:
            raise ValueError(
                f"bundle resolution {resolution} not in reenactor stages {reenactor.resolutions}")
        if resolution not in mixer.resolutions:
            raise ValueError(
                f"bundle resolution {resolution} not in mixer stages {mixer.resolutions}")

        for m in (transformer, au_regressor, reenactor, mixer):
            m.to(device).eval()
        return cls(transformer=transformer, au_regressor=au_regressor,
                   reenactor=reenactor, mixer=mixer,
                   estimators=make_estimators(manifest.get("estimators", "heuristic")),
                   resolution=resolution, manifest=manifest)

    @staticmethod
    def write_manifest(bundle_dir, *, resolution: int,
                       transformer_ckpt: str, reenactor_ckpt: str, mixer_ckpt: str,
                       estimators: str = "heuristic") -> Path:
        bundle_dir = Path(bundle_dir)
        bundle_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "resolution": resolution,
            "estimators": estimators,
            "checkpoints": {"transformer": transformer_ckpt,
                            "reenactor": reenactor_ckpt, "mixer": mixer_ckpt},
        }
        path = bundle_dir / BUNDLE_MANIFEST
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path

    # --- inference --------------------------------------------------------

    def transform_landmarks(self, source_lm: LandmarkSet, motion: MotionVector) -> LandmarkSet:
        with torch.no_grad():
            l_s = torch.from_numpy(source_lm.flatten()).float()
            m = torch.from_numpy(motion.as_vector()).float()
            delta = self.transformer(l_s, m)
            return LandmarkSet.unflatten((l_s + delta).numpy())

    def reenact(self, source_img: np.ndarray, source_lm: LandmarkSet,
                motion: MotionVector, *, background_img: np.ndarray | None = None,
                use_landmark_transformer: bool = True,
                driving_lm: LandmarkSet | None = None) -> dict:
        """Run the full chain; returns all intermediates.

        `source_img` is HxWx3 float in [0, 1] at the bundle resolution. With
        `use_landmark_transformer=False` the driving landmarks are used
        directly (the ablation baseline) and must be supplied.
        """
        res = self.resolution
        if source_img.shape[:2] != (res, res):
            raise ValueError(f"source image must be {res}x{res}, got {source_img.shape[:2]}")
        if use_landmark_transformer:
            l_t = self.transform_landmarks(source_lm, motion)
        else:
            if driving_lm is None:
                raise ValueError("ablation mode needs explicit driving landmarks")
            l_t = driving_lm

        with torch.no_grad():
            h_t = render_heatmap(l_t, res, res, heatmap_sigma(res)).float()
            i_s = torch.from_numpy(np.ascontiguousarray(source_img.transpose(2, 0, 1))).float()
            i_fr, s_fr = gr_forward(self.reenactor, i_s, h_t)
            i_fr_masked = mask_face(i_fr, s_fr)

            bg_src = background_img if background_img is not None else source_img
            bg_labels = self.estimators.segment(bg_src)
            i_b = mask_background(
                torch.from_numpy(np.ascontiguousarray(bg_src.transpose(2, 0, 1))).float(),
                torch.from_numpy(bg_labels.astype(np.int64)))
            i_c, m = gb_forward(self.mixer, i_fr_masked, i_b)
            i_r = blend(i_c, i_b, m)

        return {
            "output": np.clip(i_r.numpy().transpose(1, 2, 0), 0.0, 1.0),
            "face": i_fr.numpy().transpose(1, 2, 0),
            "face_masked": i_fr_masked.numpy().transpose(1, 2, 0),
            "segmentation": s_fr.numpy(),
            "mask": m.numpy()[0],
            "landmarks": l_t,
        }

    def reenact_records(self, source: FrameRecord, driving: FrameRecord,
                        use_landmark_transformer: bool = True) -> np.ndarray:
        """Record-level entry used by the evaluation drivers."""
        src_img = load_image(source.crop_path)
        out = self.reenact(src_img, source.landmarks, driving.motion,
                           use_landmark_transformer=use_landmark_transformer,
                           driving_lm=driving.landmarks)
        return out["output"]
