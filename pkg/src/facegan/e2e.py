"""Corpus sample builders and the joint end-to-end fine-tuning loop.

Separate training happens in transformer.py / reenactor.py / mixer.py; here
the three generators are optimized together, with gradients flowing from the
blended output back through the mixer, the reenactor, the differentiable
heatmap rendering and into the landmark transformer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .data import TrackIndex, load_image, sample_pair
from .geometry import default_connectivity, heatmap_sigma, render_heatmap
from .mixer import MixerTrainConfig, blend, loss_mixer_total
from .perceptual import make_extractor
from .reenactor import (ReenactorTrainConfig, loss_ce, loss_radv, loss_reenactor_total,
                        loss_rp, loss_rr, mask_background, mask_face)
from .transformer import (LandmarkLossWeights, LandmarkTrainConfig, TrainingDiverged,
                          loss_lau, loss_lc, loss_lr)


def _f(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def _img_tensor(path, res: int) -> torch.Tensor:
    arr = load_image(path)
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()
    if t.shape[-1] != res:
        t = F.interpolate(t.unsqueeze(0), size=(res, res), mode="bilinear",
                          align_corners=False).squeeze(0)
    return t


def _seg_tensor(path, res: int) -> torch.Tensor:
    arr = np.asarray(load_image(path))
    t = torch.from_numpy(arr.astype(np.float32))
    if t.shape[-1] != res:
        t = F.interpolate(t.unsqueeze(0).unsqueeze(0), size=(res, res),
                          mode="nearest").squeeze(0).squeeze(0)
    return t.long()


def pair_sample(index: TrackIndex, rng: np.random.Generator, res: int) -> dict:
    """Load one same-track (source, driving) pair as training tensors."""
    src, drv = sample_pair(index, rng)
    return {
        "l_s": torch.from_numpy(src.landmarks.flatten()).float(),
        "l_d": torch.from_numpy(drv.landmarks.flatten()).float(),
        "m_d": torch.from_numpy(drv.motion.as_vector()).float(),
        "i_s": _img_tensor(src.crop_path, res),
        "i_d": _img_tensor(drv.crop_path, res),
        "seg_s": _seg_tensor(src.seg_path, res),
        "seg_d": _seg_tensor(drv.seg_path, res),
    }


def landmark_triples(index: TrackIndex, n: int, rng: np.random.Generator):
    """(l_s, l_d, motion_d) triples for separate transformer training."""
    out = []
    for _ in range(n):
        src, drv = sample_pair(index, rng)
        out.append((src.landmarks.flatten(), drv.landmarks.flatten(),
                    drv.motion.as_vector()))
    return out


def reenactor_samples(index: TrackIndex, n: int, rng: np.random.Generator, res: int):
    """(i_s, h_t, i_d, seg_d) tuples; the driving landmarks condition the
    generator while the transformer is trained separately."""
    out = []
    sigma = heatmap_sigma(res)
    for _ in range(n):
        s = pair_sample(index, rng, res)
        h_t = render_heatmap(s["l_d"], res, res, sigma).float()
        out.append((s["i_s"], h_t, s["i_d"], s["seg_d"]))
    return out


def mixer_samples(index: TrackIndex, n: int, rng: np.random.Generator, res: int):
    """Teacher-forcing dicts: ground-truth masked driving face as the face input."""
    out = []
    for _ in range(n):
        s = pair_sample(index, rng, res)
        out.append({
            "face": mask_face(s["i_d"], s["seg_d"]),
            "i_b": mask_background(s["i_s"], s["seg_s"]),
            "i_d": s["i_d"],
        })
    return out


@dataclass
class E2EConfig:
    steps: int = 5000
    resolution: int = 256
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    landmark_weights: LandmarkLossWeights = field(default_factory=LandmarkLossWeights)
    extractor: str = "pooling"
    seed: int = 0
    checkpoint_dir: str | None = None
    checkpoint_interval: int = 1000
    log_interval: int = 10

    def to_dict(self) -> dict:
        return {"steps": self.steps, "resolution": self.resolution,
                "learning_rate": self.learning_rate, "betas": list(self.betas),
                "extractor": self.extractor, "seed": self.seed}


def train_end_to_end(index: TrackIndex, *, transformer, au_regressor,
                     reenactor, reenactor_discs, mixer, mixer_disc,
                     config: E2EConfig,
                     gr_config: ReenactorTrainConfig,
                     gb_config: MixerTrainConfig,
                     lt_config: LandmarkTrainConfig):
    """Joint fine-tuning; returns (history, checkpoint paths).

    The landmark, reenactor and mixer losses are summed into one generator
    objective; both discriminators take their own alternating steps. On
    completion per-block checkpoints are written so the bundle layout stays
    identical to separate training.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    graph = default_connectivity()
    extractor = make_extractor(config.extractor)
    res = config.resolution
    sigma = heatmap_sigma(res)

    gen_params = (list(transformer.parameters()) + list(au_regressor.parameters())
                  + list(reenactor.parameters()) + list(mixer.parameters()))
    opt_g = torch.optim.Adam(gen_params, lr=config.learning_rate, betas=config.betas)
    opt_dr = torch.optim.Adam(reenactor_discs.parameters(), lr=config.learning_rate,
                              betas=config.betas)
    opt_db = torch.optim.Adam(mixer_disc.parameters(), lr=config.learning_rate,
                              betas=config.betas)

    history: list[dict] = []
    paths: dict[str, str] = {}

    def write_ckpts(step):
        if config.checkpoint_dir is None:
            return
        d = config.checkpoint_dir
        paths["transformer"] = str(ckpt.save_checkpoint(
            f"{d}/landmark_transformer_e2e_{step:07d}.pt", step=step,
            config=lt_config.to_dict(),
            modules={"transformer": transformer, "au_regressor": au_regressor}))
        paths["reenactor"] = str(ckpt.save_checkpoint(
            f"{d}/reenactor_e2e_{step:07d}.pt", step=step, config=gr_config.to_dict(),
            modules={"generator": reenactor, "discriminators": reenactor_discs}))
        paths["mixer"] = str(ckpt.save_checkpoint(
            f"{d}/mixer_e2e_{step:07d}.pt", step=step, config=gb_config.to_dict(),
            modules={"mixer": mixer, "discriminator": mixer_disc}))

    for step in range(config.steps):
        s = pair_sample(index, rng, res)
        l_s, l_d, m_d = s["l_s"], s["l_d"], s["m_d"]
        i_s = s["i_s"].unsqueeze(0)
        i_d = s["i_d"].unsqueeze(0)
        seg_d = s["seg_d"].unsqueeze(0)

        delta = transformer(l_s, m_d)
        l_t = l_s + delta
        l_lr = loss_lr(l_t, l_d, delta, config.landmark_weights.lambda_lr)
        l_lau = loss_lau(au_regressor, l_t, l_d, m_d)
        l_lc = loss_lc(l_t, l_d, graph)
        l_landmark = (config.landmark_weights.lambda_l1 * l_lr
                      + config.landmark_weights.lambda_l2 * l_lau
                      + config.landmark_weights.lambda_l3 * l_lc)

        h_t = render_heatmap(l_t, res, res, sigma).float().unsqueeze(0)
        img, seg_logits = reenactor(i_s, h_t)
        fake_masked = mask_face(img, torch.softmax(seg_logits, dim=-3))
        real_masked = mask_face(i_d, seg_d)
        g_adv_r, d_adv_r = loss_radv(reenactor_discs, real_masked, fake_masked)
        l_r, r_comps = loss_reenactor_total(
            loss_rr(fake_masked, real_masked),
            loss_rp(fake_masked, real_masked, extractor),
            g_adv_r, loss_ce(seg_logits, seg_d), gr_config.weights)

        i_b = mask_background(i_s, s["seg_s"].unsqueeze(0))
        i_c, m = mixer(fake_masked, i_b)
        i_r = blend(i_c, i_b, m)
        g_adv_b, d_adv_b = loss_radv(mixer_disc, i_d, i_r)
        l_b, b_comps = loss_mixer_total(m, i_r, i_d, g_adv_b, extractor, gb_config.weights)

        total = l_landmark + l_r + l_b
        if not all(torch.isfinite(t) for t in (total, d_adv_r, d_adv_b)):
            raise TrainingDiverged(f"non-finite loss at step {step}",
                                   paths.get("mixer"))

        opt_g.zero_grad()
        total.backward(retain_graph=True)
        opt_g.step()
        opt_dr.zero_grad()
        d_adv_r.backward()
        opt_dr.step()
        opt_db.zero_grad()
        d_adv_b.backward()
        opt_db.step()

        if step % config.log_interval == 0 or step == config.steps - 1:
            history.append({"step": step, "landmark": _f(l_landmark),
                            "rr": r_comps["rr"], "br": b_comps["br"],
                            "total": _f(total)})
        if config.checkpoint_interval and (step + 1) % config.checkpoint_interval == 0:
            write_ckpts(step + 1)

    write_ckpts(config.steps)
    return history, paths
