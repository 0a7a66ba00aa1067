"""Background mixer: combines the masked reenacted face with the source
background through a generated color image and a learned single-channel mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .perceptual import make_extractor
from .reenactor import (MultiScaleDiscriminator, PatchDiscriminator, UNetGenerator,
                        loss_radv, loss_rr, loss_rp, mask_face, mask_background)
from .transformer import TrainingDiverged


def _f(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


class MixerGenerator(torch.nn.Module):
    """(masked face + background) 6ch -> color image 3ch + mask 1ch."""

    def __init__(self, base: int = 64, depth: int = 5,
                 resolutions: tuple[int, ...] = (128, 256)):
        super().__init__()
        self.resolutions = tuple(resolutions)
        self.unet = UNetGenerator(6, 4, base=base, depth=depth)

    def forward(self, i_face: torch.Tensor, i_b: torch.Tensor):
        if i_face.shape[-2:] != i_b.shape[-2:]:
            raise ValueError(f"face {tuple(i_face.shape)} vs background {tuple(i_b.shape)} size mismatch")
        out = self.unet(torch.cat([i_face, i_b], dim=-3))
        i_c = torch.sigmoid(out[..., :3, :, :])
        m = torch.sigmoid(out[..., 3:4, :, :])
        return i_c, m


def gb_forward(gen: MixerGenerator, i_face, i_b):
    """Inference entry with stage-resolution validation."""
    i_face = torch.as_tensor(i_face, dtype=torch.float32) if not torch.is_tensor(i_face) else i_face
    i_b = torch.as_tensor(i_b, dtype=torch.float32) if not torch.is_tensor(i_b) else i_b
    batched = i_face.dim() == 4
    if not batched:
        i_face, i_b = i_face.unsqueeze(0), i_b.unsqueeze(0)
    h, w = i_face.shape[-2:]
    if h not in gen.resolutions or w not in gen.resolutions:
        raise ValueError(f"resolution {h}x{w} unsupported; stages are {gen.resolutions}")
    i_c, m = gen(i_face, i_b)
    if not batched:
        i_c, m = i_c.squeeze(0), m.squeeze(0)
    return i_c, m


def blend(i_c: torch.Tensor, i_b: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Per-pixel convex combination m * i_c + (1 - m) * i_b."""
    if i_c.shape != i_b.shape:
        raise ValueError(f"shape mismatch: {i_c.shape} vs {i_b.shape}")
    if float(m.detach().min()) < 0.0 or float(m.detach().max()) > 1.0:
        warnings.warn("blend mask outside [0, 1]; clamping", stacklevel=2)
        m = m.clamp(0.0, 1.0)
    return m * i_c + (1.0 - m) * i_b


def loss_mask(m: torch.Tensor, lambda_b1: float, lambda_b2: float) -> torch.Tensor:
    """Total-variation smoothing plus l2 weight penalty on the mask.

    Both terms are mean-reduced: the TV term averages the squared forward
    differences over all horizontal and vertical neighbor pairs.
    """
    m2 = m.reshape(-1, *m.shape[-2:])
    dx = m2[..., :, 1:] - m2[..., :, :-1]
    dy = m2[..., 1:, :] - m2[..., :-1, :]
    n_pairs = dx.numel() + dy.numel()
    tv = ((dx * dx).sum() + (dy * dy).sum()) / n_pairs
    return lambda_b1 * tv + lambda_b2 * (m * m).mean()


@dataclass(frozen=True)
class MixerLossWeights:
    lambda_b1: float = 1.0     # mask TV
    lambda_b2: float = 0.01    # mask l2
    lambda_b3: float = 10.0    # perceptual
    lambda_b4: float = 1.0     # adversarial
    lambda_b5: float = 10.0    # reconstruction

    def __post_init__(self):
        for name in ("lambda_b1", "lambda_b2", "lambda_b3", "lambda_b4", "lambda_b5"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")


def loss_mixer_total(m, i_r, i_d, g_adv, extractor, weights: MixerLossWeights):
    """Mask regularization + weighted perceptual/adversarial/reconstruction."""
    l_bm = loss_mask(m, weights.lambda_b1, weights.lambda_b2)
    l_bp = loss_rp(i_r, i_d, extractor)
    l_br = loss_rr(i_r, i_d)
    total = (l_bm + weights.lambda_b3 * l_bp + weights.lambda_b4 * g_adv
             + weights.lambda_b5 * l_br)
    return total, {"bm": _f(l_bm), "bp": _f(l_bp), "badv": _f(g_adv),
                   "br": _f(l_br), "total": _f(total)}


@dataclass
class MixerTrainConfig:
    steps: int = 20000
    resolution: int = 256
    base_width: int = 64
    depth: int = 5
    disc_base: int = 64
    n_disc_scales: int = 1    # single-scale patch discriminator by default
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    weights: MixerLossWeights = field(default_factory=MixerLossWeights)
    extractor: str = "pooling"
    teacher_forcing: bool = True
    joint: bool = False       # let gradients flow back into the reenactor
    seed: int = 0
    checkpoint_dir: str | None = None
    checkpoint_interval: int = 1000
    log_interval: int = 10

    def to_dict(self) -> dict:
        return {
            "steps": self.steps, "resolution": self.resolution,
            "base_width": self.base_width, "depth": self.depth,
            "disc_base": self.disc_base, "n_disc_scales": self.n_disc_scales,
            "learning_rate": self.learning_rate, "betas": list(self.betas),
            "weights": {f"lambda_b{i}": getattr(self.weights, f"lambda_b{i}") for i in range(1, 6)},
            "extractor": self.extractor, "teacher_forcing": self.teacher_forcing,
            "joint": self.joint, "seed": self.seed,
        }


def train_mixer(dataset, config: MixerTrainConfig, reenactor=None):
    """Train the mixer on (face input, background, driving target) triples.

    In teacher-forcing mode the face input is the ground-truth masked driving
    face; in joint mode `reenactor` is given (i_s, h_t) samples instead and
    its parameters receive gradients from the mixer losses.

    `dataset` yields dicts with keys:
      teacher mode: "face" 3xHxW, "i_b" 3xHxW, "i_d" 3xHxW
      joint mode:   additionally "i_s" 3xHxW, "h_t" 1xHxW
    Returns (mixer, discriminator, history).
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("empty training dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    mixer = MixerGenerator(base=config.base_width, depth=config.depth,
                           resolutions=(config.resolution,))
    disc = MultiScaleDiscriminator(config.n_disc_scales, 3, config.disc_base)
    g_params = list(mixer.parameters())
    if config.joint:
        if reenactor is None:
            raise ValueError("joint mode requires a reenactor")
        g_params += list(reenactor.parameters())
    opt_g = torch.optim.Adam(g_params, lr=config.learning_rate, betas=config.betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=config.betas)
    extractor = make_extractor(config.extractor)

    history: list[dict] = []
    last_ckpt = None

    def write_ckpt(step):
        nonlocal last_ckpt
        if config.checkpoint_dir is None:
            return
        modules = {"mixer": mixer, "discriminator": disc}
        if config.joint and reenactor is not None:
            modules["reenactor"] = reenactor
        last_ckpt = ckpt.save_checkpoint(
            f"{config.checkpoint_dir}/mixer_{step:07d}.pt",
            step=step, config=config.to_dict(), modules=modules,
            optimizers={"adam_g": opt_g, "adam_d": opt_d})

    def as_t(x):
        t = torch.as_tensor(np.asarray(x))
        return t.float()

    for step in range(config.steps):
        s = samples[int(rng.integers(len(samples)))]
        i_b = as_t(s["i_b"]).unsqueeze(0)
        i_d = as_t(s["i_d"]).unsqueeze(0)
        if config.joint:
            i_s = as_t(s["i_s"]).unsqueeze(0)
            h_t = as_t(s["h_t"]).unsqueeze(0)
            img, seg_logits = reenactor(i_s, h_t)
            face = mask_face(img, torch.softmax(seg_logits, dim=-3))
        else:
            face = as_t(s["face"]).unsqueeze(0)

        i_c, m = mixer(face, i_b)
        i_r = blend(i_c, i_b, m)
        g_adv, d_adv = loss_radv(disc, i_d, i_r)
        total, comps = loss_mixer_total(m, i_r, i_d, g_adv, extractor, config.weights)
        if not (torch.isfinite(total) and torch.isfinite(d_adv)):
            raise TrainingDiverged(f"non-finite loss at step {step}", last_ckpt)

        opt_g.zero_grad()
        total.backward(retain_graph=True)
        opt_g.step()
        opt_d.zero_grad()
        d_adv.backward()
        opt_d.step()

        if step % config.log_interval == 0 or step == config.steps - 1:
            history.append({"step": step, "d": _f(d_adv), **comps})
        if config.checkpoint_interval and (step + 1) % config.checkpoint_interval == 0:
            write_ckpt(step + 1)

    write_ckpt(config.steps)
    return mixer, disc, history
