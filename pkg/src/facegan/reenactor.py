"""Heatmap-conditioned face generator with a segmentation head, multi-scale
patch discriminators and the associated loss stack, plus the progressive
(128 -> 256) training loop.

Class indices throughout: 0 = background, 1 = face, 2 = hair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .perceptual import make_extractor
from .transformer import TrainingDiverged

BACKGROUND, FACE, HAIR = 0, 1, 2
NUM_SEG_CLASSES = 3
LOG_EPS = 1e-7
LOGIT_CLAMP = 30.0


def _f(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def moving_average(values, window: int) -> list[float]:
    """Trailing moving average; shorter prefix windows are averaged as-is."""
    out = []
    acc = 0.0
    vals = list(values)
    for i, v in enumerate(vals):
        acc += v
        if i >= window:
            acc -= vals[i - window]
        out.append(acc / min(i + 1, window))
    return out


def _norm(ch: int) -> nn.Module:
    return nn.InstanceNorm2d(ch, affine=True)


class UNetGenerator(nn.Module):
    """Encoder-decoder with skip connections and optional auxiliary head on
    the second-last feature map."""

    def __init__(self, in_channels: int, out_channels: int, base: int = 64,
                 depth: int = 5, aux_channels: int | None = None):
        super().__init__()
        self.depth = depth
        widths = [min(base * 2 ** i, base * 8) for i in range(depth)]
        self.downs = nn.ModuleList()
        prev = in_channels
        for w in widths:
            self.downs.append(nn.Sequential(
                nn.Conv2d(prev, w, 4, stride=2, padding=1), _norm(w), nn.LeakyReLU(0.2)))
            prev = w
        self.ups = nn.ModuleList()
        for i in reversed(range(depth)):
            skip = widths[i - 1] if i > 0 else 0
            w = widths[i - 1] if i > 0 else base
            self.ups.append(nn.Sequential(
                nn.Conv2d(prev + skip, w, 3, padding=1), _norm(w), nn.ReLU()))
            prev = w
        self.head = nn.Conv2d(base, out_channels, 3, padding=1)
        self.aux_head = (nn.Conv2d(base, aux_channels, 3, padding=1)
                         if aux_channels else None)

    def forward(self, x: torch.Tensor):
        h, w = x.shape[-2:]
        if h % 2 ** self.depth or w % 2 ** self.depth:
            raise ValueError(f"input {h}x{w} not divisible by 2^{self.depth}")
        skips = []
        cur = x
        for down in self.downs:
            cur = down(cur)
            skips.append(cur)
        for i, up in enumerate(self.ups):
            cur = F.interpolate(cur, scale_factor=2, mode="nearest")
            skip_idx = self.depth - 2 - i
            if skip_idx >= 0:
                cur = torch.cat([cur, skips[skip_idx]], dim=1)
            cur = up(cur)
        out = self.head(cur)
        if self.aux_head is not None:
            return out, self.aux_head(cur)
        return out


class ReenactorGenerator(nn.Module):
    """(source image + landmark heatmap) -> reenacted face + segmentation."""

    def __init__(self, base: int = 64, depth: int = 5,
                 resolutions: tuple[int, ...] = (128, 256)):
        super().__init__()
        self.resolutions = tuple(resolutions)
        self.unet = UNetGenerator(4, 3, base=base, depth=depth,
                                  aux_channels=NUM_SEG_CLASSES)

    def forward(self, i_s: torch.Tensor, h_t: torch.Tensor):
        """Returns (image in [0,1], segmentation logits)."""
        if i_s.shape[-2:] != h_t.shape[-2:]:
            raise ValueError(f"image {tuple(i_s.shape)} vs heatmap {tuple(h_t.shape)} size mismatch")
        img, seg_logits = self.unet(torch.cat([i_s, h_t], dim=-3))
        return torch.sigmoid(img), seg_logits


def gr_forward(gen: ReenactorGenerator, i_s, h_t):
    """Inference entry: validates the resolution against the generator's
    supported progressive stages and returns (image, segmentation probs)."""
    i_s = torch.as_tensor(i_s, dtype=torch.float32) if not torch.is_tensor(i_s) else i_s
    h_t = torch.as_tensor(h_t, dtype=torch.float32) if not torch.is_tensor(h_t) else h_t
    batched = i_s.dim() == 4
    if not batched:
        i_s, h_t = i_s.unsqueeze(0), h_t.unsqueeze(0)
    h, w = i_s.shape[-2:]
    if h not in gen.resolutions or w not in gen.resolutions:
        raise ValueError(f"resolution {h}x{w} unsupported; stages are {gen.resolutions}")
    img, seg_logits = gen(i_s, h_t)
    seg = torch.softmax(seg_logits, dim=-3)
    if not batched:
        img, seg = img.squeeze(0), seg.squeeze(0)
    return img, seg


def mask_face(image: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
    """Zero out pixels whose argmax segmentation class is background."""
    if seg.dim() == image.dim():          # probability / logit map
        labels = seg.argmax(dim=-3)
    else:                                  # integer label map
        labels = seg
    if labels.shape[-2:] != image.shape[-2:]:
        raise ValueError(f"segmentation {tuple(labels.shape)} does not match image {tuple(image.shape)}")
    keep = (labels != BACKGROUND).to(image.dtype).unsqueeze(-3)
    return image * keep


def mask_background(image: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
    """Complement of mask_face: keep background, zero face and hair."""
    if seg.dim() == image.dim():
        labels = seg.argmax(dim=-3)
    else:
        labels = seg
    keep = (labels == BACKGROUND).to(image.dtype).unsqueeze(-3)
    return image * keep


# --- discriminators -------------------------------------------------------

class PatchDiscriminator(nn.Module):
    """PatchGAN discriminator, per-patch probability map in (0, 1)."""

    def __init__(self, in_channels: int = 3, base: int = 64, n_layers: int = 3):
        super().__init__()
        layers: list[nn.Module] = [
            nn.Conv2d(in_channels, base, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        prev = base
        for i in range(1, n_layers):
            w = min(base * 2 ** i, base * 8)
            layers += [nn.Conv2d(prev, w, 4, stride=2, padding=1), _norm(w), nn.LeakyReLU(0.2)]
            prev = w
        layers.append(nn.Conv2d(prev, 1, 4, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(x))


class MultiScaleDiscriminator(nn.Module):
    """Patch discriminators on a downsampled image pyramid."""

    def __init__(self, n_scales: int = 3, in_channels: int = 3, base: int = 64):
        super().__init__()
        self.discs = nn.ModuleList(
            PatchDiscriminator(in_channels, base) for _ in range(n_scales))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        outs = []
        cur = x
        for d in self.discs:
            outs.append(d(cur))
            cur = F.avg_pool2d(cur, 2)
        return outs


def loss_radv(d_set, real: torch.Tensor, fake: torch.Tensor):
    """Adversarial pair over all discriminator scales.

    d_loss uses the saturating two-player objective with the fake branch
    detached; g_loss uses the non-saturating form on the fake branch.
    """
    if real.shape[-2:] != fake.shape[-2:]:
        raise ValueError("real/fake resolution mismatch")
    g_loss = real.new_zeros(())
    d_loss = real.new_zeros(())
    for score in d_set(fake):
        g_loss = g_loss - torch.log(score.clamp(min=LOG_EPS)).mean()
    for score in d_set(real):
        d_loss = d_loss - torch.log(score.clamp(min=LOG_EPS)).mean()
    for score in d_set(fake.detach()):
        d_loss = d_loss - torch.log((1.0 - score).clamp(min=LOG_EPS)).mean()
    return g_loss, d_loss


# --- losses ---------------------------------------------------------------

def loss_rr(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pixel-wise reconstruction (mean absolute difference)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return (a - b).abs().mean()


def loss_rp(a: torch.Tensor, b: torch.Tensor, extractor) -> torch.Tensor:
    """Perceptual loss: per-layer feature differences normalized by C*H*W."""
    total = a.new_zeros(())
    for fa, fb in zip(extractor(a), extractor(b)):
        total = total + (fa - fb).abs().mean()
    return total


def loss_ce(seg_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross entropy; logits clamped to keep the value bounded."""
    logits = seg_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    if logits.dim() == 3:
        logits, labels = logits.unsqueeze(0), labels.unsqueeze(0)
    return F.cross_entropy(logits, labels.long())


@dataclass(frozen=True)
class ReenactorLossWeights:
    lambda_r1: float = 10.0   # reconstruction
    lambda_r2: float = 10.0   # perceptual
    lambda_r3: float = 1.0    # adversarial
    lambda_r4: float = 1.0    # segmentation CE

    def __post_init__(self):
        for name in ("lambda_r1", "lambda_r2", "lambda_r3", "lambda_r4"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")


def loss_reenactor_total(l_rr, l_rp, l_radv, l_ce,
                         weights: ReenactorLossWeights):
    total = (weights.lambda_r1 * l_rr + weights.lambda_r2 * l_rp
             + weights.lambda_r3 * l_radv + weights.lambda_r4 * l_ce)
    return total, {"rr": _f(l_rr), "rp": _f(l_rp), "radv": _f(l_radv),
                   "ce": _f(l_ce), "total": _f(total)}


# --- training -------------------------------------------------------------

@dataclass
class ReenactorTrainConfig:
    schedule: tuple[tuple[int, int], ...] = ((128, 20000), (256, 20000))
    fade_steps: int = 1000
    base_width: int = 64
    depth: int = 5
    disc_base: int = 64
    n_disc_scales: int = 3
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    weights: ReenactorLossWeights = field(default_factory=ReenactorLossWeights)
    extractor: str = "pooling"
    seed: int = 0
    checkpoint_dir: str | None = None
    checkpoint_interval: int = 1000
    log_interval: int = 10

    def resolutions(self) -> tuple[int, ...]:
        return tuple(r for r, _ in self.schedule)

    def to_dict(self) -> dict:
        return {
            "schedule": [list(s) for s in self.schedule], "fade_steps": self.fade_steps,
            "base_width": self.base_width, "depth": self.depth,
            "disc_base": self.disc_base, "n_disc_scales": self.n_disc_scales,
            "learning_rate": self.learning_rate, "betas": list(self.betas),
            "weights": {"lambda_r1": self.weights.lambda_r1, "lambda_r2": self.weights.lambda_r2,
                        "lambda_r3": self.weights.lambda_r3, "lambda_r4": self.weights.lambda_r4},
            "extractor": self.extractor, "seed": self.seed,
        }


def resize_sample(i_s, h_t, i_d, seg_d, res: int):
    """Resize a training tuple to the current progressive stage resolution."""
    def img(t):
        return F.interpolate(t.unsqueeze(0), size=(res, res), mode="bilinear",
                             align_corners=False).squeeze(0)
    seg = F.interpolate(seg_d.float().unsqueeze(0).unsqueeze(0), size=(res, res),
                        mode="nearest").squeeze(0).squeeze(0).long()
    return img(i_s), img(h_t), img(i_d), seg


def train_reenactor(dataset, config: ReenactorTrainConfig):
    """Alternating G/D training over the progressive resolution schedule.

    `dataset` is a sequence of (i_s 3xHxW, h_t 1xHxW, i_d 3xHxW, seg_d HxW)
    tuples at the final resolution. Returns (generator, discriminators,
    history); history entries carry per-step loss components and the stage.
    """
    samples = [tuple(torch.as_tensor(np.asarray(x)) for x in s) for s in dataset]
    if not samples:
        raise ValueError("empty training dataset")
    samples = [(a.float(), b.float(), c.float(), d.long()) for a, b, c, d in samples]
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    gen = ReenactorGenerator(base=config.base_width, depth=config.depth,
                             resolutions=config.resolutions())
    discs = MultiScaleDiscriminator(config.n_disc_scales, 3, config.disc_base)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=config.betas)
    opt_d = torch.optim.Adam(discs.parameters(), lr=config.learning_rate, betas=config.betas)
    extractor = make_extractor(config.extractor)

    history: list[dict] = []
    last_ckpt = None
    global_step = 0

    def write_ckpt():
        nonlocal last_ckpt
        if config.checkpoint_dir is None:
            return
        last_ckpt = ckpt.save_checkpoint(
            f"{config.checkpoint_dir}/reenactor_{global_step:07d}.pt",
            step=global_step, config=config.to_dict(),
            modules={"generator": gen, "discriminators": discs},
            optimizers={"adam_g": opt_g, "adam_d": opt_d})

    for stage_idx, (res, steps) in enumerate(config.schedule):
        prev_res = config.schedule[stage_idx - 1][0] if stage_idx > 0 else None
        for stage_step in range(steps):
            i_s, h_t, i_d, seg_d = resize_sample(*samples[int(rng.integers(len(samples)))], res)
            i_s, h_t, i_d = (t.unsqueeze(0) for t in (i_s, h_t, i_d))
            seg_d = seg_d.unsqueeze(0)

            img, seg_logits = gen(i_s, h_t)
            if prev_res is not None and stage_step < config.fade_steps:
                # fade-in: blend with the upsampled previous-resolution output
                alpha = (stage_step + 1) / config.fade_steps
                lo_img, _ = gen(F.interpolate(i_s, size=(prev_res, prev_res), mode="bilinear",
                                              align_corners=False),
                                F.interpolate(h_t, size=(prev_res, prev_res), mode="bilinear",
                                              align_corners=False))
                img = alpha * img + (1 - alpha) * F.interpolate(
                    lo_img, size=(res, res), mode="bilinear", align_corners=False)

            fake_masked = mask_face(img, torch.softmax(seg_logits, dim=-3))
            real_masked = mask_face(i_d, seg_d)

            l_rr = loss_rr(fake_masked, real_masked)
            l_rp = loss_rp(fake_masked, real_masked, extractor)
            g_adv, d_adv = loss_radv(discs, real_masked, fake_masked)
            l_ce = loss_ce(seg_logits, seg_d)
            g_total, comps = loss_reenactor_total(l_rr, l_rp, g_adv, l_ce, config.weights)
            if not (torch.isfinite(g_total) and torch.isfinite(d_adv)):
                raise TrainingDiverged(
                    f"non-finite loss at step {global_step}", last_ckpt)

            opt_g.zero_grad()
            g_total.backward(retain_graph=True)
            opt_g.step()
            opt_d.zero_grad()
            d_adv.backward()
            opt_d.step()

            if global_step % config.log_interval == 0 or stage_step == steps - 1:
                history.append({"step": global_step, "stage": res,
                                "d": _f(d_adv), **comps})
            global_step += 1
            if config.checkpoint_interval and global_step % config.checkpoint_interval == 0:
                write_ckpt()
        history.append({"step": global_step, "stage": res, "event": f"stage_{res}_done"})

    write_ckpt()
    return gen, discs, history
