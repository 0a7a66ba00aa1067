"""Landmark transformer: displaces source landmarks according to driving
motion, with an auxiliary AU regressor supervising expression transfer.

The transformer is a fully connected net mapping the concatenated source
landmark vector (136) and driving motion vector (20) to a displacement (136);
transformed landmarks are the residual sum. The AU regressor maps a landmark
vector (136) back to a motion vector (20) and is trained simultaneously.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .geometry import LANDMARK_DIM, MOTION_DIM, ConnectivityGraph, MotionVector, connectivity_distances


def _f(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; carries the last good checkpoint."""

    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def _mlp(in_dim: int, out_dim: int, hidden: tuple[int, ...]) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for width in hidden:
        layers += [nn.Linear(prev, width), nn.LeakyReLU(0.2)]
        prev = width
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


class LandmarkTransformer(nn.Module):
    """(l_s, motion) -> displacement, 156 -> 136."""

    def __init__(self, hidden: tuple[int, ...] = (512, 512, 512, 512)):
        super().__init__()
        self.net = _mlp(LANDMARK_DIM + MOTION_DIM, LANDMARK_DIM, hidden)

    def forward(self, l_s: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        if l_s.shape[-1] != LANDMARK_DIM or motion.shape[-1] != MOTION_DIM:
            raise ValueError(
                f"expected ({LANDMARK_DIM}, {MOTION_DIM}) inputs, got "
                f"{l_s.shape[-1]}, {motion.shape[-1]}")
        return self.net(torch.cat([l_s, motion], dim=-1))


class AuRegressor(nn.Module):
    """Landmark vector -> motion vector, 136 -> 20."""

    def __init__(self, hidden: tuple[int, ...] = (512, 512, 512, 512)):
        super().__init__()
        self.net = _mlp(LANDMARK_DIM, MOTION_DIM, hidden)

    def forward(self, landmarks: torch.Tensor) -> torch.Tensor:
        if landmarks.shape[-1] != LANDMARK_DIM:
            raise ValueError(f"expected {LANDMARK_DIM}-dim landmarks, got {landmarks.shape[-1]}")
        return self.net(landmarks)


def lt_forward(transformer: LandmarkTransformer, l_s, motion) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (delta, l_t) with l_t = l_s + delta."""
    l_s = torch.as_tensor(l_s, dtype=torch.float32) if not torch.is_tensor(l_s) else l_s
    if isinstance(motion, MotionVector):
        motion = torch.from_numpy(motion.as_vector()).to(l_s.dtype)
    motion = torch.as_tensor(motion, dtype=l_s.dtype) if not torch.is_tensor(motion) else motion
    delta = transformer(l_s, motion)
    return delta, l_s + delta


# --- losses ---------------------------------------------------------------
# All norms are per-element means so magnitudes do not scale with the
# landmark count.

def loss_lr(l_t: torch.Tensor, l_d: torch.Tensor, delta: torch.Tensor,
            lambda_lr: float) -> torch.Tensor:
    """Landmark reconstruction with an l2 displacement penalty."""
    if l_t.shape != l_d.shape:
        raise ValueError(f"shape mismatch: {l_t.shape} vs {l_d.shape}")
    return (l_t - l_d).abs().mean() + lambda_lr * (delta * delta).mean()


def loss_lau(au_regressor: AuRegressor, l_t: torch.Tensor, l_d: torch.Tensor,
             motion_d: torch.Tensor) -> torch.Tensor:
    """AU consistency on both transformed and driving landmarks."""
    return ((au_regressor(l_t) - motion_d).abs().mean()
            + (au_regressor(l_d) - motion_d).abs().mean())


def loss_lc(l_t: torch.Tensor, l_d: torch.Tensor, graph: ConnectivityGraph) -> torch.Tensor:
    """Connectivity: preserve edge lengths of the driving landmarks."""
    d_t = connectivity_distances(l_t, graph)
    d_d = connectivity_distances(l_d, graph)
    return (d_t - d_d).abs().mean()


@dataclass(frozen=True)
class LandmarkLossWeights:
    lambda_lr: float = 0.01
    lambda_l1: float = 1.0
    lambda_l2: float = 1.0
    lambda_l3: float = 1.0

    def __post_init__(self):
        for name in ("lambda_lr", "lambda_l1", "lambda_l2", "lambda_l3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")


def loss_landmark_total(au_regressor: AuRegressor, l_t, l_d, delta, motion_d,
                        graph: ConnectivityGraph,
                        weights: LandmarkLossWeights) -> tuple[torch.Tensor, dict]:
    """Weighted sum of the three landmark losses; components kept for logs."""
    lr = loss_lr(l_t, l_d, delta, weights.lambda_lr)
    lau = loss_lau(au_regressor, l_t, l_d, motion_d)
    lc = loss_lc(l_t, l_d, graph)
    total = weights.lambda_l1 * lr + weights.lambda_l2 * lau + weights.lambda_l3 * lc
    return total, {"lr": _f(lr), "lau": _f(lau), "lc": _f(lc), "total": _f(total)}


# --- training -------------------------------------------------------------

@dataclass
class LandmarkTrainConfig:
    steps: int = 5000
    batch_size: int = 32
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    hidden: tuple[int, ...] = (512, 512, 512, 512)
    weights: LandmarkLossWeights = field(default_factory=LandmarkLossWeights)
    # Cosine decay to zero counteracts the l1-loss floor: with adaptive
    # moments the step size near the optimum stays ~lr unless decayed.
    lr_schedule: str = "constant"  # "constant" | "cosine"
    # Eq. 3 reference landmarks; training pairs share one identity so the
    # driving distances are the natural target.
    connectivity_reference: str = "driving"
    seed: int = 0
    checkpoint_dir: str | None = None
    checkpoint_interval: int = 1000
    log_interval: int = 50

    def to_dict(self) -> dict:
        return {
            "steps": self.steps, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate, "betas": list(self.betas),
            "hidden": list(self.hidden), "lr_schedule": self.lr_schedule,
            "weights": {
                "lambda_lr": self.weights.lambda_lr, "lambda_l1": self.weights.lambda_l1,
                "lambda_l2": self.weights.lambda_l2, "lambda_l3": self.weights.lambda_l3,
            },
            "connectivity_reference": self.connectivity_reference,
            "seed": self.seed,
        }


def train_landmark_transformer(dataset, config: LandmarkTrainConfig,
                               graph: ConnectivityGraph):
    """Fit L_T and the AU regressor on (l_s, l_d, motion_d) triples.

    `dataset` is a sequence of triples of 136/136/20 float vectors drawn from
    the same track. Returns (transformer, au_regressor, history).
    """
    triples = list(dataset)
    if not triples:
        raise ValueError("empty training dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    l_s = torch.tensor(np.stack([t[0] for t in triples]), dtype=torch.float32)
    l_d = torch.tensor(np.stack([t[1] for t in triples]), dtype=torch.float32)
    m_d = torch.tensor(np.stack([t[2] for t in triples]), dtype=torch.float32)

    transformer = LandmarkTransformer(hidden=config.hidden)
    au_regressor = AuRegressor(hidden=config.hidden)
    opt = torch.optim.Adam(
        list(transformer.parameters()) + list(au_regressor.parameters()),
        lr=config.learning_rate, betas=config.betas)
    sched = None
    if config.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.steps)
    elif config.lr_schedule != "constant":
        raise ValueError(f"unknown lr_schedule {config.lr_schedule!r}")

    history: list[dict] = []
    last_ckpt = None

    def write_ckpt(step):
        nonlocal last_ckpt
        if config.checkpoint_dir is None:
            return
        last_ckpt = ckpt.save_checkpoint(
            f"{config.checkpoint_dir}/landmark_transformer_{step:07d}.pt",
            step=step, config=config.to_dict(),
            modules={"transformer": transformer, "au_regressor": au_regressor},
            optimizers={"adam": opt})

    n = len(triples)
    for step in range(config.steps):
        idx = torch.from_numpy(rng.integers(0, n, size=min(config.batch_size, n)))
        delta = transformer(l_s[idx], m_d[idx])
        l_t = l_s[idx] + delta
        ref = l_d[idx] if config.connectivity_reference == "driving" else l_s[idx]
        lr_ = loss_lr(l_t, l_d[idx], delta, config.weights.lambda_lr)
        lau_ = loss_lau(au_regressor, l_t, l_d[idx], m_d[idx])
        lc_ = loss_lc(l_t, ref, graph)
        total = (config.weights.lambda_l1 * lr_ + config.weights.lambda_l2 * lau_
                 + config.weights.lambda_l3 * lc_)
        if not torch.isfinite(total):
            raise TrainingDiverged(f"non-finite loss at step {step}", last_ckpt)
        opt.zero_grad()
        total.backward()
        opt.step()
        if sched is not None:
            sched.step()
        if step % config.log_interval == 0 or step == config.steps - 1:
            history.append({"step": step, "lr": _f(lr_), "lau": _f(lau_),
                            "lc": _f(lc_), "total": _f(total)})
        if config.checkpoint_interval and (step + 1) % config.checkpoint_interval == 0:
            write_ckpt(step + 1)

    write_ckpt(config.steps)
    return transformer, au_regressor, history
