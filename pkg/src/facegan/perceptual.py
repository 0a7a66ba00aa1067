"""Pluggable perceptual feature extractors for the perceptual losses.

Production runs use a pretrained VGG classification backbone (via
torchvision); tests use lightweight stubs. An extractor is any callable
mapping a (B, 3, H, W) image tensor to a list of feature tensors.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class IdentityExtractor:
    """Single 'layer' equal to the input image itself."""

    def __call__(self, img: torch.Tensor) -> list[torch.Tensor]:
        return [img]


class PoolingExtractor:
    """Deterministic parameter-free pyramid of average-pooled images.

    Gives the perceptual loss a multi-scale flavor without any pretrained
    weights; used at desk scale and in smoke training.
    """

    def __init__(self, levels: int = 3):
        self.levels = levels

    def __call__(self, img: torch.Tensor) -> list[torch.Tensor]:
        feats = [img]
        cur = img
        for _ in range(self.levels - 1):
            cur = torch.nn.functional.avg_pool2d(cur, 2)
            feats.append(cur)
        return feats


class VggExtractor:
    """VGG19 relu slices, frozen; requires torchvision weights."""

    LAYERS = (1, 6, 11, 20, 29)

    def __init__(self, device: str = "cpu"):
        from torchvision.models import vgg19
        features = vgg19(weights="IMAGENET1K_V1").features.to(device).eval()
        for p in features.parameters():
            p.requires_grad_(False)
        self.features = features

    def __call__(self, img: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        cur = img
        for i, layer in enumerate(self.features):
            cur = layer(cur)
            if i in self.LAYERS:
                feats.append(cur)
            if i >= max(self.LAYERS):
                break
        return feats


def make_extractor(name: str, device: str = "cpu"):
    if name == "identity":
        return IdentityExtractor()
    if name == "pooling":
        return PoolingExtractor()
    if name == "vgg":
        return VggExtractor(device=device)
    raise ValueError(f"unknown perceptual extractor {name!r}")
