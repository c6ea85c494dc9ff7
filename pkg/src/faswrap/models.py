"""Toy multi-scale spoof detection model.

The model follows the two-part structure shared by modern anti-spoofing
networks: a feature extractor producing a pyramid of progressively
downsampled feature maps, and estimation layers that turn the pyramid into
auxiliary spoof cues (a pseudo-depth map plus a live logit). The extractor is
deliberately small; the package's training machinery is architecture-agnostic
and only relies on the pyramid contract.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericalError, PipelineError
from .samples import Batch


@dataclass
class FasModelConfig:
    levels: int = 3
    channels: tuple = (16, 32, 64)
    input_size: tuple = (64, 64)
    depth_size: tuple = None  # default: input_size // 4
    seed: int = 0

    def __post_init__(self):
        if self.levels < 2:
            raise ConfigError(f"need at least 2 pyramid levels, got {self.levels}")
        if len(self.channels) != self.levels:
            raise ConfigError("channels must list one width per level")
        if any(c <= 0 for c in self.channels):
            raise ConfigError("channel widths must be positive")
        h, w = self.input_size
        stride = 2 ** self.levels
        if h % stride or w % stride:
            raise ConfigError(
                f"input size {self.input_size} not divisible by total stride {stride}"
            )
        if self.depth_size is None:
            self.depth_size = (h // 4, w // 4)

    def to_dict(self):
        return {
            "levels": self.levels,
            "channels": list(self.channels),
            "input_size": list(self.input_size),
            "depth_size": list(self.depth_size),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            levels=d["levels"],
            channels=tuple(d["channels"]),
            input_size=tuple(d["input_size"]),
            depth_size=tuple(d["depth_size"]),
            seed=d.get("seed", 0),
        )


def seeded_init_(module: nn.Module, seed: int) -> None:
    """Initialize parameters deterministically from a private generator.

    Registration order fixes the draw order, so two modules with identical
    architecture and seed get bit-identical parameters regardless of global
    RNG state.
    """
    g = torch.Generator().manual_seed(seed)
    for name, p in module.named_parameters():
        with torch.no_grad():
            if p.dim() > 1:
                fan_in = p[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=g)
            else:
                p.zero_()


class _ScaleBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.down = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.mix = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1)

    def forward(self, x):
        x = F.leaky_relu(self.down(x), 0.2)
        return F.leaky_relu(self.mix(x), 0.2)


class SceHead(nn.Module):
    """Spoof-cue estimation layers: pseudo-depth map plus live logit."""

    def __init__(self, c_last, depth_size):
        super().__init__()
        self.depth_size = tuple(depth_size)
        self.depth_conv = nn.Conv2d(c_last, 1, 1)
        self.logit_fc = nn.Linear(c_last, 1)

    def forward(self, pyramid):
        last = pyramid[-1]
        depth = self.depth_conv(last)
        depth = F.interpolate(depth, size=self.depth_size, mode="bilinear", align_corners=False)
        depth = torch.sigmoid(depth).squeeze(1)
        pooled = last.mean(dim=(2, 3))
        logit = self.logit_fc(pooled).squeeze(1)
        return SceOutputs(depth_map=depth, live_logit=logit)


@dataclass
class SceOutputs:
    depth_map: torch.Tensor  # (N, Hd, Wd) in [0, 1]
    live_logit: torch.Tensor  # (N,)


class ToyFasModel(nn.Module):
    """Multi-scale extractor ``f`` plus spoof-cue layers ``g``."""

    def __init__(self, config: FasModelConfig):
        super().__init__()
        self.config = config
        blocks = []
        c_prev = 3
        for c in config.channels:
            blocks.append(_ScaleBlock(c_prev, c))
            c_prev = c
        self.extractor = nn.ModuleList(blocks)
        self.sce = SceHead(config.channels[-1], config.depth_size)
        self.role_tag = "source_teacher"
        seeded_init_(self, config.seed)

    def extract(self, images: torch.Tensor) -> list:
        """Run the extractor; returns the feature pyramid (list of tensors)."""
        if images.dim() != 4 or images.shape[1] != 3:
            raise PipelineError(f"expected (N, 3, H, W) images, got {tuple(images.shape)}")
        if tuple(images.shape[2:]) != tuple(self.config.input_size):
            raise PipelineError(
                f"input size {tuple(images.shape[2:])} does not match configured "
                f"{tuple(self.config.input_size)}"
            )
        pyramid = []
        x = images
        for block in self.extractor:
            x = block(x)
            pyramid.append(x)
        return pyramid

    def forward(self, images: torch.Tensor) -> SceOutputs:
        return self.sce(self.extract(images))

    def spoof_score(self, images: torch.Tensor) -> torch.Tensor:
        """Scalar score per sample, higher = more spoof."""
        return 1.0 - torch.sigmoid(self(images).live_logit)


def build_toy_fas_model(config: FasModelConfig) -> ToyFasModel:
    return ToyFasModel(config)


def clone_model(model: ToyFasModel) -> ToyFasModel:
    return copy.deepcopy(model)


def batch_to_tensor(batch: Batch, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(batch.images).to(dtype)


def extract_features(model: ToyFasModel, batch: Batch) -> list:
    return model.extract(batch_to_tensor(batch))


@lru_cache(maxsize=8)
def _radial_bump(size) -> np.ndarray:
    h, w = size
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    bump = np.clip(1.0 - (xx ** 2 + yy ** 2), 0.0, 1.0)
    return bump.astype(np.float32)


def pseudo_depth_target(live: torch.Tensor, size) -> torch.Tensor:
    """Depth supervision: fixed radial bump for live, all-zero for spoof."""
    bump = torch.from_numpy(_radial_bump(tuple(size))).to(live.dtype)
    return live.view(-1, 1, 1) * bump.unsqueeze(0)


def original_loss(outputs: SceOutputs, depth_target: torch.Tensor, live_target: torch.Tensor) -> torch.Tensor:
    """Base training objective: depth MSE plus live/spoof BCE on the logit."""
    if not torch.isfinite(outputs.depth_map).all() or not torch.isfinite(outputs.live_logit).all():
        raise NumericalError("non-finite model outputs")
    if outputs.depth_map.shape != depth_target.shape:
        raise PipelineError(
            f"depth target shape {tuple(depth_target.shape)} does not match "
            f"outputs {tuple(outputs.depth_map.shape)}"
        )
    depth_term = F.mse_loss(outputs.depth_map, depth_target)
    cls_term = F.binary_cross_entropy_with_logits(outputs.live_logit, live_target)
    return depth_term + cls_term


class BinaryHead(nn.Module):
    """Two-class head on globally pooled last-level features."""

    def __init__(self, c_in, seed: int = 0):
        super().__init__()
        self.fc = nn.Linear(c_in, 2)
        seeded_init_(self, seed)

    def pooled(self, pyramid) -> torch.Tensor:
        return pyramid[-1].mean(dim=(2, 3))

    def forward(self, pyramid) -> torch.Tensor:
        """Returns (N, 2) class probabilities ordered (spoof, live)."""
        return torch.softmax(self.logits(pyramid), dim=1)

    def logits(self, pyramid) -> torch.Tensor:
        return self.fc(self.pooled(pyramid))


def attach_binary_head(model: ToyFasModel, seed: int = 0) -> BinaryHead:
    """Build a binary head matched to the model's last pyramid level.

    The backbone stays frozen during head training: the head trainer runs
    feature extraction under ``no_grad`` and only steps the head parameters.
    """
    return BinaryHead(model.config.channels[-1], seed=seed)
