"""Spoof region estimation.

Bootstrap supervision comes from a preliminary mask: the live counterpart of
a spoof image is reconstructed, the absolute difference image is collapsed to
a single channel by summing over RGB, and the result is thresholded (values
equal to the threshold count as spoof). The estimator head itself turns a
feature pyramid into a single full-resolution soft mask; during stage-1
fine-tuning it is supervised by preliminary masks for the first few epochs
only, after which the features keep training on the base objective alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import samples as samples_io
from . import synth
from .errors import ConfigError, PipelineError
from .models import ToyFasModel, clone_model, original_loss, seeded_init_
from .samples import DatasetManifest, ImageCache, ImageSample
from .training import (
    LossHistory,
    OptimizerSpec,
    batch_targets,
    build_optimizer,
    check_finite,
    epoch_batches,
)

DEFAULT_THRESHOLD = 0.1  # on the [0, 3] channel-sum scale


def threshold_map(gray: np.ndarray, threshold: float) -> np.ndarray:
    """Binarize a single-channel difference image; the boundary is inclusive."""
    if not 0 < threshold:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    return (gray >= threshold).astype(np.uint8)


@dataclass
class PreliminaryMask:
    mask: np.ndarray  # uint8 (H, W) in {0, 1}
    threshold_used: float
    provenance: str  # oracle | reconstructor


class OracleReconstructor:
    """Returns the stored base live counterpart of a synthetic spoof sample."""

    kind = "synthetic_oracle"

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest

    def reconstruct(self, sample: ImageSample, image: np.ndarray) -> np.ndarray:
        base_path = self.manifest.resolve(synth.base_path_for(sample))
        if not Path(base_path).exists():
            raise PipelineError(f"no stored base image for sample {sample.sample_id!r}")
        return samples_io.read_image(base_path)


class LiveProjectionReconstructor:
    """Reconstruction by projection onto a live-image subspace.

    Fitted on live images only: a spoof image is projected onto the top
    principal components of the live set, which suppresses spoof artifacts
    that live images never exhibit.
    """

    kind = "live_autoencoder"

    def __init__(self, mean: np.ndarray, components: np.ndarray, shape):
        self.mean = mean
        self.components = components  # (k, D)
        self.shape = shape

    @classmethod
    def fit(cls, manifest: DatasetManifest, n_components: int = 16, cache=None):
        cache = cache if cache is not None else ImageCache()
        lives = manifest.live_samples()
        if not lives:
            raise PipelineError("cannot fit a live reconstructor without live samples")
        flat = np.stack([cache.get(manifest, s).ravel() for s in lives]).astype(np.float64)
        mean = flat.mean(axis=0)
        centered = flat - mean
        k = min(n_components, len(lives), centered.shape[1])
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        shape = cache.get(manifest, lives[0]).shape
        return cls(mean=mean, components=vt[:k], shape=shape)

    def reconstruct(self, sample: ImageSample, image: np.ndarray) -> np.ndarray:
        flat = image.astype(np.float64).ravel() - self.mean
        proj = self.components.T @ (self.components @ flat) + self.mean
        return np.clip(proj, 0.0, 1.0).reshape(self.shape).astype(np.float32)


def compute_preliminary_mask(
    manifest: DatasetManifest,
    sample: ImageSample,
    rec,
    threshold: float = DEFAULT_THRESHOLD,
    cache=None,
) -> PreliminaryMask:
    """Bootstrap mask for one sample.

    Live samples get an all-zero mask without invoking the reconstructor.
    For spoof samples the mask is the thresholded grayscale absolute
    difference between the image and its reconstructed live counterpart.
    """
    if not 0 < threshold:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    cache = cache if cache is not None else ImageCache()
    image = cache.get(manifest, sample)
    if sample.is_live:
        mask = np.zeros(image.shape[1:], dtype=np.uint8)
        return PreliminaryMask(mask=mask, threshold_used=threshold, provenance=rec_kind(rec))
    recon = rec.reconstruct(sample, image)
    if recon.shape != image.shape:
        raise PipelineError(
            f"reconstructor output shape {recon.shape} does not match image {image.shape}"
        )
    diff = np.abs(image.astype(np.float64) - recon.astype(np.float64))
    gray = diff.sum(axis=0)
    return PreliminaryMask(
        mask=threshold_map(gray, threshold),
        threshold_used=threshold,
        provenance=rec_kind(rec),
    )


def rec_kind(rec) -> str:
    return "oracle" if getattr(rec, "kind", "") == "synthetic_oracle" else "reconstructor"


@dataclass
class SreConfig:
    pyramid_channels: tuple
    out_size: tuple
    hidden: int = 8
    seed: int = 0

    def to_dict(self):
        return {
            "pyramid_channels": list(self.pyramid_channels),
            "out_size": list(self.out_size),
            "hidden": self.hidden,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            pyramid_channels=tuple(d["pyramid_channels"]),
            out_size=tuple(d["out_size"]),
            hidden=d.get("hidden", 8),
            seed=d.get("seed", 0),
        )


class SpoofRegionEstimator(nn.Module):
    """Two 3x3 convolutions over the upsampled, concatenated pyramid.

    Each pyramid level is standardized per channel (parameter-free, per
    sample) before concatenation; raw level magnitudes differ by orders of
    magnitude across depths, which otherwise starves the deeper levels of
    gradient signal.
    """

    def __init__(self, config: SreConfig):
        super().__init__()
        self.config = config
        total = sum(config.pyramid_channels)
        self.conv1 = nn.Conv2d(total, config.hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(config.hidden, 1, 3, padding=1)
        seeded_init_(self, config.seed)

    @staticmethod
    def _standardize(level: torch.Tensor) -> torch.Tensor:
        mean = level.mean(dim=(2, 3), keepdim=True)
        std = level.std(dim=(2, 3), keepdim=True, unbiased=False)
        return (level - mean) / (std + 1e-5)

    def forward(self, pyramid) -> torch.Tensor:
        """Soft mask (N, H, W) in [0, 1] at the configured output size."""
        if len(pyramid) != len(self.config.pyramid_channels):
            raise PipelineError(
                f"pyramid depth {len(pyramid)} does not match configured "
                f"{len(self.config.pyramid_channels)}"
            )
        for level, c in zip(pyramid, self.config.pyramid_channels):
            if level.shape[1] != c:
                raise PipelineError(
                    f"pyramid channels {[p.shape[1] for p in pyramid]} do not match "
                    f"configured {self.config.pyramid_channels}"
                )
        size = tuple(self.config.out_size)
        upsampled = [
            F.interpolate(self._standardize(level), size=size, mode="bilinear", align_corners=False)
            for level in pyramid
        ]
        x = torch.cat(upsampled, dim=1)
        x = F.leaky_relu(self.conv1(x), 0.2)
        return torch.sigmoid(self.conv2(x)).squeeze(1)


def sre_for_model(model: ToyFasModel, seed: int = 0, hidden: int = 8) -> SpoofRegionEstimator:
    return SpoofRegionEstimator(
        SreConfig(
            pyramid_channels=tuple(model.config.channels),
            out_size=tuple(model.config.input_size),
            hidden=hidden,
            seed=seed,
        )
    )


def resample_mask(mask: np.ndarray, size) -> torch.Tensor:
    """Nearest-neighbor resample of a binary mask to the estimator grid."""
    t = torch.from_numpy(np.asarray(mask, dtype=np.float32))
    if tuple(t.shape[-2:]) == tuple(size):
        return t
    return F.interpolate(t.view(1, 1, *t.shape[-2:]), size=tuple(size), mode="nearest")[0, 0]


def mask_loss(soft_mask: torch.Tensor, target_mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between soft mask and (resampled) target."""
    if soft_mask.shape != target_mask.shape:
        raise PipelineError(
            f"mask shapes differ: {tuple(soft_mask.shape)} vs {tuple(target_mask.shape)}"
        )
    return (soft_mask - target_mask).abs().mean()


@dataclass
class Stage1Schedule:
    mask_epochs: int = 5
    total_epochs: int = 50
    lr: float = 1e-5
    sre_lr: float = 1e-3
    sre_weight_decay: float = 1e-2  # stops the estimator logits from saturating
    batch_size: int = 8
    live_fraction: float = 0.5
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        if self.mask_epochs > self.total_epochs:
            raise ConfigError("mask_epochs cannot exceed total_epochs")


class PreliminaryMaskCache:
    """Per-sample preliminary masks, computed once and reused across epochs."""

    def __init__(self, manifest, rec, threshold, image_cache):
        self.manifest = manifest
        self.rec = rec
        self.threshold = threshold
        self.image_cache = image_cache
        self._masks = {}

    def get(self, sample: ImageSample) -> np.ndarray:
        if sample.sample_id not in self._masks:
            pre = compute_preliminary_mask(
                self.manifest, sample, self.rec, self.threshold, cache=self.image_cache
            )
            self._masks[sample.sample_id] = pre.mask
        return self._masks[sample.sample_id]


def finetune_stage1(
    source_model: ToyFasModel,
    sre: SpoofRegionEstimator,
    target_train: DatasetManifest,
    rec,
    schedule: Stage1Schedule,
):
    """Fine-tune a copy of the source model on target data with the estimator.

    For the first ``mask_epochs`` epochs the objective is the base loss plus
    the mask loss against preliminary masks; afterwards only the base loss is
    minimized and the estimator rides along on the shared features. The source
    model is never mutated. Returns (target_model, sre, history).
    """
    model = clone_model(source_model)
    model.role_tag = "target_teacher"
    if sre is None:
        sre = sre_for_model(model, seed=schedule.seed)

    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 200]))
    image_cache = ImageCache()
    pre_masks = PreliminaryMaskCache(target_train, rec, schedule.threshold, image_cache)
    opt = torch.optim.Adam(
        [
            {"params": list(model.parameters()), "lr": schedule.lr},
            {
                "params": list(sre.parameters()),
                "lr": schedule.sre_lr,
                "weight_decay": schedule.sre_weight_decay,
            },
        ]
    )
    history = LossHistory()
    depth_size = model.config.depth_size
    mask_size = sre.config.out_size

    for epoch in range(schedule.total_epochs):
        with_mask = epoch < schedule.mask_epochs
        sums = {"loss_orig": 0.0, "loss_mask": 0.0}
        steps = 0
        for batch in epoch_batches(
            target_train, schedule.batch_size, schedule.live_fraction, rng, image_cache
        ):
            images = torch.from_numpy(batch.images)
            depth_t, live_t = batch_targets(batch, depth_size)
            pyramid = model.extract(images)
            loss = original_loss(model.sce(pyramid), depth_t, live_t)
            sums["loss_orig"] += loss.item()
            if with_mask:
                targets = torch.stack(
                    [resample_mask(pre_masks.get(s), mask_size) for s in batch.samples]
                )
                l_mask = mask_loss(sre(pyramid), targets)
                sums["loss_mask"] += l_mask.item()
                loss = loss + l_mask
            check_finite(loss, f"stage1 epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            steps += 1
        history.log(
            epoch,
            loss_orig=sums["loss_orig"] / steps,
            loss_mask=sums["loss_mask"] / steps if with_mask else 0.0,
            mask_supervised=float(with_mask),
        )
    return model, sre, history


def mask_iou(soft_mask: np.ndarray, gt_mask: np.ndarray, threshold: float = 0.5) -> float:
    """IoU between the binarized soft mask and a ground-truth binary mask."""
    pred = np.asarray(soft_mask) >= threshold
    gt = np.asarray(gt_mask) > 0
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)
