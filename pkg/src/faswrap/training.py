"""Shared training-loop machinery: batch iteration, optimizers, loss logging,
source pre-training, and manifest scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import samples as samples_io
from .errors import ConfigError, NumericalError
from .models import ToyFasModel, original_loss, pseudo_depth_target
from .samples import DatasetManifest, ImageCache, sample_batch


@dataclass
class OptimizerSpec:
    lr: float = 1e-3
    kind: str = "adam"  # adam | sgd
    lr_decay: float = 1.0  # multiplicative, applied per epoch


def build_optimizer(params, spec: OptimizerSpec):
    params = [p for p in params if p.requires_grad]
    if spec.kind == "adam":
        return torch.optim.Adam(params, lr=spec.lr)
    if spec.kind == "sgd":
        return torch.optim.SGD(params, lr=spec.lr)
    raise ConfigError(f"unknown optimizer {spec.kind!r}")


def decay_lr(optimizer, factor: float) -> None:
    if factor == 1.0:
        return
    for group in optimizer.param_groups:
        group["lr"] *= factor


@dataclass
class LossHistory:
    rows: list = field(default_factory=list)

    def log(self, epoch: int, **values):
        self.rows.append({"epoch": epoch, **{k: float(v) for k, v in values.items()}})

    def column(self, key):
        return [r[key] for r in self.rows if key in r]

    def save_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        keys = sorted({k for r in self.rows for k in r}, key=lambda k: (k != "epoch", k))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.rows)


def epoch_batches(
    manifest: DatasetManifest,
    batch_size: int,
    live_fraction: float,
    rng: np.random.Generator,
    cache: ImageCache,
):
    """Yield one epoch of balanced batches (len(manifest) // batch_size of them)."""
    n_batches = max(1, len(manifest) // batch_size)
    for _ in range(n_batches):
        yield sample_batch(manifest, batch_size, live_fraction, rng, cache=cache)


def batch_targets(batch, depth_size, dtype=torch.float32):
    live = torch.from_numpy(batch.live).to(dtype)
    depth = pseudo_depth_target(live, depth_size)
    return depth, live


def check_finite(loss: torch.Tensor, context: str) -> None:
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss in {context}: {loss.item()!r}")


@dataclass
class PretrainSchedule:
    epochs: int = 50
    lr: float = 3e-4
    lr_decay: float = 0.99
    batch_size: int = 8
    live_fraction: float = 0.5
    seed: int = 0


def pretrain_source(model: ToyFasModel, train: DatasetManifest, schedule: PretrainSchedule):
    """Train a model from its current parameters with the base objective."""
    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 100]))
    cache = ImageCache()
    opt = build_optimizer(model.parameters(), OptimizerSpec(lr=schedule.lr))
    history = LossHistory()
    depth_size = model.config.depth_size
    for epoch in range(schedule.epochs):
        total, steps = 0.0, 0
        for batch in epoch_batches(train, schedule.batch_size, schedule.live_fraction, rng, cache):
            images = torch.from_numpy(batch.images)
            depth_t, live_t = batch_targets(batch, depth_size)
            loss = original_loss(model(images), depth_t, live_t)
            check_finite(loss, f"pretrain epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        decay_lr(opt, schedule.lr_decay)
        history.log(epoch, loss_orig=total / steps)
    return model, history


def score_manifest(model, manifest: DatasetManifest, batch_size: int = 64, cache=None):
    """Spoof scores for every sample in manifest order; returns (scores, labels).

    Labels are 1 for spoof, 0 for live, matching the positive class of the
    metrics module.
    """
    cache = cache if cache is not None else ImageCache()
    scores = []
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            chunk = manifest.samples[start : start + batch_size]
            images = np.stack([cache.get(manifest, s) for s in chunk])
            scores.append(model.spoof_score(torch.from_numpy(images)).numpy())
    scores = np.concatenate(scores) if scores else np.zeros(0, dtype=np.float32)
    labels = np.array([0 if s.is_live else 1 for s in manifest.samples], dtype=np.int64)
    return scores.astype(np.float64), labels


def train_binary_head(model: ToyFasModel, head, train: DatasetManifest, schedule: PretrainSchedule):
    """Train an attached two-class head on frozen backbone features."""
    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 101]))
    cache = ImageCache()
    opt = build_optimizer(head.parameters(), OptimizerSpec(lr=schedule.lr))
    history = LossHistory()
    ce = torch.nn.CrossEntropyLoss()
    for epoch in range(schedule.epochs):
        total, steps = 0.0, 0
        for batch in epoch_batches(train, schedule.batch_size, schedule.live_fraction, rng, cache):
            with torch.no_grad():
                pyramid = model.extract(torch.from_numpy(batch.images))
            logits = head.logits(pyramid)
            target = torch.from_numpy(batch.live).long()  # class 1 = live
            loss = ce(logits, target)
            check_finite(loss, f"binary head epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        decay_lr(opt, schedule.lr_decay)
        history.log(epoch, loss_head=total / steps)
    return head, history
