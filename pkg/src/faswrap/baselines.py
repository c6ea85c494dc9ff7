"""Comparator methods: naive fine-tuning, joint training (the upper bound
with source data access), and logit distillation on an appended binary head.

All baselines share the package's evaluation pipeline. ``naive_finetune`` and
``lwf_distill`` touch target data only; ``joint_train`` deliberately breaks
the source-free constraint and exists as a benchmark ceiling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError
from .models import BinaryHead, ToyFasModel, clone_model, original_loss
from .samples import DatasetManifest, ImageCache
from .training import (
    LossHistory,
    OptimizerSpec,
    batch_targets,
    build_optimizer,
    check_finite,
    epoch_batches,
)


@dataclass
class BaselineSchedule:
    epochs: int = 20
    lr: float = 1e-4
    batch_size: int = 8
    live_fraction: float = 0.5
    seed: int = 0


def naive_finetune(source_model: ToyFasModel, target_train: DatasetManifest, schedule: BaselineSchedule):
    """Fine-tune a copy of the source model on target data with the base
    objective only. Returns (model, history)."""
    model = clone_model(source_model)
    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 500]))
    cache = ImageCache()
    opt = build_optimizer(model.parameters(), OptimizerSpec(lr=schedule.lr))
    history = LossHistory()
    depth_size = model.config.depth_size
    for epoch in range(schedule.epochs):
        total, steps = 0.0, 0
        for batch in epoch_batches(target_train, schedule.batch_size, schedule.live_fraction, rng, cache):
            images = torch.from_numpy(batch.images)
            depth_t, live_t = batch_targets(batch, depth_size)
            loss = original_loss(model(images), depth_t, live_t)
            check_finite(loss, f"naive finetune epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        history.log(epoch, loss_orig=total / steps)
    return model, history


def joint_train(
    source_model: ToyFasModel,
    source_train: DatasetManifest,
    target_train: DatasetManifest,
    schedule: BaselineSchedule,
):
    """Upper bound: fine-tune on the union of source and target data."""
    if source_train is None or len(source_train) == 0:
        raise ConfigError("joint training requires source training data")
    merged = replace(source_train, samples=list(source_train.samples) + list(target_train.samples))
    # image paths resolve against one root, so both manifests must share it
    if len(target_train) and str(source_train.root) != str(target_train.root):
        merged = replace(
            merged,
            samples=[replace(s, path=str(source_train.resolve(s.path))) for s in source_train.samples]
            + [replace(s, path=str(target_train.resolve(s.path))) for s in target_train.samples],
        )
    return naive_finetune(source_model, merged, schedule)


def lwf_distill(
    source_model: ToyFasModel,
    head: BinaryHead,
    target_train: DatasetManifest,
    schedule: BaselineSchedule,
    temperature: float = 2.0,
    distill_weight: float = 1.0,
):
    """Fine-tune backbone plus head on target data while distilling the
    frozen source model's softened class probabilities.

    Returns (model, head, history); the passed-in source model and head stay
    frozen and are used as the teacher."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    student = clone_model(source_model)
    student_head = BinaryHead(head.fc.in_features, seed=schedule.seed)
    student_head.load_state_dict(head.state_dict())

    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 501]))
    cache = ImageCache()
    opt = build_optimizer(
        list(student.parameters()) + list(student_head.parameters()),
        OptimizerSpec(lr=schedule.lr),
    )
    history = LossHistory()
    for epoch in range(schedule.epochs):
        sums = {"loss_ce": 0.0, "loss_kd": 0.0}
        steps = 0
        for batch in epoch_batches(target_train, schedule.batch_size, schedule.live_fraction, rng, cache):
            images = torch.from_numpy(batch.images)
            target = torch.from_numpy(batch.live).long()  # class 1 = live
            with torch.no_grad():
                teacher_logits = head.logits(source_model.extract(images))
            student_logits = student_head.logits(student.extract(images))
            ce = F.cross_entropy(student_logits, target)
            kd = distillation_term(teacher_logits, student_logits, temperature)
            loss = ce + distill_weight * kd
            check_finite(loss, f"lwf epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss_ce"] += ce.item()
            sums["loss_kd"] += kd.item()
            steps += 1
        history.log(epoch, **{k: v / steps for k, v in sums.items()})
    return student, student_head, history


def distillation_term(teacher_logits: torch.Tensor, student_logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Temperature-scaled KL(teacher || student), times T^2."""
    t = temperature
    p_teacher = torch.softmax(teacher_logits / t, dim=1)
    log_p_student = torch.log_softmax(student_logits / t, dim=1)
    kl = (p_teacher * (torch.log(p_teacher.clamp_min(1e-12)) - log_p_student)).sum(dim=1).mean()
    return t * t * kl


# small registry so external comparator methods can plug into the runner
_METHODS = {}


def register_method(name: str, fn) -> None:
    _METHODS[name] = fn


def get_method(name: str):
    if name not in _METHODS:
        raise ConfigError(f"unknown baseline method {name!r}, have {sorted(_METHODS)}")
    return _METHODS[name]


register_method("naive_ft", naive_finetune)
register_method("joint", joint_train)
register_method("lwf", lwf_distill)
