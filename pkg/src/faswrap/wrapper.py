"""Dual-teacher adversarial transfer.

Stage 2 trains an updated extractor against two frozen teachers (the source
model and the stage-1 target model) through per-teacher multi-scale
discriminator chains, while a frozen spoof region estimator ties the updated
model's estimated spoof regions to the source model's. Only the updated
extractor and the estimator survive into the exported inference artifact.

The adversarial losses use an inverted label convention: the discriminator
is trained to push teacher-fed probabilities toward 0 and student-fed ones
toward 1, and the student is trained to pull its own probabilities toward 0.
Teacher-fed terms contribute to the student loss value but carry no student
gradient.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ExportError, NumericalError, PipelineError
from .models import ToyFasModel, clone_model, original_loss, seeded_init_
from .samples import DatasetManifest, ImageCache
from .sre import SpoofRegionEstimator, mask_loss
from .training import (
    LossHistory,
    OptimizerSpec,
    batch_targets,
    build_optimizer,
    check_finite,
    epoch_batches,
)

PROB_EPS = 1e-7

DISC_MODES = ("chained", "shared", "single_concat")


@dataclass
class LossWeights:
    """Weights for the stage-2 objective: base, spoof-consistency, source
    adversarial, target adversarial."""

    lambda_orig: float = 1.0
    lambda_spoof: float = 1.0
    lambda_source: float = 0.1
    lambda_target: float = 0.1

    def __post_init__(self):
        vals = (self.lambda_orig, self.lambda_spoof, self.lambda_source, self.lambda_target)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ConfigError(f"loss weights must be finite and nonnegative, got {vals}")

    def as_tuple(self):
        return (self.lambda_orig, self.lambda_spoof, self.lambda_source, self.lambda_target)


@dataclass
class DiscriminatorConfig:
    pyramid_channels: tuple
    width: int = 8
    mode: str = "chained"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in DISC_MODES:
            raise ConfigError(f"disc mode must be one of {DISC_MODES}, got {self.mode!r}")
        if not self.pyramid_channels:
            raise ConfigError("discriminator needs at least one pyramid level")

    def to_dict(self):
        return {
            "pyramid_channels": list(self.pyramid_channels),
            "width": self.width,
            "mode": self.mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            pyramid_channels=tuple(d["pyramid_channels"]),
            width=d.get("width", 8),
            mode=d.get("mode", "chained"),
            seed=d.get("seed", 0),
        )


@dataclass
class DiscriminatorOutputs:
    activations: list  # per-level pre-pooling maps
    final_prob: torch.Tensor  # (N,) strictly inside (0, 1)


def _resize_to(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    if x.shape[-2] > size[0]:
        return F.adaptive_avg_pool2d(x, tuple(size))
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class MultiScaleDiscriminator(nn.Module):
    """Chain of per-level blocks; each level consumes the level's feature map
    concatenated with the previous level's carried activation map."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        chans = config.pyramid_channels
        w = config.width
        if config.mode == "chained":
            blocks = []
            for i, c in enumerate(chans):
                c_in = c + (w if i > 0 else 0)
                blocks.append(nn.Conv2d(c_in, w, 3, stride=2, padding=1))
            self.blocks = nn.ModuleList(blocks)
            self.fc = nn.Linear(w, 1)
        elif config.mode == "shared":
            self.projs = nn.ModuleList([nn.Conv2d(c, w, 1) for c in chans])
            self.shared = nn.Conv2d(w, w, 3, stride=2, padding=1)
            self.fc = nn.Linear(w, 1)
        else:  # single_concat
            self.fuse = nn.Conv2d(sum(chans), w, 3, stride=2, padding=1)
            self.fc = nn.Linear(w, 1)
        seeded_init_(self, config.seed)

    def forward(self, pyramid) -> DiscriminatorOutputs:
        if len(pyramid) != len(self.config.pyramid_channels):
            raise ConfigError(
                f"chain length {len(self.config.pyramid_channels)} does not match "
                f"pyramid depth {len(pyramid)}"
            )
        for level, c in zip(pyramid, self.config.pyramid_channels):
            if level.shape[1] != c:
                raise ConfigError(
                    f"level channels {[p.shape[1] for p in pyramid]} do not match "
                    f"configured {self.config.pyramid_channels}"
                )
        mode = self.config.mode
        activations = []
        if mode == "chained":
            carry = None
            for block, level in zip(self.blocks, pyramid):
                x = level
                if carry is not None:
                    x = torch.cat([x, _resize_to(carry, level.shape[-2:])], dim=1)
                carry = F.leaky_relu(block(x), 0.2)
                activations.append(carry)
            pooled = carry.mean(dim=(2, 3))
            logit = self.fc(pooled).squeeze(1)
        elif mode == "shared":
            logits = []
            for proj, level in zip(self.projs, pyramid):
                x = F.leaky_relu(self.shared(proj(level)), 0.2)
                activations.append(x)
                logits.append(self.fc(x.mean(dim=(2, 3))).squeeze(1))
            logit = torch.stack(logits).mean(dim=0)
        else:
            size = pyramid[-1].shape[-2:]
            x = torch.cat([_resize_to(level, size) for level in pyramid], dim=1)
            x = F.leaky_relu(self.fuse(x), 0.2)
            activations.append(x)
            logit = self.fc(x.mean(dim=(2, 3))).squeeze(1)
        prob = torch.sigmoid(logit).clamp(PROB_EPS, 1.0 - PROB_EPS)
        return DiscriminatorOutputs(activations=activations, final_prob=prob)


def disc_for_model(model: ToyFasModel, width: int = 8, mode: str = "chained", seed: int = 0):
    return MultiScaleDiscriminator(
        DiscriminatorConfig(
            pyramid_channels=tuple(model.config.channels), width=width, mode=mode, seed=seed
        )
    )


def _check_probs(p: torch.Tensor, name: str) -> None:
    if not torch.isfinite(p).all():
        raise NumericalError(f"{name} contains non-finite probabilities")
    if (p < PROB_EPS).any() or (p > 1.0 - PROB_EPS).any():
        raise NumericalError(f"{name} outside [{PROB_EPS}, {1.0 - PROB_EPS}]")


def adversarial_losses(d_teacher: torch.Tensor, d_student: torch.Tensor, side: str = "S"):
    """Paired generator/discriminator losses for one teacher side.

    generator_loss     = -mean log d_teacher - mean log(1 - d_student)
    discriminator_loss = -mean log(1 - d_teacher) - mean log d_student
    """
    _check_probs(d_teacher, f"d_teacher[{side}]")
    _check_probs(d_student, f"d_student[{side}]")
    generator_loss = -torch.log(d_teacher).mean() - torch.log(1.0 - d_student).mean()
    discriminator_loss = -torch.log(1.0 - d_teacher).mean() - torch.log(d_student).mean()
    return generator_loss, discriminator_loss


def spoof_consistency_loss(m_new: torch.Tensor, m_src: torch.Tensor) -> torch.Tensor:
    """Mean absolute divergence between spoof regions from the updated and
    source extractors. Gradients reach only the updated extractor: callers
    compute ``m_src`` without a graph."""
    if m_new.shape != m_src.shape:
        raise ConfigError(f"mask shapes differ: {tuple(m_new.shape)} vs {tuple(m_src.shape)}")
    return (m_new - m_src).abs().mean()


def total_loss(l_orig, l_spoof, l_source, l_target, weights: LossWeights):
    return (
        weights.lambda_orig * l_orig
        + weights.lambda_spoof * l_spoof
        + weights.lambda_source * l_source
        + weights.lambda_target * l_target
    )


@dataclass
class Stage2Options:
    lr: float = 1e-6
    disc_lr: float = None  # defaults to lr
    epochs: int = 20
    batch_size: int = 8
    live_fraction: float = 0.5
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.disc_lr is None:
            self.disc_lr = self.lr


def _freeze(module: nn.Module) -> None:
    for p in module.parameters():
        p.requires_grad_(False)


def _set_requires_grad(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def train_stage2(
    source_model: ToyFasModel,
    target_model: ToyFasModel,
    sre: SpoofRegionEstimator,
    student: ToyFasModel,
    disc_source: MultiScaleDiscriminator,
    disc_target: MultiScaleDiscriminator,
    target_train: DatasetManifest,
    weights: LossWeights,
    opt: Stage2Options,
):
    """Adversarial dual-teacher transfer into the student extractor.

    Per batch: first the two discriminators take one step on their own losses
    with the student detached, then the student takes one step on the weighted
    total objective with the discriminators held fixed. Teachers and the
    estimator are frozen throughout. Returns (student, history).
    """
    if weights.lambda_spoof > 0 and sre is None:
        raise ConfigError("spoof-consistency weight is positive but no estimator was given")

    _freeze(source_model)
    _freeze(target_model)
    if sre is not None:
        _freeze(sre)
    _set_requires_grad(student, True)  # students cloned from frozen teachers

    rng = np.random.default_rng(np.random.SeedSequence([opt.seed, 300]))
    cache = ImageCache()
    student_opt = build_optimizer(student.parameters(), OptimizerSpec(lr=opt.lr, kind=opt.optimizer))
    disc_opt = build_optimizer(
        list(disc_source.parameters()) + list(disc_target.parameters()),
        OptimizerSpec(lr=opt.disc_lr, kind=opt.optimizer),
    )
    history = LossHistory()
    depth_size = student.config.depth_size

    for epoch in range(opt.epochs):
        sums = {"loss_orig": 0.0, "loss_spoof": 0.0, "loss_s": 0.0, "loss_t": 0.0,
                "loss_ds": 0.0, "loss_dt": 0.0, "loss_total": 0.0}
        steps = 0
        for batch in epoch_batches(
            target_train, opt.batch_size, opt.live_fraction, rng, cache
        ):
            images = torch.from_numpy(batch.images)
            depth_t, live_t = batch_targets(batch, depth_size)
            with torch.no_grad():
                pyr_source = source_model.extract(images)
                pyr_target = target_model.extract(images)
                pyr_student_detached = student.extract(images)

            # discriminator step (student detached)
            d_s_teacher = disc_source(pyr_source).final_prob
            d_s_student = disc_source(pyr_student_detached).final_prob
            d_t_teacher = disc_target(pyr_target).final_prob
            d_t_student = disc_target(pyr_student_detached).final_prob
            _, loss_ds = adversarial_losses(d_s_teacher, d_s_student, side="S")
            _, loss_dt = adversarial_losses(d_t_teacher, d_t_student, side="T")
            disc_loss = loss_ds + loss_dt
            check_finite(disc_loss, f"stage2 disc epoch {epoch}")
            disc_opt.zero_grad()
            disc_loss.backward()
            disc_opt.step()

            # student step (discriminators held fixed)
            _set_requires_grad(disc_source, False)
            _set_requires_grad(disc_target, False)
            pyramid = student.extract(images)
            l_orig = original_loss(student.sce(pyramid), depth_t, live_t)
            if weights.lambda_spoof > 0:
                m_new = sre(pyramid)
                with torch.no_grad():
                    m_src = sre(pyr_source)
                l_spoof = spoof_consistency_loss(m_new, m_src)
            else:
                l_spoof = torch.zeros(())
            with torch.no_grad():
                d_s_teacher = disc_source(pyr_source).final_prob
                d_t_teacher = disc_target(pyr_target).final_prob
            d_s_new = disc_source(pyramid).final_prob
            d_t_new = disc_target(pyramid).final_prob
            l_s, _ = adversarial_losses(d_s_teacher, d_s_new, side="S")
            l_t, _ = adversarial_losses(d_t_teacher, d_t_new, side="T")
            loss = total_loss(l_orig, l_spoof, l_s, l_t, weights)
            check_finite(loss, f"stage2 student epoch {epoch}")
            student_opt.zero_grad()
            loss.backward()
            student_opt.step()
            _set_requires_grad(disc_source, True)
            _set_requires_grad(disc_target, True)

            for key, val in (
                ("loss_orig", l_orig), ("loss_spoof", l_spoof), ("loss_s", l_s),
                ("loss_t", l_t), ("loss_ds", loss_ds), ("loss_dt", loss_dt),
                ("loss_total", loss),
            ):
                sums[key] += float(val.detach())
            steps += 1
        history.log(epoch, **{k: v / steps for k, v in sums.items()})
    return student, history


@dataclass
class CrossDatasetOptions(Stage2Options):
    allow_any_teacher_count: bool = False


def train_cross_dataset(
    teachers: list,
    student: ToyFasModel,
    discs: list,
    mixed_train: DatasetManifest,
    weights: LossWeights,
    opt: CrossDatasetOptions,
):
    """Multi-teacher variant: one discriminator chain per source teacher, no
    spoof region estimator. The objective is the base loss plus the
    per-teacher generator losses, each weighted like the source adversarial
    term. Returns (student, history)."""
    if len(teachers) != 3 and not opt.allow_any_teacher_count:
        raise ConfigError(f"cross-dataset transfer expects exactly 3 teachers, got {len(teachers)}")
    if len(discs) != len(teachers):
        raise ConfigError("need one discriminator per teacher")

    for teacher in teachers:
        _freeze(teacher)
    _set_requires_grad(student, True)

    rng = np.random.default_rng(np.random.SeedSequence([opt.seed, 301]))
    cache = ImageCache()
    student_opt = build_optimizer(student.parameters(), OptimizerSpec(lr=opt.lr, kind=opt.optimizer))
    disc_opt = build_optimizer(
        [p for d in discs for p in d.parameters()], OptimizerSpec(lr=opt.disc_lr, kind=opt.optimizer)
    )
    history = LossHistory()
    depth_size = student.config.depth_size

    for epoch in range(opt.epochs):
        sums = {"loss_orig": 0.0, "loss_adv": 0.0, "loss_disc": 0.0}
        steps = 0
        for batch in epoch_batches(mixed_train, opt.batch_size, opt.live_fraction, rng, cache):
            images = torch.from_numpy(batch.images)
            depth_t, live_t = batch_targets(batch, depth_size)
            with torch.no_grad():
                teacher_pyrs = [t.extract(images) for t in teachers]
                pyr_student_detached = student.extract(images)

            disc_loss = torch.zeros(())
            for disc, pyr_teacher in zip(discs, teacher_pyrs):
                d_teacher = disc(pyr_teacher).final_prob
                d_student = disc(pyr_student_detached).final_prob
                _, l_d = adversarial_losses(d_teacher, d_student)
                disc_loss = disc_loss + l_d
            check_finite(disc_loss, f"cross-dataset disc epoch {epoch}")
            disc_opt.zero_grad()
            disc_loss.backward()
            disc_opt.step()

            for disc in discs:
                _set_requires_grad(disc, False)
            pyramid = student.extract(images)
            l_orig = original_loss(student.sce(pyramid), depth_t, live_t)
            adv = torch.zeros(())
            for disc, pyr_teacher in zip(discs, teacher_pyrs):
                with torch.no_grad():
                    d_teacher = disc(pyr_teacher).final_prob
                d_new = disc(pyramid).final_prob
                l_g, _ = adversarial_losses(d_teacher, d_new)
                adv = adv + l_g
            loss = weights.lambda_orig * l_orig + weights.lambda_source * adv
            check_finite(loss, f"cross-dataset student epoch {epoch}")
            student_opt.zero_grad()
            loss.backward()
            student_opt.step()
            for disc in discs:
                _set_requires_grad(disc, True)

            sums["loss_orig"] += float(l_orig.detach())
            sums["loss_adv"] += float(adv.detach())
            sums["loss_disc"] += float(disc_loss.detach())
            steps += 1
        history.log(epoch, **{k: v / steps for k, v in sums.items()})
    return student, history


@dataclass
class InferenceModel:
    """Deployable artifact: the updated extractor plus the estimator only."""

    student: ToyFasModel
    sre: SpoofRegionEstimator

    def predict(self, image: np.ndarray):
        """One image (3, H, W) in [0, 1] -> (spoof score in [0, 1], soft mask)."""
        scores, masks = self.predict_batch(image[None])
        return float(scores[0]), masks[0]

    def predict_batch(self, images: np.ndarray):
        x = torch.from_numpy(np.asarray(images, dtype=np.float32))
        with torch.no_grad():
            pyramid = self.student.extract(x)
            outputs = self.student.sce(pyramid)
            scores = 1.0 - torch.sigmoid(outputs.live_logit)
            masks = self.sre(pyramid)
        return scores.numpy(), masks.numpy()

    def spoof_score(self, images: torch.Tensor) -> torch.Tensor:
        return self.student.spoof_score(images)

    def parameter_names(self):
        names = [f"student/{k}" for k in self.student.state_dict()]
        names += [f"sre/{k}" for k in self.sre.state_dict()]
        return names


def export_inference(student: ToyFasModel, sre: SpoofRegionEstimator) -> InferenceModel:
    """Detach the deployable pieces from the training state."""
    if student is None or sre is None:
        raise ExportError("export requires both the updated extractor and the estimator")
    exported = InferenceModel(student=clone_model(student), sre=copy.deepcopy(sre))
    exported.student.role_tag = "student"
    _freeze(exported.student)
    _freeze(exported.sre)
    return exported


def save_inference(model: InferenceModel, path) -> Path:
    """Single-file artifact with student/* and sre/* arrays plus configs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"student/{k}": v.numpy() for k, v in model.student.state_dict().items()}
    arrays.update({f"sre/{k}": v.numpy() for k, v in model.sre.state_dict().items()})
    config = json.dumps(
        {
            "model": model.student.config.to_dict(),
            "sre": model.sre.config.to_dict(),
            "format": "fasw-v1",
        },
        sort_keys=True,
    )
    arrays["__config__"] = np.frombuffer(config.encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:  # keep the .fasw extension as given
        np.savez(fh, **arrays)
    return path


def load_inference(path) -> InferenceModel:
    from .models import FasModelConfig
    from .sre import SreConfig

    with np.load(path) as data:
        config = json.loads(bytes(data["__config__"]).decode("utf-8"))
        student = ToyFasModel(FasModelConfig.from_dict(config["model"]))
        sre = SpoofRegionEstimator(SreConfig.from_dict(config["sre"]))
        student.load_state_dict(
            {k[len("student/"):]: torch.from_numpy(data[k]) for k in data.files if k.startswith("student/")}
        )
        sre.load_state_dict(
            {k[len("sre/"):]: torch.from_numpy(data[k]) for k in data.files if k.startswith("sre/")}
        )
    model = InferenceModel(student=student, sre=sre)
    _freeze(model.student)
    _freeze(model.sre)
    return model
