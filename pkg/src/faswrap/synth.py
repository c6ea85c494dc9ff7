"""Deterministic synthetic paired live/spoof dataset generation.

Guarantees:

- Generation is a pure function of (spec, seed): two calls with the same spec
  produce byte-identical PNGs and manifests.
- Every spoof image is derived from a stored base live image. The pixelwise
  difference between the written spoof PNG and its base PNG is nonzero exactly
  on the ground-truth mask support, with a channel-sum difference of at least
  ``MIN_SPOOF_DELTA`` inside the mask.
- Live images are unperturbed base faces.
- Subjects are assigned whole to either the train or the test split.

Layout under ``out_dir/<subset_id>/``:

    train.csv, test.csv     manifests (paths relative to the subset dir)
    images/<sample_id>.png  the sample image
    masks/<sample_id>.png   ground-truth spoof mask (spoof samples only)
    bases/<sample_id>.png   base live counterpart (spoof samples only)

Base faces are procedurally generated smooth blob images, not real faces.
Localized patch perturbations stand in for mask/makeup/partial attacks;
full-frame tint plus a moire-like sinusoid stands in for print/replay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import samples as samples_io
from .errors import ConfigError, ProtocolViolationError
from .samples import DatasetManifest, ImageSample, save_manifest

# Minimum channel-sum |spoof - base| enforced inside the mask, pre-quantization.
MIN_SPOOF_DELTA = 0.12
_FIXUP_PUSH = 0.2

DEFAULT_ETHNICITY_MIX = {"eth_a": 0.5, "eth_b": 0.3, "eth_c": 0.2}

FULL_FRAME_GENERATORS = ("moire",)
PATCH_GENERATORS = ("checker", "stripes", "noise", "flat")


@dataclass
class SyntheticDomainSpec:
    """Recipe for one synthetic domain (one benchmark subset)."""

    n_live: int
    n_spoof: int
    spoof_types: list = field(default_factory=list)  # (macro, micro, generator_id)
    tint: tuple = (0.0, 0.0, 0.0)  # RGB offset, ethnicity proxy
    blur_sigma: float = 0.0  # age proxy
    brightness: float = 0.0  # illumination proxy
    sensor_pattern: float = 0.0  # benign interference amplitude on every image
    image_size: tuple = (64, 64)
    seed: int = 0
    ethnicity_mix: dict = None
    age_range: tuple = (18, 70)
    n_subjects: int = 0  # 0 = derive from sample count
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.n_live < 0 or self.n_spoof < 0:
            raise ConfigError("sample counts must be nonnegative")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ConfigError(f"image size {self.image_size} too small (min 8x8)")
        if self.n_spoof > 0 and not self.spoof_types:
            raise ConfigError("n_spoof > 0 requires at least one spoof type")
        for macro, micro, gen_id in self.spoof_types:
            if macro not in samples_io.SPOOF_MACROS or macro == "none":
                raise ConfigError(f"unknown spoof macro {macro!r}")
            if gen_id not in FULL_FRAME_GENERATORS + PATCH_GENERATORS:
                raise ConfigError(f"unknown patch generator {gen_id!r}")
        if self.ethnicity_mix is None:
            self.ethnicity_mix = dict(DEFAULT_ETHNICITY_MIX)

    def micro_types(self):
        return {micro for _, micro, _ in self.spoof_types}


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return image
    radius = max(1, int(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = np.empty_like(image)
    for c in range(image.shape[0]):
        tmp = np.apply_along_axis(lambda r: np.convolve(np.pad(r, radius, mode="edge"), kernel, mode="valid"), 1, image[c])
        out[c] = np.apply_along_axis(lambda r: np.convolve(np.pad(r, radius, mode="edge"), kernel, mode="valid"), 0, tmp)
    return out


def _render_face(subject: dict, spec: SyntheticDomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Procedural smooth blob face: background, skin ellipse, eyes, mouth."""
    h, w = spec.image_size
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")

    jitter = rng.uniform(-0.02, 0.02, size=6)
    cx, cy = subject["center"][0] + jitter[0], subject["center"][1] + jitter[1]
    rx, ry = subject["radii"]

    bg = subject["bg_top"][:, None, None] * (1 - (yy + 1) / 2) + subject["bg_bot"][:, None, None] * ((yy + 1) / 2)

    d = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    face_a = 1.0 / (1.0 + np.exp((d - 1.0) / 0.08))

    skin = subject["skin"][:, None, None] * np.ones((3, h, w))
    # gentle per-image illumination gradient across the face
    lx, ly = rng.uniform(-1, 1, size=2)
    shade = 1.0 + 0.15 * (lx * xx + ly * yy)
    skin = skin * shade[None]

    eye_y = cy - 0.28 + jitter[2]
    for side, jx in ((-1, jitter[3]), (1, jitter[4])):
        ex = cx + side * 0.3 + jx
        spot = np.exp(-(((xx - ex) / 0.09) ** 2 + ((yy - eye_y) / 0.07) ** 2))
        skin = skin * (1 - 0.7 * spot[None])
    mouth = np.exp(-(((xx - cx) / 0.22) ** 2 + ((yy - (cy + 0.42 + jitter[5])) / 0.06) ** 2))
    skin = skin * (1 - 0.45 * mouth[None])

    img = bg * (1 - face_a[None]) + skin * face_a[None]
    return np.clip(img, 0.0, 1.0)


def _sinusoid(shape, amplitude, rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    fx, fy = rng.uniform(0.25, 0.8, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    return amplitude * np.sin(fx * xx + fy * yy + phase)


def _apply_appearance(image: np.ndarray, spec: SyntheticDomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Domain-level capture conditions; a benign sensor interference pattern
    appears on every image of the domain, live and spoof alike."""
    out = _gaussian_blur(image, spec.blur_sigma)
    if spec.sensor_pattern > 0:
        out = out + _sinusoid(image.shape[1:], spec.sensor_pattern, rng)[None]
    out = out + np.asarray(spec.tint, dtype=np.float64)[:, None, None] + spec.brightness
    return np.clip(out, 0.0, 1.0)


def _patch_footprint(shape, rng: np.random.Generator) -> np.ndarray:
    """Random rectangle or ellipse covering roughly 15-40% of the frame,
    matching the substantial facial coverage of mask and makeup attacks."""
    h, w = shape
    mask = np.zeros((h, w), dtype=np.uint8)
    ph = int(rng.uniform(0.45, 0.65) * h)
    pw = int(rng.uniform(0.45, 0.65) * w)
    y0 = rng.integers(h // 8, h - ph - h // 8 + 1)
    x0 = rng.integers(w // 8, w - pw - w // 8 + 1)
    if rng.random() < 0.5:
        mask[y0 : y0 + ph, x0 : x0 + pw] = 1
    else:
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        cy, cx = y0 + ph / 2, x0 + pw / 2
        mask[((yy - cy) / (ph / 2)) ** 2 + ((xx - cx) / (pw / 2)) ** 2 <= 1.0] = 1
    return mask


def _patch_texture(gen_id: str, shape, rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    color = rng.uniform(0.15, 0.85, size=3)[:, None, None]
    if gen_id == "checker":
        cell = int(rng.integers(3, 7))
        pattern = ((yy // cell + xx // cell) % 2).astype(np.float64)
        return np.clip(color + 0.35 * (pattern[None] - 0.5), 0, 1)
    if gen_id == "stripes":
        freq = rng.uniform(0.2, 0.5)
        phase = rng.uniform(0, 2 * np.pi)
        pattern = 0.5 + 0.5 * np.sin(freq * (xx + yy) + phase)
        return np.clip(color + 0.4 * (pattern[None] - 0.5), 0, 1)
    if gen_id == "noise":
        noise = rng.random((3, h, w))
        return np.clip(color + 0.5 * (_gaussian_blur(noise, 1.5) - 0.5), 0, 1)
    if gen_id == "flat":
        return np.clip(color * np.ones((3, h, w)), 0, 1)
    raise ConfigError(f"unknown patch generator {gen_id!r}")


def _apply_spoof(base: np.ndarray, gen_id: str, rng: np.random.Generator):
    """Perturb a base image; returns (spoof image, binary footprint mask)."""
    _, h, w = base.shape
    if gen_id in FULL_FRAME_GENERATORS:
        mask = np.ones((h, w), dtype=np.uint8)
        moire = _sinusoid((h, w), rng.uniform(0.08, 0.14), rng)
        shift = rng.uniform(-0.12, 0.12, size=3)
        shift += np.sign(shift + 1e-9) * 0.04  # keep the tint away from zero
        spoof = base + moire[None] + shift[:, None, None]
    else:
        mask = _patch_footprint((h, w), rng)
        texture = _patch_texture(gen_id, (h, w), rng)
        alpha = rng.uniform(0.6, 0.85)
        spoof = np.where(mask[None] > 0, (1 - alpha) * base + alpha * texture, base)
    spoof = np.clip(spoof, 0.0, 1.0)

    # enforce a detectable difference on every masked pixel, clip-safe
    delta = np.abs(spoof - base).sum(axis=0)
    weak = (mask > 0) & (delta < MIN_SPOOF_DELTA)
    if weak.any():
        push = np.where(base[0] < 0.5, _FIXUP_PUSH, -_FIXUP_PUSH)
        ch0 = spoof[0].copy()
        ch0[weak] = np.clip(base[0][weak] + push[weak], 0.0, 1.0)
        spoof[0] = ch0
    return spoof, mask


def _subject_params(spec: SyntheticDomainSpec, subject_idx: int) -> dict:
    rng = _rng(spec.seed, 1, subject_idx)
    names = sorted(spec.ethnicity_mix)
    weights = np.array([spec.ethnicity_mix[n] for n in names], dtype=np.float64)
    weights /= weights.sum()
    return {
        "skin": rng.uniform(0.35, 0.85, size=3),
        "center": rng.uniform(-0.08, 0.08, size=2),
        "radii": (rng.uniform(0.5, 0.68), rng.uniform(0.7, 0.88)),
        "bg_top": rng.uniform(0.05, 0.45, size=3),
        "bg_bot": rng.uniform(0.05, 0.45, size=3),
        "ethnicity": names[rng.choice(len(names), p=weights)],
        "age": int(rng.integers(spec.age_range[0], spec.age_range[1] + 1)),
    }


def base_path_for(sample: ImageSample) -> str:
    """Relative path of the stored base live counterpart of a spoof sample."""
    return f"bases/{sample.sample_id}.png"


def generate_domain(spec: SyntheticDomainSpec, out_dir, subset_id: str):
    """Generate one domain; returns (train_manifest, test_manifest)."""
    out_dir = Path(out_dir)
    for sub in ("images", "masks", "bases"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    total = spec.n_live + spec.n_spoof
    n_subjects = spec.n_subjects or max(2, int(round(total / 4)) or 1)
    subjects = [_subject_params(spec, i) for i in range(n_subjects)]

    split_rng = _rng(spec.seed, 0)
    order = split_rng.permutation(n_subjects)
    n_test = max(1, int(round(n_subjects * spec.test_fraction))) if n_subjects > 1 else 0
    test_subjects = set(order[:n_test].tolist())

    rows = []
    for i in range(total):
        is_live = i < spec.n_live
        subj_idx = i % n_subjects
        rng = _rng(spec.seed, 2, i)
        sample_id = f"{subset_id}{subj_idx:04d}_{i:05d}"

        base = _apply_appearance(_render_face(subjects[subj_idx], spec, rng), spec, rng)
        if is_live:
            samples_io.write_image(out_dir / "images" / f"{sample_id}.png", base)
            sample = ImageSample(
                sample_id=sample_id,
                path=f"images/{sample_id}.png",
                label="live",
                spoof_macro="none",
                spoof_micro="",
                ethnicity=subjects[subj_idx]["ethnicity"],
                age=subjects[subj_idx]["age"],
                domain_id=subset_id,
            )
        else:
            macro, micro, gen_id = spec.spoof_types[(i - spec.n_live) % len(spec.spoof_types)]
            spoof, mask = _apply_spoof(base, gen_id, rng)
            samples_io.write_image(out_dir / "bases" / f"{sample_id}.png", base)
            samples_io.write_image(out_dir / "images" / f"{sample_id}.png", spoof)
            samples_io.write_mask(out_dir / "masks" / f"{sample_id}.png", mask)
            sample = ImageSample(
                sample_id=sample_id,
                path=f"images/{sample_id}.png",
                label="spoof",
                spoof_macro=macro,
                spoof_micro=micro,
                ethnicity=subjects[subj_idx]["ethnicity"],
                age=subjects[subj_idx]["age"],
                domain_id=subset_id,
                gt_mask_path=f"masks/{sample_id}.png",
            )
        rows.append((subj_idx, sample))

    train = [s for subj, s in rows if subj not in test_subjects]
    test = [s for subj, s in rows if subj in test_subjects]
    train_manifest = DatasetManifest(train, split="train", subset_id=subset_id, root=out_dir)
    test_manifest = DatasetManifest(test, split="test", subset_id=subset_id, root=out_dir)
    save_manifest(train_manifest, out_dir / "train.csv")
    save_manifest(test_manifest, out_dir / "test.csv")
    return train_manifest, test_manifest


def generate_synthetic_benchmark(spec_per_subset: dict, out_dir):
    """Generate a multi-subset benchmark.

    Subset A (the source domain) must be present, and subset B's spoof types
    must be disjoint from A's.
    """
    if "A" not in spec_per_subset:
        raise ProtocolViolationError("benchmark requires a source subset 'A'")
    if "B" in spec_per_subset:
        overlap = spec_per_subset["A"].micro_types() & spec_per_subset["B"].micro_types()
        if overlap:
            raise ProtocolViolationError(
                f"subset B spoof types must be disjoint from A, shared: {sorted(overlap)}"
            )
    out_dir = Path(out_dir)
    result = {}
    for subset_id in sorted(spec_per_subset):
        result[subset_id] = generate_domain(
            spec_per_subset[subset_id], out_dir / subset_id, subset_id
        )
    return result
