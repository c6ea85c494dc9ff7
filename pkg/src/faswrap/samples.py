"""Dataset samples, manifests, and batch sampling.

A manifest is a flat UTF-8 CSV with the fixed header

    sample_id,path,label,spoof_macro,spoof_micro,ethnicity,age,illum_cluster,domain_id,gt_mask_path

Images and masks are lossless 8-bit PNG. Image paths are stored relative to
the manifest file so a dataset directory can be moved as a unit. The subject
id is the portion of ``sample_id`` before the first underscore; train/test
splits of a protocol must be subject-disjoint.

All image and mask file reads funnel through :func:`read_image` and
:func:`read_mask` so that tests can observe exactly which files a training
run touches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import DataError, SchemaError

MANIFEST_COLUMNS = [
    "sample_id",
    "path",
    "label",
    "spoof_macro",
    "spoof_micro",
    "ethnicity",
    "age",
    "illum_cluster",
    "domain_id",
    "gt_mask_path",
]

LABELS = ("live", "spoof")
SPOOF_MACROS = ("none", "print", "replay", "mask3d", "makeup", "partial")


def read_image(path) -> np.ndarray:
    """Load an RGB PNG as a float32 (3, H, W) array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, image: np.ndarray) -> None:
    """Write a float (3, H, W) array in [0, 1] as an 8-bit RGB PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Load a binary mask PNG as a uint8 (H, W) array with values in {0, 1}."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return (arr >= 128).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG")


@dataclass
class ImageSample:
    """One image with its label and domain annotations."""

    sample_id: str
    path: str
    label: str
    spoof_macro: str = "none"
    spoof_micro: str = ""
    ethnicity: str = ""
    age: int = 0
    illum_cluster: Optional[int] = None
    domain_id: str = ""
    gt_mask_path: str = ""

    @property
    def subject_id(self) -> str:
        return self.sample_id.split("_", 1)[0]

    @property
    def is_live(self) -> bool:
        return self.label == "live"


@dataclass
class DatasetManifest:
    """An ordered list of samples plus its split/subset identity."""

    samples: list
    split: str = "train"
    subset_id: str = ""
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def resolve(self, rel_path: str) -> Path:
        p = Path(rel_path)
        return p if p.is_absolute() else self.root / p

    def live_samples(self):
        return [s for s in self.samples if s.is_live]

    def spoof_samples(self):
        return [s for s in self.samples if not s.is_live]

    def subjects(self):
        return sorted({s.subject_id for s in self.samples})

    def filtered(self, predicate) -> "DatasetManifest":
        return replace(self, samples=[s for s in self.samples if predicate(s)])


def validate_manifest(manifest: DatasetManifest) -> None:
    seen = set()
    for i, s in enumerate(manifest.samples):
        if s.sample_id in seen:
            raise SchemaError(f"row {i}: duplicate sample_id {s.sample_id!r}")
        seen.add(s.sample_id)
        if s.label not in LABELS:
            raise SchemaError(f"row {i}: unknown label {s.label!r}")
        if s.spoof_macro not in SPOOF_MACROS:
            raise SchemaError(f"row {i}: unknown spoof_macro {s.spoof_macro!r}")
        if s.label == "live" and s.spoof_macro != "none":
            raise SchemaError(
                f"row {i}: live sample {s.sample_id!r} has spoof_macro {s.spoof_macro!r}"
            )


def load_manifest(path, split: str = "train", subset_id: str = "") -> DatasetManifest:
    """Load a manifest CSV, preserving row order and checking the schema."""
    path = Path(path)
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != MANIFEST_COLUMNS:
            missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or [])
            raise SchemaError(f"bad manifest header, missing columns: {sorted(missing)}")
        for i, row in enumerate(reader):
            if any(row[c] is None for c in MANIFEST_COLUMNS):
                raise SchemaError(f"row {i}: wrong number of fields")
            illum = row["illum_cluster"]
            samples.append(
                ImageSample(
                    sample_id=row["sample_id"],
                    path=row["path"],
                    label=row["label"],
                    spoof_macro=row["spoof_macro"],
                    spoof_micro=row["spoof_micro"],
                    ethnicity=row["ethnicity"],
                    age=int(row["age"]) if row["age"] else 0,
                    illum_cluster=int(illum) if illum != "" else None,
                    domain_id=row["domain_id"],
                    gt_mask_path=row["gt_mask_path"],
                )
            )
    manifest = DatasetManifest(samples=samples, split=split, subset_id=subset_id, root=path.parent)
    validate_manifest(manifest)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for s in manifest.samples:
            writer.writerow(
                [
                    s.sample_id,
                    s.path,
                    s.label,
                    s.spoof_macro,
                    s.spoof_micro,
                    s.ethnicity,
                    s.age,
                    "" if s.illum_cluster is None else s.illum_cluster,
                    s.domain_id,
                    s.gt_mask_path,
                ]
            )


@dataclass
class Batch:
    """A sampled mini-batch: stacked images plus per-sample annotations."""

    samples: list
    images: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    live: np.ndarray  # (N,) float32, 1.0 for live, 0.0 for spoof

    def __len__(self):
        return len(self.samples)


class ImageCache:
    """Per-manifest image cache so each file is read at most once."""

    def __init__(self):
        self._images = {}

    def get(self, manifest: DatasetManifest, sample: ImageSample) -> np.ndarray:
        key = str(manifest.resolve(sample.path))
        if key not in self._images:
            self._images[key] = read_image(key)
        return self._images[key]


def sample_batch(
    manifest: DatasetManifest,
    batch_size: int,
    live_fraction: float,
    rng: np.random.Generator,
    cache: Optional[ImageCache] = None,
) -> Batch:
    """Draw a class-balanced batch without replacement.

    The batch contains exactly ``round(batch_size * live_fraction)`` live
    samples; the remainder are spoof. Sampling is a pure function of the
    passed generator state.
    """
    n_live = int(round(batch_size * live_fraction))
    n_spoof = batch_size - n_live
    live_pool = manifest.live_samples()
    spoof_pool = manifest.spoof_samples()
    if len(live_pool) < n_live:
        raise DataError(f"need {n_live} live samples, manifest has {len(live_pool)}")
    if len(spoof_pool) < n_spoof:
        raise DataError(f"need {n_spoof} spoof samples, manifest has {len(spoof_pool)}")

    chosen = []
    if n_live:
        idx = rng.choice(len(live_pool), size=n_live, replace=False)
        chosen.extend(live_pool[i] for i in idx)
    if n_spoof:
        idx = rng.choice(len(spoof_pool), size=n_spoof, replace=False)
        chosen.extend(spoof_pool[i] for i in idx)

    cache = cache if cache is not None else ImageCache()
    images = np.stack([cache.get(manifest, s) for s in chosen])
    live = np.array([1.0 if s.is_live else 0.0 for s in chosen], dtype=np.float32)
    return Batch(samples=chosen, images=images, live=live)
