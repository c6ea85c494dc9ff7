"""Benchmark protocol construction from an annotated manifest.

Builds the five-subset layout: A keeps the bulk of the data as the source
domain; B holds the held-out spoof types; C, D, and E are stratified draws
that shift the ethnicity, age, and illumination marginals. Illumination
groups come from K-means over simple luminance statistics with the cluster
count picked at the point of maximum curvature of the SSE-vs-K curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, InfeasibleSplitError, ProtocolViolationError
from .samples import DatasetManifest, ImageCache, save_manifest

SUBSET_KINDS = {
    "A": "source",
    "B": "new_spoof_type",
    "C": "new_ethnicity_distribution",
    "D": "new_age_distribution",
    "E": "new_illumination",
}


def illumination_features(image: np.ndarray) -> np.ndarray:
    """Fixed-length lighting descriptor of one image.

    Returns (mean luminance, luminance std, 8-bin luminance histogram mass)
    as a float64 vector of length 10. Luminance is the channel mean.
    """
    lum = np.asarray(image, dtype=np.float64).mean(axis=0).ravel()
    hist, _ = np.histogram(lum, bins=8, range=(0.0, 1.0))
    hist = hist / lum.size
    return np.concatenate(([lum.mean(), lum.std()], hist))


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator, n_iter: int = 100):
    """One Lloyd run with k-means++ style seeding; returns (labels, centroids, sse)."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j:] = x[rng.integers(n, size=k - j)]
            break
        centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(n_iter):
        dists = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        if (new_labels == labels).all() and _ > 0:
            break
        labels = new_labels
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    sse = float(((x - centroids[labels]) ** 2).sum())
    return labels, centroids, sse


def kmeans_best(x: np.ndarray, k: int, seed: int, restarts: int = 10):
    """Best-of-restarts K-means (lowest SSE kept)."""
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, r]))
        labels, centroids, sse = _kmeans_once(x, k, rng)
        if best is None or sse < best[2]:
            best = (labels, centroids, sse)
    return best


def elbow_k(sse_curve: np.ndarray) -> int:
    """Cluster count at the maximum second difference of the SSE curve.

    ``sse_curve[i]`` is the SSE for K = i + 1. Degenerate data (zero SSE at
    K = 1) picks K = 1; curves too short for a second difference fall back to
    the largest K whose SSE still improves markedly.
    """
    sse = np.asarray(sse_curve, dtype=np.float64)
    kmax = len(sse)
    if kmax == 1 or sse[0] <= 1e-12:
        return 1
    if kmax == 2:
        return 2 if sse[1] < 0.5 * sse[0] else 1
    curvature = sse[:-2] - 2 * sse[1:-1] + sse[2:]  # indexed by K = 2 .. kmax-1
    return int(np.argmax(curvature)) + 2


@dataclass
class IlluminationClustering:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    sse_curve: np.ndarray  # sse_curve[i] is the SSE at K = i + 1


def assign_illumination_clusters(
    manifest: DatasetManifest, kmax: int = 8, seed: int = 0, restarts: int = 10, cache=None
) -> IlluminationClustering:
    """Cluster the manifest by lighting statistics and write the labels back
    into the samples' ``illum_cluster`` field."""
    if kmax < 1:
        raise DataError(f"kmax must be at least 1, got {kmax}")
    if len(manifest) < kmax:
        raise DataError(f"need at least {kmax} samples to sweep K up to {kmax}")
    cache = cache if cache is not None else ImageCache()
    x = np.stack([illumination_features(cache.get(manifest, s)) for s in manifest.samples])

    sse_curve = []
    runs = {}
    for k in range(1, kmax + 1):
        labels, centroids, sse = kmeans_best(x, k, seed, restarts=restarts)
        runs[k] = (labels, centroids)
        sse_curve.append(sse)
    sse_curve = np.array(sse_curve)
    k_star = min(max(elbow_k(sse_curve), 1), kmax)
    labels, centroids = runs[k_star]
    for sample, label in zip(manifest.samples, labels):
        sample.illum_cluster = int(label)
    return IlluminationClustering(
        k=k_star, centroids=centroids, labels=labels, sse_curve=sse_curve
    )


@dataclass
class ProtocolConfig:
    holdout_micro_types: tuple = ()
    ethnicity_target: tuple = None  # (value, fraction) for subset C
    age_target: tuple = None  # (min_age, fraction over it) for subset D
    illum_target: tuple = None  # (cluster id, fraction) for subset E
    subset_fraction: float = 0.15  # of the remaining pool, per target subset
    tolerance_pp: float = 2.0
    test_fraction: float = 0.3
    seed: int = 0


@dataclass
class ProtocolSpec:
    subsets: dict  # subset id -> (train manifest, test manifest)
    kinds: dict
    report: dict


def _subject_groups(samples):
    groups = {}
    for s in samples:
        groups.setdefault(s.subject_id, []).append(s)
    return groups


def _split_subject_disjoint(samples, test_fraction, rng, strata_key=None):
    """Split samples into (train, test) with no shared subjects; when a
    strata key is given, subjects are split within each stratum."""
    groups = _subject_groups(samples)
    subjects = sorted(groups)
    strata = {}
    for subj in subjects:
        key = strata_key(groups[subj][0]) if strata_key else ""
        strata.setdefault(key, []).append(subj)
    test_subjects = set()
    for key in sorted(strata):
        subj = strata[key]
        order = rng.permutation(len(subj))
        n_test = int(round(len(subj) * test_fraction))
        if len(subj) > 1:
            n_test = min(max(n_test, 1), len(subj) - 1)
        test_subjects.update(subj[i] for i in order[:n_test])
    train = [s for s in samples if s.subject_id not in test_subjects]
    test = [s for s in samples if s.subject_id in test_subjects]
    return train, test


def _stratified_draw(pool, size, match, target_fraction, tolerance_pp, attribute, rng):
    """Draw ``size`` samples hitting a marginal for ``match`` within the
    tolerance. Raises when the pool cannot support the request."""
    hits = [s for s in pool if match(s)]
    rest = [s for s in pool if not match(s)]
    want_hits = int(round(size * target_fraction))
    want_rest = size - want_hits
    if len(hits) < want_hits or len(rest) < want_rest:
        raise InfeasibleSplitError(
            f"cannot reach {100 * target_fraction:.1f}% {attribute} marginal: pool has "
            f"{len(hits)} matching / {len(rest)} other, needs {want_hits}/{want_rest}",
            attribute=attribute,
        )
    chosen = [hits[i] for i in rng.permutation(len(hits))[:want_hits]]
    chosen += [rest[i] for i in rng.permutation(len(rest))[:want_rest]]
    achieved = 100.0 * want_hits / size
    if abs(achieved - 100.0 * target_fraction) > tolerance_pp:
        raise InfeasibleSplitError(
            f"achievable {attribute} marginal {achieved:.2f}% misses the target by more "
            f"than {tolerance_pp}pp",
            attribute=attribute,
        )
    order = {id(s): i for i, s in enumerate(pool)}
    chosen.sort(key=lambda s: order[id(s)])
    return chosen


def _marginals(samples):
    n = max(len(samples), 1)
    eth = {}
    for s in samples:
        eth[s.ethnicity] = eth.get(s.ethnicity, 0) + 1
    return {
        "n_samples": len(samples),
        "n_live": sum(1 for s in samples if s.is_live),
        "n_spoof": sum(1 for s in samples if not s.is_live),
        "spoof_micro_types": sorted({s.spoof_micro for s in samples if not s.is_live}),
        "ethnicity": {k: v / n for k, v in sorted(eth.items())},
        "age_mean": float(np.mean([s.age for s in samples])) if samples else 0.0,
    }


def build_protocol_splits(manifest: DatasetManifest, config: ProtocolConfig) -> ProtocolSpec:
    """Partition an annotated manifest into the five benchmark subsets.

    Every sample lands in exactly one subset. B takes all spoof samples of
    the held-out micro types plus a proportional share of live samples; C, D,
    and E are stratified draws hitting their requested attribute marginals;
    A keeps the rest. Each subset is split subject-disjointly into train and
    test."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 400]))
    pool = list(manifest.samples)
    subsets = {}

    holdout = set(config.holdout_micro_types)
    b_spoof = [s for s in pool if not s.is_live and s.spoof_micro in holdout]
    taken = {s.sample_id for s in b_spoof}
    b_live = []
    if b_spoof:
        lives = [s for s in pool if s.is_live]
        n_live = min(len(b_spoof), len(lives))
        idx = rng.permutation(len(lives))[:n_live]
        b_live = [lives[i] for i in sorted(idx)]
        taken |= {s.sample_id for s in b_live}
    subsets["B"] = b_spoof + b_live

    remaining = [s for s in pool if s.sample_id not in taken]
    targets = {
        "C": (config.ethnicity_target, lambda s, v: s.ethnicity == v, "ethnicity"),
        "D": (config.age_target, lambda s, v: s.age >= v, "age"),
        "E": (config.illum_target, lambda s, v: s.illum_cluster == v, "illumination"),
    }
    for subset_id in ("C", "D", "E"):
        target, matcher, attr = targets[subset_id]
        if target is None:
            subsets[subset_id] = []
            continue
        value, fraction = target
        size = max(2, int(round(len(remaining) * config.subset_fraction)))
        chosen = _stratified_draw(
            remaining, size, lambda s: matcher(s, value), fraction,
            config.tolerance_pp, attr, rng,
        )
        chosen_ids = {s.sample_id for s in chosen}
        remaining = [s for s in remaining if s.sample_id not in chosen_ids]
        subsets[subset_id] = chosen

    subsets["A"] = remaining
    a_micro = {s.spoof_micro for s in subsets["A"] if not s.is_live}
    if a_micro & holdout:
        raise ProtocolViolationError(
            f"held-out spoof types leaked into subset A: {sorted(a_micro & holdout)}"
        )

    split_rngs = {sid: np.random.default_rng(np.random.SeedSequence([config.seed, 401, i]))
                  for i, sid in enumerate(sorted(subsets))}
    out = {}
    report = {"subsets": {}, "config": {
        "holdout_micro_types": sorted(holdout),
        "tolerance_pp": config.tolerance_pp,
        "seed": config.seed,
    }}
    for sid, samples in subsets.items():
        strata = None
        if sid == "C":
            strata = lambda s: s.ethnicity
        train, test = _split_subject_disjoint(
            samples, config.test_fraction, split_rngs[sid], strata_key=strata
        )
        train_m = replace(manifest, samples=train, split="train", subset_id=sid)
        test_m = replace(manifest, samples=test, split="test", subset_id=sid)
        out[sid] = (train_m, test_m)
        report["subsets"][sid] = {
            "kind": SUBSET_KINDS[sid],
            "overall": _marginals(samples),
            "train": _marginals(train),
            "test": _marginals(test),
        }
    return ProtocolSpec(subsets=out, kinds=dict(SUBSET_KINDS), report=report)


def save_protocol(spec: ProtocolSpec, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sid, (train, test) in spec.subsets.items():
        save_manifest(train, out_dir / f"{sid}_train.csv")
        save_manifest(test, out_dir / f"{sid}_test.csv")
    with open(out_dir / "distribution_report.json", "w", encoding="utf-8") as fh:
        json.dump(spec.report, fh, indent=2, sort_keys=True)
