"""Presentation attack detection metrics.

Scores are "spoofness": higher means more likely spoof, and spoof is the
positive class throughout. A sample is classified spoof when its score is at
or above the operating threshold.

    APCER  percentage of spoof samples accepted as bona fide (score < thr)
    BPCER  percentage of live samples rejected as attacks (score >= thr)
    ACER   (APCER + BPCER) / 2, computed exactly; rounding happens only when
           a report is serialized, with decimal half-up rounding
    AUC    area under the ROC curve by the trapezoid rule, equal to the
           pairwise probability P(spoof score > live score) + 0.5 P(tie)
    EER    interpolated point on the ROC where FPR equals FNR (percent)
    HTER   (FPR + FNR) / 2 at a chosen threshold (percent); defaults to the
           EER threshold of the evaluated score set
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import MetricError

LIVE, SPOOF = 0, 1


@dataclass
class ScoreSet:
    """Per-sample spoofness scores with binary labels (1 = spoof)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise MetricError("scores and labels must have equal length")

    def split(self):
        spoof = self.scores[self.labels == SPOOF]
        live = self.scores[self.labels == LIVE]
        if spoof.size == 0 or live.size == 0:
            raise MetricError("need at least one live and one spoof sample")
        return spoof, live


def round_half_up(value: float, ndigits: int = 1) -> float:
    """Decimal half-up rounding of the printed value (9.45 -> 9.5)."""
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def error_rates(score_set: ScoreSet, threshold: float):
    """(apcer, bpcer, acer) in percent at a fixed threshold."""
    spoof, live = score_set.split()
    apcer = 100.0 * np.count_nonzero(spoof < threshold) / spoof.size
    bpcer = 100.0 * np.count_nonzero(live >= threshold) / live.size
    acer = (apcer + bpcer) / 2
    return apcer, bpcer, acer


def roc_points(score_set: ScoreSet):
    """ROC curve by threshold sweep over the distinct scores.

    Returns (fpr, tpr, thresholds), each of length n_distinct + 1, ordered
    from the strictest threshold (fpr 0-ish) to the loosest (fpr 1). The
    first point is (0, 0) at a threshold above every score.
    """
    spoof, live = score_set.split()
    thresholds = np.unique(score_set.scores)[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for thr in thresholds:
        tpr.append(np.count_nonzero(spoof >= thr) / spoof.size)
        fpr.append(np.count_nonzero(live >= thr) / live.size)
    lead = thresholds[0] + 1.0 if thresholds.size else 1.0
    return (
        np.array(fpr),
        np.array(tpr),
        np.concatenate(([lead], thresholds)),
    )


def auc_trapezoid(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.trapezoid(tpr, fpr))


def tpr_at_fpr(fpr: np.ndarray, tpr: np.ndarray, target: float) -> float:
    """TPR at a target FPR by linear interpolation along the ROC."""
    return float(np.interp(target, fpr, tpr))


def _eer_point(fpr: np.ndarray, tpr: np.ndarray, thresholds: np.ndarray):
    """Interpolated crossing of FPR and FNR along the piecewise-linear ROC."""
    gap = fpr - (1.0 - tpr)  # negative while FPR < FNR
    for i in range(1, len(gap)):
        if gap[i] >= 0:
            g0, g1 = gap[i - 1], gap[i]
            t = 0.0 if g1 == g0 else (0.0 - g0) / (g1 - g0)
            eer = fpr[i - 1] + t * (fpr[i] - fpr[i - 1])
            fnr = (1.0 - tpr[i - 1]) + t * ((1.0 - tpr[i]) - (1.0 - tpr[i - 1]))
            thr = thresholds[i - 1] + t * (thresholds[i] - thresholds[i - 1])
            return (eer + fnr) / 2, thr
    return float(fpr[-1]), float(thresholds[-1])


@dataclass
class RocAnalysis:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    tpr_at_fpr: dict
    eer: float  # percent
    eer_threshold: float
    hter: float  # percent, at the EER threshold


def roc_analysis(score_set: ScoreSet, fpr_targets=(0.005,)) -> RocAnalysis:
    """Full ROC sweep with AUC, operating points, EER, and HTER."""
    fpr, tpr, thresholds = roc_points(score_set)
    auc = auc_trapezoid(fpr, tpr)
    eer_frac, eer_thr = _eer_point(fpr, tpr, thresholds)
    return RocAnalysis(
        fpr=fpr,
        tpr=tpr,
        thresholds=thresholds,
        auc=auc,
        tpr_at_fpr={float(t): tpr_at_fpr(fpr, tpr, float(t)) for t in fpr_targets},
        eer=100.0 * eer_frac,
        eer_threshold=eer_thr,
        hter=100.0 * eer_frac,
    )


def hter_at_threshold(score_set: ScoreSet, threshold: float) -> float:
    """(FPR + FNR) / 2 in percent at an externally chosen threshold."""
    spoof, live = score_set.split()
    fpr = np.count_nonzero(live >= threshold) / live.size
    fnr = np.count_nonzero(spoof < threshold) / spoof.size
    return 100.0 * (fpr + fnr) / 2


def threshold_at_fpr(score_set: ScoreSet, target: float) -> float:
    """Loosest threshold whose FPR does not exceed the target."""
    _, live = score_set.split()
    candidates = np.unique(score_set.scores)[::-1]
    best = candidates[0] + 1.0
    for thr in candidates:
        if np.count_nonzero(live >= thr) / live.size <= target:
            best = thr
        else:
            break
    return float(best)


def pairwise_auc(score_set: ScoreSet) -> float:
    """Brute-force AUC: P(spoof > live) + 0.5 P(spoof == live)."""
    spoof, live = score_set.split()
    wins = (spoof[:, None] > live[None, :]).sum(dtype=np.float64)
    ties = (spoof[:, None] == live[None, :]).sum(dtype=np.float64)
    return float((wins + 0.5 * ties) / (spoof.size * live.size))


@dataclass
class MetricsReport:
    """Evaluation summary; rates in percent, AUC and TPR values in [0, 1]."""

    threshold: float
    apcer: float
    bpcer: float
    acer: float
    auc: float
    tpr_at_fpr: dict
    eer: float
    hter: float
    per_attack_apcer: dict = field(default_factory=dict)

    def to_dict(self, ndigits: int = None) -> dict:
        def r(x):
            return x if ndigits is None else round_half_up(x, ndigits)

        return {
            "threshold": self.threshold,
            "apcer": r(self.apcer),
            "bpcer": r(self.bpcer),
            "acer": r(self.acer),
            "auc": self.auc,
            "tpr_at_fpr": {str(k): v for k, v in sorted(self.tpr_at_fpr.items())},
            "eer": r(self.eer),
            "hter": r(self.hter),
            "per_attack_apcer": {k: r(v) for k, v in sorted(self.per_attack_apcer.items())},
        }


def evaluate_scores(
    score_set: ScoreSet,
    fpr_targets=(0.005,),
    threshold: float = None,
    attack_types=None,
) -> MetricsReport:
    """Aggregate report. The operating threshold defaults to the one
    achieving the first FPR target on this score set; per-attack APCER is
    reported when attack type annotations are supplied."""
    roc = roc_analysis(score_set, fpr_targets=fpr_targets)
    if threshold is None:
        threshold = threshold_at_fpr(score_set, float(fpr_targets[0]))
    apcer, bpcer, acer = error_rates(score_set, threshold)
    per_attack = {}
    if attack_types is not None:
        attack_types = np.asarray(attack_types)
        spoof_mask = score_set.labels == SPOOF
        for kind in sorted({t for t, is_spoof in zip(attack_types, spoof_mask) if is_spoof and t}):
            sel = spoof_mask & (attack_types == kind)
            per_attack[str(kind)] = float(
                100.0 * np.count_nonzero(score_set.scores[sel] < threshold) / sel.sum()
            )
    return MetricsReport(
        threshold=float(threshold),
        apcer=apcer,
        bpcer=bpcer,
        acer=acer,
        auc=roc.auc,
        tpr_at_fpr=roc.tpr_at_fpr,
        eer=roc.eer,
        hter=roc.hter,
        per_attack_apcer=per_attack,
    )
