import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faswrap.errors import MetricError
from faswrap.metrics import (
    RocAnalysis,
    ScoreSet,
    error_rates,
    evaluate_scores,
    hter_at_threshold,
    pairwise_auc,
    roc_analysis,
    roc_points,
    round_half_up,
    threshold_at_fpr,
    tpr_at_fpr,
)
from oracles import pairwise_auc as oracle_pairwise_auc


def rates_from_counts(n_spoof, spoof_below, n_live, live_above, threshold=0.5):
    """Score set engineered to produce exact APCER/BPCER percentages."""
    spoof = np.concatenate([np.full(spoof_below, 0.2), np.full(n_spoof - spoof_below, 0.8)])
    live = np.concatenate([np.full(live_above, 0.8), np.full(n_live - live_above, 0.2)])
    scores = np.concatenate([spoof, live])
    labels = np.concatenate([np.ones(n_spoof, dtype=int), np.zeros(n_live, dtype=int)])
    return error_rates(ScoreSet(scores, labels), threshold)


class TestErrorRates:
    def test_ours_source_row(self):
        # 9.4 / 9.5 -> acer 9.45, reported 9.5 after one-decimal rounding
        apcer, bpcer, acer = rates_from_counts(1000, 94, 1000, 95)
        assert apcer == 9.4
        assert bpcer == 9.5
        assert acer == (9.4 + 9.5) / 2
        assert round_half_up(acer) == 9.5

    def test_upper_bound_source_row(self):
        apcer, bpcer, acer = rates_from_counts(1000, 89, 1000, 80)
        assert (apcer, bpcer) == (8.9, 8.0)
        assert acer == (8.9 + 8.0) / 2
        assert round_half_up(acer) == 8.5

    def test_lwf_source_row(self):
        apcer, bpcer, acer = rates_from_counts(1000, 114, 1000, 101)
        assert (apcer, bpcer) == (11.4, 10.1)
        assert acer == 10.75

    def test_perfect_separation_is_zero(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        labels = np.array([1, 1, 0, 0])
        assert error_rates(ScoreSet(scores, labels), 0.5) == (0.0, 0.0, 0.0)

    def test_single_class_rejected(self):
        with pytest.raises(MetricError):
            error_rates(ScoreSet(np.array([0.1, 0.2]), np.array([1, 1])), 0.5)

    @given(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40),
        st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40),
        st.floats(0, 1, allow_nan=False),
    )
    @settings(max_examples=50, deadline=None)
    def test_acer_is_exact_mean(self, spoof, live, threshold):
        scores = np.array(spoof + live)
        labels = np.array([1] * len(spoof) + [0] * len(live))
        apcer, bpcer, acer = error_rates(ScoreSet(scores, labels), threshold)
        assert acer == (apcer + bpcer) / 2
        assert 0 <= apcer <= 100 and 0 <= bpcer <= 100


class TestRounding:
    @pytest.mark.parametrize(
        "value,expected",
        [(9.45, 9.5), (8.45, 8.5), (10.75, 10.8), (9.44, 9.4), (0.05, 0.1), (1.0, 1.0)],
    )
    def test_half_up(self, value, expected):
        assert round_half_up(value, 1) == expected


class TestRoc:
    def test_constant_scores_diagonal(self):
        scores = np.full(20, 0.4)
        labels = np.array([1, 0] * 10)
        roc = roc_analysis(ScoreSet(scores, labels))
        assert roc.auc == pytest.approx(0.5, abs=1e-12)
        assert roc.eer == pytest.approx(50.0, abs=1e-9)
        np.testing.assert_allclose(roc.fpr, roc.tpr)

    def test_perfect_scores(self):
        scores = np.array([0.9, 0.8, 0.7, 0.3, 0.2, 0.1])
        labels = np.array([1, 1, 1, 0, 0, 0])
        roc = roc_analysis(ScoreSet(scores, labels), fpr_targets=(0.005,))
        assert roc.auc == 1.0
        assert roc.tpr_at_fpr[0.005] == 1.0
        assert roc.eer == pytest.approx(0.0, abs=1e-9)
        assert roc.hter == pytest.approx(0.0, abs=1e-9)

    def test_small_set_pairwise_value(self):
        # spoof .9 .8 .7 vs live .6 .4 .2 -> AUC 1; swapping .7 for .5 keeps
        # .5 < .6 so one (spoof, live) pair inverts: AUC 8/9
        s1 = ScoreSet(np.array([0.9, 0.8, 0.7, 0.6, 0.4, 0.2]), np.array([1, 1, 1, 0, 0, 0]))
        assert roc_analysis(s1).auc == pytest.approx(1.0, abs=1e-12)
        s2 = ScoreSet(np.array([0.9, 0.8, 0.5, 0.6, 0.4, 0.2]), np.array([1, 1, 1, 0, 0, 0]))
        assert roc_analysis(s2).auc == pytest.approx(8 / 9, abs=1e-12)
        assert oracle_pairwise_auc(s2.scores, s2.labels) == pytest.approx(8 / 9, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 200), st.integers(2, 200))
    @settings(max_examples=40, deadline=None)
    def test_trapezoid_matches_pairwise(self, seed, n_spoof, n_live):
        rng = np.random.default_rng(seed)
        scores = np.concatenate([rng.normal(0.6, 0.3, n_spoof), rng.normal(0.4, 0.3, n_live)])
        scores = np.round(scores, 2)  # force ties
        labels = np.concatenate([np.ones(n_spoof, dtype=int), np.zeros(n_live, dtype=int)])
        ss = ScoreSet(scores, labels)
        assert roc_analysis(ss).auc == pytest.approx(oracle_pairwise_auc(scores, labels), abs=1e-12)
        assert pairwise_auc(ss) == pytest.approx(oracle_pairwise_auc(scores, labels), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=60)
        labels = rng.integers(0, 2, size=60)
        if labels.sum() in (0, 60):
            labels[0], labels[1] = 0, 1
        base = roc_analysis(ScoreSet(scores, labels))
        warped = roc_analysis(ScoreSet(np.exp(scores * 0.7) + 3.0, labels))
        assert warped.auc == pytest.approx(base.auc, abs=1e-10)
        assert warped.eer == pytest.approx(base.eer, abs=1e-8)
        assert warped.tpr_at_fpr[0.005] == pytest.approx(base.tpr_at_fpr[0.005], abs=1e-10)

    def test_eer_threshold_consistency(self):
        rng = np.random.default_rng(3)
        scores = np.concatenate([rng.normal(0.7, 0.2, 50), rng.normal(0.3, 0.2, 50)])
        labels = np.concatenate([np.ones(50, dtype=int), np.zeros(50, dtype=int)])
        ss = ScoreSet(scores, labels)
        roc = roc_analysis(ss)
        # HTER at the interpolated EER threshold should sit near the EER
        assert hter_at_threshold(ss, roc.eer_threshold) == pytest.approx(roc.eer, abs=2.0)


class TestEvaluate:
    def test_report_fields_and_rounding(self):
        rng = np.random.default_rng(0)
        scores = np.concatenate([rng.uniform(0.5, 1, 40), rng.uniform(0, 0.5, 40)])
        labels = np.concatenate([np.ones(40, dtype=int), np.zeros(40, dtype=int)])
        micro = ["mannequin"] * 40 + [""] * 40
        report = evaluate_scores(ScoreSet(scores, labels), attack_types=micro)
        d = report.to_dict()
        assert d["acer"] == (d["apcer"] + d["bpcer"]) / 2
        rounded = report.to_dict(ndigits=1)
        assert rounded["acer"] == round_half_up(d["acer"], 1)
        assert "mannequin" in d["per_attack_apcer"]

    def test_threshold_at_fpr_boundary(self):
        scores = np.array([0.9, 0.8, 0.7, 0.6, 0.5, 0.4])
        labels = np.array([1, 1, 1, 0, 0, 0])
        thr = threshold_at_fpr(ScoreSet(scores, labels), 0.0)
        fpr, tpr, _ = roc_points(ScoreSet(scores, labels))
        assert np.count_nonzero(scores[labels == 0] >= thr) == 0
