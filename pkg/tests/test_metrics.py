"""Displacement metrics against brute-force oracles, plus monotonicity and
ordering properties of the top-K evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajdiff.metrics import (
    DEFAULT_MISS_THRESHOLD,
    EvalReport,
    MetricsError,
    ade,
    evaluate_set,
    fde,
)


def brute_ade(truth, pred):
    return sum(
        np.sqrt((truth[t][0] - pred[t][0]) ** 2 + (truth[t][1] - pred[t][1]) ** 2)
        for t in range(len(truth))
    ) / len(truth)


def brute_fde(truth, pred):
    return np.sqrt((truth[-1][0] - pred[-1][0]) ** 2 + (truth[-1][1] - pred[-1][1]) ** 2)


class TestAdeFde:
    def test_identical_zero(self):
        t = np.random.default_rng(0).standard_normal((12, 2))
        assert ade(t, t) == 0.0
        assert fde(t, t) == 0.0

    def test_pythagorean_offset(self):
        t = np.zeros((5, 2))
        p = np.tile([3.0, 4.0], (5, 1))
        assert ade(t, p) == pytest.approx(5.0)

    def test_final_point_only(self):
        t = np.zeros((4, 2))
        p = np.zeros((4, 2))
        p[-1] = [0.0, 2.0]
        assert fde(t, p) == pytest.approx(2.0)
        assert ade(t, p) == pytest.approx(0.5)

    def test_length_mismatch_rejected(self):
        with pytest.raises(MetricsError):
            ade(np.zeros((5, 2)), np.zeros((6, 2)))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_matches_manual_sum(self, seed):
        rng = np.random.default_rng(seed)
        t = rng.standard_normal((12, 2)) * 5
        p = rng.standard_normal((12, 2)) * 5
        assert ade(t, p) == pytest.approx(brute_ade(t, p), rel=1e-12)
        assert fde(t, p) == pytest.approx(brute_fde(t, p), rel=1e-12)


class TestEvaluateSet:
    def test_perfect_candidate_in_set(self):
        rng = np.random.default_rng(1)
        truth = rng.standard_normal((12, 2))
        preds = np.concatenate([rng.standard_normal((4, 12, 2)) + 10, truth[None]])
        row = evaluate_set(truth, preds, k_values=(5,), miss_threshold=2.0)
        assert row["minade_5"] == 0.0
        assert row["minfde_5"] == 0.0
        assert row["mr_5"] == 0.0

    def test_all_endpoints_missing(self):
        truth = np.zeros((12, 2))
        preds = np.zeros((3, 12, 2))
        preds[:, -1, :] = [2.5, 0.0]
        row = evaluate_set(truth, preds, k_values=(3,), miss_threshold=2.0)
        assert row["mr_3"] == 1.0

    def test_default_miss_threshold(self):
        assert DEFAULT_MISS_THRESHOLD == 2.0

    def test_insufficient_candidates_rejected(self):
        with pytest.raises(MetricsError):
            evaluate_set(np.zeros((12, 2)), np.zeros((3, 12, 2)), k_values=(5,))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_matches_per_candidate_oracle(self, seed):
        rng = np.random.default_rng(seed)
        truth = rng.standard_normal((8, 2)) * 3
        preds = rng.standard_normal((6, 8, 2)) * 3
        row = evaluate_set(truth, preds, k_values=(1, 3, 6), miss_threshold=2.0)
        for k in (1, 3, 6):
            ades = [brute_ade(truth, preds[i]) for i in range(k)]
            fdes = [brute_fde(truth, preds[i]) for i in range(k)]
            assert row[f"minade_{k}"] == pytest.approx(min(ades), rel=1e-12)
            assert row[f"minfde_{k}"] == pytest.approx(min(fdes), rel=1e-12)
            assert row[f"mr_{k}"] == float(min(fdes) > 2.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_monotonic_in_k(self, seed):
        rng = np.random.default_rng(seed)
        truth = rng.standard_normal((8, 2))
        preds = rng.standard_normal((10, 8, 2))
        row = evaluate_set(truth, preds, k_values=(1, 2, 5, 10))
        for small, large in ((1, 2), (2, 5), (5, 10)):
            assert row[f"minade_{large}"] <= row[f"minade_{small}"]
            assert row[f"minfde_{large}"] <= row[f"minfde_{small}"]
            assert row[f"mr_{large}"] <= row[f"mr_{small}"]

    def test_order_insensitive_at_full_k(self):
        rng = np.random.default_rng(2)
        truth = rng.standard_normal((8, 2))
        preds = rng.standard_normal((6, 8, 2))
        perm = rng.permutation(6)
        a = evaluate_set(truth, preds, k_values=(6,))
        b = evaluate_set(truth, preds[perm], k_values=(6,))
        assert a == b


class TestEvalReport:
    def test_aggregation_means(self):
        report = EvalReport(k_values=(1,), miss_threshold=2.0)
        report.add_scene("a", {"minade_1": 1.0, "minfde_1": 2.0, "mr_1": 1.0}, latency_ms=10.0)
        report.add_scene("b", {"minade_1": 3.0, "minfde_1": 4.0, "mr_1": 0.0}, latency_ms=30.0)
        agg = report.aggregate()
        assert agg["minade_1"] == 2.0
        assert agg["minfde_1"] == 3.0
        assert agg["mr_1"] == 0.5
        assert agg["latency_ms_mean"] == 20.0
        assert agg["n_scenes"] == 2.0
