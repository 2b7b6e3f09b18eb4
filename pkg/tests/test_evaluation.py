import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from constrec.constraints import InteractionTensor
from constrec.evaluation import (
    METRIC_COLUMNS,
    EvalSet,
    InfeasibleSamplingError,
    ScoredPair,
    UndefinedMetricError,
    auc,
    folding_report,
    make_test_negatives_timebucket,
    read_metrics_csv,
    sliced_auc,
    summarize_seeds,
    write_metrics_csv,
)
from constrec.fixtures import bucket_world
from oracles import eligible, pairwise_auc

scored = st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=60).filter(
    lambda xs: 0 < sum(y for _, y in xs) < len(xs))


class TestAUC:
    def test_perfect_separation(self):
        assert auc([ScoredPair(0.9, 1), ScoredPair(0.1, 0)]) == 1.0

    def test_all_ties(self):
        assert auc(np.full(7, 0.3), [1, 0, 1, 0, 0, 1, 0]) == 0.5

    def test_thirty_random_pairs(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=30)
        y = rng.integers(0, 2, 30)
        assert auc(s, y) == pairwise_auc(s, y)

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            auc([np.nan, 0.2], [1, 0])

    @given(scored)
    def test_matches_pairwise_oracle_with_ties(self, pairs):
        s, y = zip(*pairs)
        assert auc(np.array(s, float) / 4, y) == pairwise_auc(np.array(s, float) / 4, y)

    @given(scored)
    def test_invariant_under_increasing_transform(self, pairs):
        s, y = zip(*pairs)
        s = np.array(s, dtype=float)
        assert auc(np.exp(s) * 3 + 1, y) == auc(s, y)

    @given(scored)
    def test_label_flip(self, pairs):
        s, y = zip(*pairs)
        flipped = 1 - np.array(y)
        assert auc(s, flipped) == pytest.approx(1 - auc(s, y), abs=1e-15)


class TestSlicedAUC:
    def test_everything_equals_global(self):
        rng = np.random.default_rng(1)
        s, y = rng.normal(size=40), rng.integers(0, 2, 40)
        assert sliced_auc(s, y, np.ones(40, bool)) == auc(s, y)

    def test_partition_and_oracle(self):
        rng = np.random.default_rng(2)
        s, y = rng.normal(size=80), rng.integers(0, 2, 80)
        part = rng.integers(0, 3, 80)
        for p in range(3):
            mask = part == p
            assert sliced_auc(s, y, mask) == pairwise_auc(s[mask], y[mask])

    def test_errors_name_the_slice(self):
        with pytest.raises(UndefinedMetricError, match="22-23"):
            sliced_auc([0.1, 0.2], [1, 0], [False, False], "22-23")
        with pytest.raises(UndefinedMetricError, match="horror"):
            sliced_auc([0.1, 0.2, 0.3], [1, 0, 1], [True, False, True], "horror")


class TestTimeBucketNegatives:
    def test_ratio_one(self):
        data = bucket_world()
        ev = make_test_negatives_timebucket(data, data, 1, 0)
        assert np.sum(ev.labels == 0) == np.sum(ev.labels == 1) == len(data)

    def test_every_negative_eligible(self):
        data = bucket_world()
        ev = make_test_negatives_timebucket(data, data, 3, 4)
        bits = ev.catalog[ev.cids]
        for t in np.flatnonzero(ev.labels == 0):
            assert ev.users[t] in eligible(data, bits[t], "users")
            assert ev.items[t] in eligible(data, bits[t], "items")
        assert set(ev.users[ev.labels == 0]) == {0, 1}

    def test_same_seed_same_negatives(self):
        data = bucket_world()
        a = make_test_negatives_timebucket(data, data, 2, 7)
        b = make_test_negatives_timebucket(data, data, 2, 7)
        assert a.to_lines() == b.to_lines()

    def test_infeasible_raises_with_diagnostic(self):
        data = InteractionTensor.from_records([(0, 0, [0], 1.0), (1, 1, [0], 1.0)], 2, 2, 1)
        with pytest.raises(InfeasibleSamplingError, match="constraint bits"):
            make_test_negatives_timebucket(data, data, 1, 0)

    def test_tags_follow_positive(self):
        data = bucket_world()
        ev = make_test_negatives_timebucket(data, data, 1, 0,
                                            tagger=lambda bits: {"b0": bits[:, 0] == 1})
        bits = ev.catalog[ev.cids]
        np.testing.assert_array_equal(ev.tags["b0"], bits[:, 0] == 1)

    def test_save_load_round_trip(self, tmp_path):
        data = bucket_world()
        ev = make_test_negatives_timebucket(data, data, 1, 0,
                                            tagger=lambda bits: {"b1": bits[:, 1] == 1})
        ev.save(tmp_path / "e.jsonl", data.d)
        back = EvalSet.load(tmp_path / "e.jsonl")
        assert back.to_lines() == ev.to_lines()


class TestSummaries:
    def test_all_perfect(self):
        assert folding_report({0: 1.0, 1: 1.0}).fraction_at_or_below_half == 0.0

    def test_half_at_risk(self):
        assert folding_report({0: 0.4, 1: 0.6}).fraction_at_or_below_half == 0.5

    def test_needs_two_seeds(self):
        with pytest.raises(ValueError):
            folding_report({0: 0.7})

    def test_ten_seed_arithmetic(self):
        values = [0.61, 0.48, 0.55, 0.5, 0.72, 0.66, 0.59, 0.43, 0.7, 0.64]
        s = summarize_seeds(dict(enumerate(values)))
        mean = sum(values) / 10
        std = math.sqrt(sum((v - mean) ** 2 for v in values) / 9)
        assert s.mean == pytest.approx(mean, rel=1e-14)
        assert s.std == pytest.approx(std, rel=1e-12)
        assert s.fraction_at_or_below_half == 0.3

    def test_metrics_csv_round_trip(self, tmp_path):
        rows = [{"dataset": "synthetic", "model": "MF", "seed": 3, "slice": "global",
                 "auc": 0.1 + 0.2, "n_pos": 4, "n_neg": 5, "iteration": 2}]
        write_metrics_csv(rows, tmp_path / "m.csv")
        header = (tmp_path / "m.csv").read_text().splitlines()[0].split(",")
        assert header == list(METRIC_COLUMNS)
        assert read_metrics_csv(tmp_path / "m.csv") == rows
