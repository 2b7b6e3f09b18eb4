import json
import os
from pathlib import Path

import numpy as np
import pytest

from constrec.constraints import build_cooccurrence, overlap, satisfies
from constrec.data.foursquare import (
    IngestError,
    TimeBucketScheme,
    load_foursquare,
    synth_checkins,
)
from constrec.data.io import (
    DatasetManifest,
    load_dataset,
    remap_ids,
    save_dataset,
)
from constrec.data.movielens import (
    KID_AGE,
    build_folding_split,
    folding_violations,
    load_movielens,
    synth_movielens,
)
from constrec.data.synthetic import (
    SyntheticConfig,
    sample_constraint_pairs,
    synth_low_overlap,
)
from constrec.fixtures import folding_micro
from constrec.nn import ConfigurationError
from oracles import disjointness_violations

FOURSQUARE = os.environ.get("CONSTREC_FOURSQUARE")
MOVIELENS = os.environ.get("CONSTREC_MOVIELENS")


def checkin_line(user, venue, hhmm, category="Pizza Place"):
    return f"{user}\t{venue}\tcat\t{category}\t40.7\t-74.0\t-240\tTue Apr 03 {hhmm}:09 +0000 2012"


def write_lines(path: Path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


class TestFoursquare:
    def test_window_arithmetic(self):
        scheme = TimeBucketScheme()
        assert scheme.bucket(750) == 62
        assert scheme.window(750) == [60, 61, 62, 63, 64]
        assert scheme.window(5) == [0, 1, 2, 118, 119]
        assert scheme.window_center(np.isin(np.arange(120), [0, 1, 2, 118, 119])) == 0
        assert list(scheme.bucket_range(8, 9)) == [40, 41, 42, 43, 44]

    def test_single_checkin_feature_equals_constraint(self, tmp_path):
        cd = load_foursquare(write_lines(tmp_path / "c.txt", [checkin_line("7", "v1", "12:30")]))
        c = cd.data.record_bits()[0]
        assert np.flatnonzero(c).tolist() == [60, 61, 62, 63, 64]
        np.testing.assert_array_equal(cd.features.rows[0], c)

    def test_every_record_overlaps_five(self, tmp_path):
        path = synth_checkins(tmp_path / "s.txt", n_users=40, n_venues=60, checkins_per_user=10)
        cd = load_foursquare(path)
        bits = cd.data.record_bits()
        for t in range(len(cd.data)):
            assert overlap(bits[t], cd.features.rows[cd.data.items[t]]) == 5

    def test_malformed_rows_skipped_and_counted(self, tmp_path):
        path = write_lines(tmp_path / "c.txt", [checkin_line("1", "a", "08:00"), "garbage line",
                                                checkin_line("2", "b", "09:00")])
        cd = load_foursquare(path)
        assert len(cd.data) == 2
        assert cd.manifest.notes["rows_skipped"] == 1

    def test_unparseable_timestamp(self, tmp_path):
        bad = "1\ta\tcat\tDiner\t0\t0\t0\tnot a time"
        with pytest.raises(IngestError):
            load_foursquare(write_lines(tmp_path / "c.txt", [bad]))

    def test_subset_filters_categories_and_counts(self, tmp_path):
        lines = [checkin_line("1", "a", "08:00"), checkin_line("1", "b", "08:30", "Gym"),
                 checkin_line("2", "a", "12:00"), checkin_line("3", "c", "13:00")]
        cd = load_foursquare(write_lines(tmp_path / "c.txt", lines),
                             {"min_venue_checkins": 2})
        assert cd.manifest.user_ids == ["1", "2"] and cd.manifest.item_ids == ["a"]

    def test_deterministic_hash(self, tmp_path):
        path = synth_checkins(tmp_path / "s.txt", n_users=20, n_venues=30, checkins_per_user=5)
        assert load_foursquare(path).manifest.notes["hash"] == load_foursquare(path).manifest.notes["hash"]

    @pytest.mark.skipif(not FOURSQUARE, reason="set CONSTREC_FOURSQUARE to the NYC check-in file")
    def test_real_subset_scale(self):
        cd = load_foursquare(FOURSQUARE)
        print("foursquare scale:", cd.manifest.notes["users"], cd.manifest.notes["items"],
              cd.manifest.notes["observed_center_buckets"])
        assert cd.manifest.notes["users"] > 0


class TestIO:
    def test_remap_round_trip(self):
        values = ["x", "7", "x", "z", "7"]
        idx, originals = remap_ids(values)
        assert idx.tolist() == [0, 1, 0, 2, 1]
        assert [originals[j] for j in idx] == values

    def test_save_load_round_trip(self, tmp_path):
        sd = synth_low_overlap(SyntheticConfig(m=30, n=20, d=12, overlap_prob=0.05, seed=1))
        man = DatasetManifest(sd.data.m, sd.data.n, sd.data.d)
        save_dataset(tmp_path, sd.data, sd.features, man, {"sessions": sd.sessions.tolist()})
        data, features, manifest, extra = load_dataset(tmp_path)
        np.testing.assert_array_equal(data.record_bits(), sd.data.record_bits())
        np.testing.assert_array_equal(data.rewards, sd.data.rewards)
        np.testing.assert_array_equal(features.rows, sd.features.rows)
        assert extra["sessions"] == sd.sessions.tolist()
        assert (manifest.m, manifest.n, manifest.d) == (30, 20, 12)
        first = (tmp_path / "records.jsonl").read_text().splitlines()[0]
        assert set(json.loads(first)) == {"user", "item", "constraint_bits", "reward", "weight"}


class TestMovieLens:
    @pytest.fixture
    def ml(self, tmp_path):
        folding_micro(tmp_path, 0)
        return load_movielens(tmp_path)

    def test_rating_endpoints(self, tmp_path):
        folding_micro(tmp_path, 0)
        raw = np.loadtxt(tmp_path / "u.data", dtype=int)
        ml = load_movielens(tmp_path)
        np.testing.assert_array_equal(ml.data.rewards[raw[:, 2] == 5], 1.0)
        np.testing.assert_array_equal(ml.data.rewards[raw[:, 2] == 1], 0.0)

    def test_context_bits(self, ml):
        bits = ml.data.record_bits()
        items, users = ml.data.items, ml.data.users
        np.testing.assert_array_equal(bits[:, 0], ml.thriller[items])
        np.testing.assert_array_equal(bits[:, 1], ml.horror[items])
        age_block = bits[:, 3:]
        assert np.all(age_block.sum(axis=1) == 1)
        buckets = np.searchsorted(ml.discretizer.edges, ml.ages[users], side="right")
        np.testing.assert_array_equal(np.argmax(age_block, axis=1), buckets)
        for t in range(len(ml.data)):
            assert ml.blocks.satisfies(bits[t], ml.features.rows[items[t]])

    def test_gmap_is_thriller_horror_age(self, ml):
        g = ml.gmap()(ml.data.record_bits())
        users, items = ml.data.users, ml.data.items
        np.testing.assert_array_equal(g[:, 0], ml.thriller[items])
        np.testing.assert_array_equal(g[:, 1], ml.horror[items])
        assert np.all(np.abs(g[:, 2] - ml.ages[users] / 100) <= 0.011)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_movielens(tmp_path)

    def test_genre_count_mismatch(self, tmp_path):
        folding_micro(tmp_path, 0)
        (tmp_path / "u.item").write_text("1|T|01-Jan-1990||url|0|1|0\n")
        with pytest.raises(IngestError):
            load_movielens(tmp_path)

    def test_folding_split(self, ml):
        split = build_folding_split(ml, seed=3, test_fraction=0.3)
        assert folding_violations(split.train, ml.horror) == []
        assert disjointness_violations(split.train.users, split.train.items, ml.horror) == []
        for pairs in (split.horror_test, split.thriller_test):
            kids = ml.ages[pairs.users] < KID_AGE
            np.testing.assert_array_equal(pairs.targets[kids], -1.0)
            np.testing.assert_array_equal(pairs.labels[kids], 0)
            assert np.all(pairs.labels[~kids] == 1) and np.all(pairs.targets[~kids] >= 0)
        assert np.all(ml.horror[split.horror_test.items])

    def test_folding_split_on_surrogate_is_disjoint(self, tmp_path):
        ml = load_movielens(synth_movielens(tmp_path, n_users=80, n_items=120, seed=2))
        for seed in range(3):
            split = build_folding_split(ml, seed=seed)
            assert disjointness_violations(split.train.users, split.train.items, ml.horror) == []
            assert len(split.horror_test) and len(split.thriller_test)

    @pytest.mark.skipif(not MOVIELENS, reason="set CONSTREC_MOVIELENS to the ml-100k directory")
    def test_real_dataset_shape(self):
        ml = load_movielens(MOVIELENS)
        assert (ml.data.m, ml.data.n) == (943, 1682)
        assert ml.manifest.notes["min_ratings_per_user"] >= 20


class TestSynthetic:
    def test_zero_overlap(self):
        sd = synth_low_overlap(SyntheticConfig(m=60, n=80, d=40, overlap_prob=0.0, seed=0))
        cat = sd.data.catalog.astype(int)
        assert cat.shape[0] <= 40
        gram = cat @ cat.T
        np.testing.assert_array_equal(gram - np.diag(np.diag(gram)), 0)

    def test_seeded_identical(self):
        cfg = SyntheticConfig(m=40, n=50, d=20, overlap_prob=0.05, seed=4)
        a, b = synth_low_overlap(cfg), synth_low_overlap(cfg)
        np.testing.assert_array_equal(a.data.record_bits(), b.data.record_bits())
        np.testing.assert_array_equal(a.data.rewards, b.data.rewards)
        np.testing.assert_array_equal(a.truth.U, b.truth.U)

    def test_empirical_overlap_rate(self):
        target = 0.03
        sd = synth_low_overlap(SyntheticConfig(m=1500, n=600, d=60, overlap_prob=target, seed=0))
        rate = sample_constraint_pairs(sd.data, 10_000, seed=0).mean()
        assert abs(rate - target) <= 0.02

    def test_records_satisfy_features(self):
        sd = synth_low_overlap(SyntheticConfig(m=50, n=60, d=24, overlap_prob=0.05, seed=2))
        bits = sd.data.record_bits()
        for t in range(len(sd.data)):
            assert satisfies(bits[t], sd.features.rows[sd.data.items[t]])

    def test_infeasible_overlap(self):
        with pytest.raises(ConfigurationError):
            synth_low_overlap(SyntheticConfig(m=10, n=10, d=60, overlap_prob=0.05))
        with pytest.raises(ConfigurationError):
            synth_low_overlap(SyntheticConfig(m=10, n=10, d=12, overlap_prob=1.5))

    def test_sessions_give_cooccurrence(self):
        sd = synth_low_overlap(SyntheticConfig(m=100, n=80, d=24, overlap_prob=0.05, seed=3))
        assert build_cooccurrence(sd.data).active_pairs().shape[0] > 0
