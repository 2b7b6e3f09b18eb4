import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_tensor
from constrec.constraints import (
    ConstraintVector,
    DimensionError,
    Discretizer,
    FeatureBlocks,
    FeatureMap,
    InteractionTensor,
    build_cooccurrence,
    overlap,
    satisfies,
)
from oracles import brute_cooccurrence


def bits_strategy(d, nonzero=False):
    s = st.lists(st.integers(0, 1), min_size=d, max_size=d)
    return s.filter(any) if nonzero else s


class TestSatisfiesAndOverlap:
    def test_shared_bit(self):
        assert satisfies([1, 0, 1], [0, 0, 1])

    def test_disjoint(self):
        assert not satisfies([1, 0, 0], [0, 1, 0])

    def test_full_disjunction(self):
        assert satisfies(np.ones(6, dtype=int), [0, 0, 0, 1, 0, 0])

    def test_overlap_values(self):
        assert overlap([1, 1, 0], [0, 1, 1]) == 1
        c = [1, 0, 1, 1]
        assert overlap(c, c) == 3
        assert overlap([1, 0, 0], [0, 1, 1]) == 0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            satisfies([1, 0], [1, 0, 0])
        with pytest.raises(DimensionError):
            overlap([1, 0], [1, 0, 0])

    @given(st.integers(1, 12).flatmap(lambda d: st.tuples(bits_strategy(d), bits_strategy(d))))
    def test_satisfies_iff_positive_overlap(self, pair):
        c, f = pair
        assert satisfies(c, f) == (overlap(c, f) > 0)

    @given(st.integers(1, 10).flatmap(
        lambda d: st.tuples(bits_strategy(d, True), bits_strategy(d, True), bits_strategy(d))))
    def test_union_preserves_satisfaction(self, triple):
        c1, c2, f = (np.array(x) for x in triple)
        union = ConstraintVector(c1).union(ConstraintVector(c2))
        if satisfies(c1, f) or satisfies(c2, f):
            assert satisfies(union, f)


class TestConstraintVector:
    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            ConstraintVector(np.zeros(4))

    def test_from_indices_and_properties(self):
        c = ConstraintVector.from_indices([3, 1], 5)
        assert c.d == 5
        assert c.active == (1, 3)
        assert c.norm1 == 2

    def test_index_out_of_range(self):
        with pytest.raises(DimensionError):
            ConstraintVector.from_indices([5], 5)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            ConstraintVector([0, 2, 1])

    def test_immutable(self):
        c = ConstraintVector([1, 0])
        with pytest.raises(ValueError):
            c.bits[0] = 0

    def test_equality_and_hash(self):
        a = ConstraintVector.from_indices([0, 2], 3)
        b = ConstraintVector([1, 0, 1])
        assert a == b and hash(a) == hash(b)


class TestFeatureMap:
    def test_zero_rows_allowed_and_never_satisfy(self):
        fm = FeatureMap(np.array([[0, 0, 0], [1, 0, 0]]))
        c = ConstraintVector([1, 1, 1])
        np.testing.assert_array_equal(fm.compatible_items(c), [1])

    def test_must_be_2d(self):
        with pytest.raises(DimensionError):
            FeatureMap(np.array([1, 0, 1]))


class TestInteractionTensor:
    def test_reward_range(self):
        with pytest.raises(ValueError):
            InteractionTensor.from_records([(0, 0, [0], 1.5)], 1, 1, 1)

    def test_id_range(self):
        with pytest.raises(IndexError):
            InteractionTensor.from_records([(2, 0, [0], 1.0)], 2, 1, 1)
        with pytest.raises(IndexError):
            InteractionTensor.from_records([(0, 3, [0], 1.0)], 1, 3, 1)

    def test_catalog_deduplicates_and_duplicates_kept(self):
        data = InteractionTensor.from_records(
            [(0, 0, [1], 1.0), (0, 0, [1], 1.0), (1, 0, [0, 1], 0.0)], 2, 1, 3)
        assert len(data) == 3
        assert data.catalog.shape == (2, 3)
        np.testing.assert_array_equal(data.record_bits()[0], data.record_bits()[1])

    def test_concat_merges_catalogs(self, rng):
        a = random_tensor(rng, 4, 5, 6, 10)
        b = random_tensor(rng, 4, 5, 6, 10)
        c = a.concat(b)
        assert len(c) == 20
        np.testing.assert_array_equal(c.record_bits(), np.vstack([a.record_bits(), b.record_bits()]))


class TestCooccurrence:
    def test_single_user_two_constraints(self):
        data = InteractionTensor.from_records([(0, 0, [1], 1.0), (0, 1, [2], 1.0)], 1, 2, 3)
        stats = build_cooccurrence(data)
        assert stats.pair_counts[1, 2] == 1

    def test_two_users_same_bit(self):
        data = InteractionTensor.from_records([(0, 0, [1], 1.0), (1, 0, [1], 1.0)], 2, 1, 3)
        pc = build_cooccurrence(data).pair_counts
        assert pc[1, 1] == 2
        assert pc.sum() - np.trace(pc) == 0

    def test_empty_data_zero(self):
        data = InteractionTensor.from_records([], 2, 2, 3)
        np.testing.assert_array_equal(build_cooccurrence(data).pair_counts, np.zeros((3, 3)))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(20)
        data = random_tensor(rng, 20, 8, 7, 60, max_active=3)
        np.testing.assert_array_equal(build_cooccurrence(data).pair_counts, brute_cooccurrence(data))

    def test_symmetric_with_dominant_diagonal(self, rng):
        pc = build_cooccurrence(random_tensor(rng, 15, 6, 8, 50, max_active=3)).pair_counts
        np.testing.assert_array_equal(pc, pc.T)
        for j in range(pc.shape[0]):
            assert pc[j, j] >= pc[j].max()

    @given(st.integers(0, 2**31 - 1))
    def test_order_and_duplicate_invariance(self, seed):
        rng = np.random.default_rng(seed)
        data = random_tensor(rng, 6, 4, 5, 15, max_active=2)
        base = build_cooccurrence(data).pair_counts
        perm = rng.permutation(len(data))
        dup = np.concatenate([perm, perm[:5]])
        np.testing.assert_array_equal(build_cooccurrence(data.subset(dup)).pair_counts, base)


class TestBlocksAndDiscretizer:
    def test_encode_and_conjunctive_satisfaction(self):
        blocks = FeatureBlocks((3, 4))
        c = blocks.encode([[0], None])
        assert c.tolist() == [1, 0, 0, 1, 1, 1, 1]
        assert blocks.satisfies(c, blocks.encode([[0], [2]]))
        assert not blocks.satisfies(c, blocks.encode([[1], [2]]))

    def test_discretizer_buckets(self):
        disc = Discretizer((10, 20, 30))
        assert disc.n_buckets == 4
        assert [disc.bucket(v) for v in (5, 10, 19.9, 30, 99)] == [0, 1, 1, 3, 3]
        assert disc.range_bits(12, 25).tolist() == [0, 1, 1, 0]
        assert disc.center(1) == 15.0

    def test_unsorted_edges(self):
        with pytest.raises(ValueError):
            Discretizer((3, 1))
