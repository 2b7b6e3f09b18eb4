"""Constraint and feature-map algebra.

Constraints and item features are binary vectors over a shared space of
``d`` feature values.  An item satisfies a constraint when the two vectors
share at least one active bit.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when vectors that must share a feature space have different lengths."""


def _as_bits(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D binary vector, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("binary vector entries must be 0 or 1")
    out = arr.astype(np.uint8)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ConstraintVector:
    """A nonzero binary vector ``c`` in ``{0,1}^d``."""

    bits: np.ndarray

    def __post_init__(self):
        bits = _as_bits(self.bits)
        if not bits.any():
            raise ValueError("constraint must activate at least one feature bit")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_indices(cls, indices: Iterable[int], d: int) -> ConstraintVector:
        bits = np.zeros(d, dtype=np.uint8)
        idx = list(indices)
        if any(j < 0 or j >= d for j in idx):
            raise DimensionError(f"active index out of range for d={d}: {idx}")
        bits[idx] = 1
        return cls(bits)

    @property
    def d(self) -> int:
        return int(self.bits.size)

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.bits))

    @property
    def norm1(self) -> int:
        return int(self.bits.sum())

    def union(self, other: ConstraintVector) -> ConstraintVector:
        _check_same_length(self.bits, other.bits)
        return ConstraintVector(self.bits | other.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConstraintVector):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool((self.bits == other.bits).all())

    def __hash__(self) -> int:
        return hash((self.d, self.active))

    def __repr__(self) -> str:
        return f"ConstraintVector(d={self.d}, active={list(self.active)})"


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Item feature rows ``f_i``; row ``i`` may be all-zero."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise DimensionError(f"feature map must be 2-D (n, d), got shape {rows.shape}")
        if rows.size and not np.isin(rows, (0, 1)).all():
            raise ValueError("feature map entries must be 0 or 1")
        rows = rows.astype(np.uint8)
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    @property
    def d(self) -> int:
        return int(self.rows.shape[1])

    def __getitem__(self, i: int) -> np.ndarray:
        return self.rows[i]

    def compatible_items(self, c: ConstraintVector) -> np.ndarray:
        """Indices of items satisfying ``c``."""
        _check_same_length(c.bits, self.rows[0] if self.n else np.zeros(self.d))
        return np.flatnonzero(self.rows.astype(np.int64) @ c.bits.astype(np.int64) > 0)


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def _bits_of(x) -> np.ndarray:
    return x.bits if isinstance(x, ConstraintVector) else np.asarray(x)


def overlap(c1, c2) -> int:
    """Number of shared active bits, ``c1^T c2``."""
    a, b = _bits_of(c1), _bits_of(c2)
    _check_same_length(a, b)
    return int(np.dot(a.astype(np.int64), b.astype(np.int64)))


def satisfies(c, f) -> bool:
    """True iff item features ``f`` share at least one bit with constraint ``c``."""
    return overlap(c, f) > 0


@dataclass(frozen=True, eq=False)
class InteractionTensor:
    """Sparse observations ``(u, i, c) -> r`` with per-record weights.

    Constraints are stored once in ``catalog`` (one row per distinct
    constraint); ``cids`` indexes into it.
    """

    users: np.ndarray
    items: np.ndarray
    cids: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    catalog: np.ndarray
    m: int
    n: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        cids = np.asarray(self.cids, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        catalog = np.asarray(self.catalog, dtype=np.uint8)
        if catalog.ndim != 2:
            raise DimensionError("catalog must be 2-D (q, d)")
        size = users.size
        if not (items.size == cids.size == rewards.size == weights.size == size):
            raise DimensionError("record arrays must have equal length")
        if size:
            if users.min() < 0 or users.max() >= self.m:
                raise IndexError("user id out of range")
            if items.min() < 0 or items.max() >= self.n:
                raise IndexError("item id out of range")
            if cids.min() < 0 or cids.max() >= catalog.shape[0]:
                raise IndexError("constraint id out of range")
            if rewards.min() < 0.0 or rewards.max() > 1.0:
                raise ValueError("rewards must lie in [0, 1]")
            if weights.min() < 0.0:
                raise ValueError("weights must be nonnegative")
        if catalog.shape[0] and (catalog.sum(axis=1) == 0).any():
            raise ValueError("catalog contains an all-zero constraint")
        for name, arr in (
            ("users", users), ("items", items), ("cids", cids),
            ("rewards", rewards), ("weights", weights), ("catalog", catalog),
        ):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(
        cls,
        records: Iterable[tuple],
        m: int,
        n: int,
        d: int,
        meta: dict | None = None,
    ) -> InteractionTensor:
        """Build from ``(user, item, constraint, reward[, weight])`` tuples.

        ``constraint`` may be a ConstraintVector or a sequence of active indices.
        """
        index: dict[tuple[int, ...], int] = {}
        rows: list[np.ndarray] = []
        us, its, cs, rs, ws = [], [], [], [], []
        for rec in records:
            u, i, c, r = rec[:4]
            w = rec[4] if len(rec) > 4 else 1.0
            if not isinstance(c, ConstraintVector):
                c = ConstraintVector.from_indices(c, d)
            if c.d != d:
                raise DimensionError(f"constraint length {c.d} != catalog d={d}")
            key = c.active
            if key not in index:
                index[key] = len(rows)
                rows.append(c.bits)
            us.append(u)
            its.append(i)
            cs.append(index[key])
            rs.append(r)
            ws.append(w)
        catalog = np.array(rows, dtype=np.uint8).reshape(len(rows), d)
        return cls(np.array(us), np.array(its), np.array(cs), np.array(rs), np.array(ws),
                   catalog, m, n, dict(meta or {}))

    @property
    def d(self) -> int:
        return int(self.catalog.shape[1])

    def __len__(self) -> int:
        return int(self.users.size)

    def constraint(self, record: int) -> ConstraintVector:
        return ConstraintVector(self.catalog[self.cids[record]])

    def record_bits(self) -> np.ndarray:
        """Dense ``(t, d)`` constraint matrix, one row per record."""
        return self.catalog[self.cids]

    def with_weights(self, weights: np.ndarray) -> InteractionTensor:
        return InteractionTensor(self.users, self.items, self.cids, self.rewards,
                                 np.asarray(weights, dtype=np.float64), self.catalog,
                                 self.m, self.n, dict(self.meta))

    def subset(self, mask_or_index) -> InteractionTensor:
        idx = np.asarray(mask_or_index)
        return InteractionTensor(self.users[idx], self.items[idx], self.cids[idx],
                                 self.rewards[idx], self.weights[idx], self.catalog,
                                 self.m, self.n, dict(self.meta))

    def concat(self, other: InteractionTensor) -> InteractionTensor:
        """Append ``other``'s records, merging constraint catalogs."""
        if (other.m, other.n, other.d) != (self.m, self.n, self.d):
            raise DimensionError("cannot concatenate tensors over different populations")
        catalog, remap = merge_catalogs(self.catalog, other.catalog)
        return InteractionTensor(
            np.concatenate([self.users, other.users]),
            np.concatenate([self.items, other.items]),
            np.concatenate([self.cids, remap[other.cids]]),
            np.concatenate([self.rewards, other.rewards]),
            np.concatenate([self.weights, other.weights]),
            catalog, self.m, self.n, dict(self.meta),
        )


def merge_catalogs(base: np.ndarray, extra: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Union of two catalogs; returns the merged catalog and ``extra``'s new row ids."""
    index = {tuple(np.flatnonzero(row)): q for q, row in enumerate(base)}
    rows = [base]
    remap = np.empty(extra.shape[0], dtype=np.int64)
    added = []
    for q, row in enumerate(extra):
        key = tuple(np.flatnonzero(row))
        if key not in index:
            index[key] = base.shape[0] + len(added)
            added.append(row)
        remap[q] = index[key]
    if added:
        rows.append(np.array(added, dtype=np.uint8))
    return np.concatenate(rows, axis=0), remap


@dataclass(frozen=True, eq=False)
class CooccurrenceStats:
    """Per feature-bit pair count of distinct users that activated both bits."""

    pair_counts: np.ndarray

    def __post_init__(self):
        pc = np.asarray(self.pair_counts, dtype=np.int64)
        pc.flags.writeable = False
        object.__setattr__(self, "pair_counts", pc)

    @property
    def d(self) -> int:
        return int(self.pair_counts.shape[0])

    def active_pairs(self) -> np.ndarray:
        """``(j, j')`` pairs with ``j < j'`` observed together for at least one user."""
        jj = np.argwhere(np.triu(self.pair_counts, k=1) > 0)
        return jj.astype(np.int64)


def user_bit_matrix(data: InteractionTensor) -> np.ndarray:
    """``(m, d)`` 0/1 matrix: did user ``u`` use any constraint activating bit ``j``."""
    seen = np.zeros((data.m, data.d), dtype=np.int64)
    if len(data):
        np.maximum.at(seen, data.users, data.record_bits().astype(np.int64))
    return seen


def item_bit_matrix(data: InteractionTensor) -> np.ndarray:
    """``(n, d)`` 0/1 matrix: was item ``i`` observed under a constraint activating bit ``j``."""
    seen = np.zeros((data.n, data.d), dtype=np.int64)
    if len(data):
        np.maximum.at(seen, data.items, data.record_bits().astype(np.int64))
    return seen


def build_cooccurrence(data: InteractionTensor) -> CooccurrenceStats:
    seen = user_bit_matrix(data)
    return CooccurrenceStats(seen.T @ seen)


# -- multi-feature constraints and discretization ---------------------------------


@dataclass(frozen=True)
class FeatureBlocks:
    """Layout of a Cartesian feature space made of several categorical features.

    ``sizes[b]`` is the number of values of feature ``b``; bits are laid out
    block after block.  A constraint over this space is a conjunction over
    blocks of disjunctions within a block.
    """

    sizes: tuple[int, ...]

    @property
    def d(self) -> int:
        return int(sum(self.sizes))

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    def slices(self) -> list[slice]:
        return [slice(o, o + s) for o, s in zip(self.offsets, self.sizes)]

    def encode(self, values: Sequence[Iterable[int] | None]) -> np.ndarray:
        """Concatenate per-block value sets into one bit vector.

        ``None`` for a block means the block is unconstrained (all values on).
        """
        if len(values) != len(self.sizes):
            raise DimensionError("one value set per feature block is required")
        bits = np.zeros(self.d, dtype=np.uint8)
        for sl, size, vals in zip(self.slices(), self.sizes, values):
            if vals is None:
                bits[sl] = 1
                continue
            for v in vals:
                if not 0 <= v < size:
                    raise DimensionError(f"value {v} out of range for block of size {size}")
                bits[sl.start + v] = 1
        return bits

    def satisfies(self, c, f) -> bool:
        """Conjunctive satisfaction: every block must overlap."""
        a, b = _bits_of(c), _bits_of(f)
        _check_same_length(a, b)
        if a.shape[-1] != self.d:
            raise DimensionError(f"vector length {a.shape[-1]} != block layout d={self.d}")
        return all(overlap(a[sl], b[sl]) > 0 for sl in self.slices())


@dataclass(frozen=True)
class Discretizer:
    """Bucket a continuous feature by sorted interior ``edges``.

    Values below ``edges[0]`` land in bucket 0, values at or above
    ``edges[-1]`` in the last bucket; there are ``len(edges) + 1`` buckets.
    """

    edges: tuple[float, ...]

    def __post_init__(self):
        if list(self.edges) != sorted(self.edges):
            raise ValueError("edges must be sorted")

    @property
    def n_buckets(self) -> int:
        return len(self.edges) + 1

    def bucket(self, value: float) -> int:
        return int(np.searchsorted(self.edges, value, side="right"))

    def one_hot(self, value: float) -> np.ndarray:
        bits = np.zeros(self.n_buckets, dtype=np.uint8)
        bits[self.bucket(value)] = 1
        return bits

    def range_bits(self, low: float, high: float) -> np.ndarray:
        """Bits of every bucket intersecting the closed range ``[low, high]``."""
        if high < low:
            raise ValueError("empty range")
        bits = np.zeros(self.n_buckets, dtype=np.uint8)
        bits[self.bucket(low): self.bucket(high) + 1] = 1
        return bits

    def center(self, bucket: int) -> float:
        """Representative value of a bucket (midpoint; open ends use the nearest edge)."""
        if not self.edges:
            return 0.0
        if bucket <= 0:
            return float(self.edges[0])
        if bucket >= len(self.edges):
            return float(self.edges[-1])
        return 0.5 * (self.edges[bucket - 1] + self.edges[bucket])
