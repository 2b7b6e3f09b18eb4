"""MovieLens 100K with genre/age contexts, and the horror/thriller folding split.

Constraint layout (a Cartesian product of two features):

* genre block, 3 bits: thriller, horror, other (neither of the two);
* age block: the user's age, discretized.

Items carry their genre bits and every age bit, so each record satisfies
its constraint.  ``g(c)`` decodes a constraint to
``(thriller flag, horror flag, age / 100)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..constraints import Discretizer, FeatureBlocks, FeatureMap, InteractionTensor
from ..models import SideInfo
from ..nn import ConstraintFeatureMapG
from .foursquare import IngestError
from .io import DatasetManifest, data_hash

GENRES = ("unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
          "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
          "Romance", "Sci-Fi", "Thriller", "War", "Western")
HORROR = GENRES.index("Horror")
THRILLER = GENRES.index("Thriller")
KID_AGE = 14
AGE_SCALE = 100.0
AGE_EDGES = tuple(range(10, 80, 2))

GENRE_BITS = 3  # thriller, horror, other


@dataclass
class MovieLensData:
    data: InteractionTensor
    features: FeatureMap
    manifest: DatasetManifest
    ages: np.ndarray  # per user
    genres: np.ndarray  # (n, 19) flags
    discretizer: Discretizer = field(default_factory=lambda: Discretizer(AGE_EDGES))

    @property
    def blocks(self) -> FeatureBlocks:
        return FeatureBlocks((GENRE_BITS, self.discretizer.n_buckets))

    @property
    def horror(self) -> np.ndarray:
        return self.genres[:, HORROR] == 1

    @property
    def thriller(self) -> np.ndarray:
        return self.genres[:, THRILLER] == 1

    def context_bits(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return context_bits(self.genres, self.ages, self.discretizer, users, items)

    def gmap(self) -> ConstraintFeatureMapG:
        nb = self.discretizer.n_buckets
        centers = [self.discretizer.center(b) / AGE_SCALE for b in range(nb)]
        return ConstraintFeatureMapG(GENRE_BITS + nb, copy_bits=[0, 1],
                                     continuous=[(list(range(GENRE_BITS, GENRE_BITS + nb)), centers)])

    def side_info(self) -> SideInfo:
        """User side: ``[age / 100]``; item side: the 19 genre flags."""
        return SideInfo((self.ages / AGE_SCALE)[:, None].astype(np.float64),
                        self.genres.astype(np.float64))


def context_bits(genres, ages, disc: Discretizer, users, items) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    t = users.size
    bits = np.zeros((t, GENRE_BITS + disc.n_buckets), dtype=np.uint8)
    thr = genres[items, THRILLER] == 1
    hor = genres[items, HORROR] == 1
    bits[:, 0] = thr
    bits[:, 1] = hor
    bits[:, 2] = ~(thr | hor)
    buckets = np.searchsorted(disc.edges, ages[users], side="right")
    bits[np.arange(t), GENRE_BITS + buckets] = 1
    return bits


def _tensor_from_bits(users, items, bits, rewards, m, n) -> InteractionTensor:
    catalog, cids = np.unique(bits, axis=0, return_inverse=True)
    cids = np.asarray(cids).reshape(-1)
    return InteractionTensor(users, items, cids, rewards, np.ones(len(users)), catalog, m, n)


def load_movielens(path: str | Path, discretizer: Discretizer | None = None) -> MovieLensData:
    root = Path(path)
    disc = discretizer or Discretizer(AGE_EDGES)
    files = {name: root / name for name in ("u.data", "u.item", "u.user")}
    for name, p in files.items():
        if not p.exists():
            raise FileNotFoundError(f"MovieLens file missing: {p}")
    raw_items = []
    with open(files["u.item"], encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("|")
            flags = parts[-len(GENRES):]
            if len(parts) < 5 + len(GENRES) or not all(f in ("0", "1") for f in flags):
                raise IngestError(f"u.item line {lineno}: expected {len(GENRES)} trailing genre flags")
            raw_items.append((int(parts[0]), [int(f) for f in flags]))
    raw_users = []
    with open(files["u.user"], encoding="latin-1") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("|")
            if len(parts) >= 2 and parts[0]:
                raw_users.append((int(parts[0]), int(parts[1])))
    ratings = np.loadtxt(files["u.data"], dtype=np.int64, ndmin=2)
    if ratings.shape[1] < 3:
        raise IngestError("u.data must have user, item, rating columns")
    user_ids = sorted(u for u, _ in raw_users)
    item_ids = sorted(i for i, _ in raw_items)
    uidx = {u: j for j, u in enumerate(user_ids)}
    iidx = {i: j for j, i in enumerate(item_ids)}
    ages_by_id = dict(raw_users)
    genre_by_id = dict(raw_items)
    ages = np.array([ages_by_id[u] for u in user_ids], dtype=np.float64)
    genres = np.array([genre_by_id[i] for i in item_ids], dtype=np.uint8)
    try:
        users = np.array([uidx[u] for u in ratings[:, 0]], dtype=np.int64)
        items = np.array([iidx[i] for i in ratings[:, 1]], dtype=np.int64)
    except KeyError as exc:
        raise IngestError(f"rating references unknown id {exc}") from exc
    rewards = (ratings[:, 2].astype(np.float64) - 1.0) / 4.0
    m, n = len(user_ids), len(item_ids)
    bits = context_bits(genres, ages, disc, users, items)
    data = _tensor_from_bits(users, items, bits, rewards, m, n)
    frows = np.zeros((n, GENRE_BITS + disc.n_buckets), dtype=np.uint8)
    frows[:, 0] = genres[:, THRILLER]
    frows[:, 1] = genres[:, HORROR]
    frows[:, 2] = (genres[:, THRILLER] == 0) & (genres[:, HORROR] == 0)
    frows[:, GENRE_BITS:] = 1
    features = FeatureMap(frows)
    per_user = np.bincount(users, minlength=m)
    notes = {"users": m, "items": n, "ratings": int(len(users)),
             "min_ratings_per_user": int(per_user.min()) if m else 0,
             "kids": int(np.sum(ages < KID_AGE)), "age_edges": list(disc.edges)}
    manifest = DatasetManifest(m, n, data.d, user_ids, item_ids, {}, notes)
    manifest.notes["hash"] = data_hash(data, features)
    return MovieLensData(data, features, manifest, ages, genres, disc)


def movielens_extra(ml: MovieLensData) -> dict:
    """Side tables needed to rebuild ``MovieLensData`` from the canonical files."""
    return {"ages": ml.ages.tolist(), "genres": ml.genres.tolist(),
            "age_edges": list(ml.discretizer.edges)}


def movielens_from_saved(data: InteractionTensor, features: FeatureMap,
                         manifest: DatasetManifest, extra: dict) -> MovieLensData:
    for key in ("ages", "genres"):
        if key not in extra:
            raise IngestError(f"saved MovieLens dataset lacks {key!r}; re-run ingest")
    disc = Discretizer(tuple(extra.get("age_edges", AGE_EDGES)))
    return MovieLensData(data, features, manifest, np.asarray(extra["ages"], dtype=np.float64),
                         np.asarray(extra["genres"], dtype=np.uint8), disc)


@dataclass
class LabelledPairs:
    """Test pairs with binary labels (1 positive, 0 negative) and raw targets."""

    users: np.ndarray
    items: np.ndarray
    bits: np.ndarray
    labels: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return int(self.users.size)


@dataclass
class FoldingSplit:
    train: InteractionTensor
    horror_test: LabelledPairs
    thriller_test: LabelledPairs
    horror_users: np.ndarray  # users whose retained ratings are horror-only


def build_folding_split(ml: MovieLensData, seed: int = 0, test_fraction: float = 0.2,
                        horror_group_fraction: float = 0.5, kid_negative_ratio: float = 1.0
                        ) -> FoldingSplit:
    """Training set in which horror and non-horror ratings come from disjoint users.

    Adults who rated horror join the horror group with probability
    ``horror_group_fraction``; the group keeps only its horror ratings, every
    other user keeps only non-horror ratings, and kids also lose thriller
    ratings.  A ``test_fraction`` of the adult horror (thriller) ratings is held
    out as positives; kid negatives pair kids with random horror (thriller)
    movies, ``kid_negative_ratio`` per positive, target -1.
    """
    rng = np.random.default_rng(seed)
    d = ml.data
    users, items = d.users, d.items
    horror_item = ml.horror[items]
    thriller_item = ml.thriller[items] & ~horror_item
    kid = ml.ages < KID_AGE
    rated_horror = np.zeros(d.m, dtype=bool)
    rated_horror[users[horror_item]] = True
    horror_group = rated_horror & ~kid & (rng.random(d.m) < horror_group_fraction)
    in_group = horror_group[users]
    keep = np.where(in_group, horror_item, ~horror_item)
    keep &= ~(kid[users] & thriller_item)
    held = np.zeros(len(d), dtype=bool)
    horror_pos = np.flatnonzero(keep & in_group & horror_item)
    thriller_pos = np.flatnonzero(keep & ~in_group & thriller_item & ~kid[users])
    h_test = horror_pos[rng.random(horror_pos.size) < test_fraction]
    t_test = thriller_pos[rng.random(thriller_pos.size) < test_fraction]
    held[h_test] = True
    held[t_test] = True
    train = d.subset(np.flatnonzero(keep & ~held))
    kids = np.flatnonzero(kid)

    def pairs(pos_rows, candidates):
        n_neg = int(round(kid_negative_ratio * pos_rows.size)) if kids.size else 0
        neg_u = rng.choice(kids, n_neg) if n_neg else np.empty(0, dtype=np.int64)
        neg_i = rng.choice(candidates, n_neg) if n_neg else np.empty(0, dtype=np.int64)
        u = np.concatenate([users[pos_rows], neg_u])
        i = np.concatenate([items[pos_rows], neg_i])
        labels = np.r_[np.ones(pos_rows.size), np.zeros(n_neg)]
        targets = np.r_[d.rewards[pos_rows], -np.ones(n_neg)]
        return LabelledPairs(u, i, ml.context_bits(u, i), labels, targets)

    horror_items = np.flatnonzero(ml.horror)
    thriller_items = np.flatnonzero(ml.thriller & ~ml.horror)
    return FoldingSplit(train, pairs(h_test, horror_items), pairs(t_test, thriller_items),
                        np.flatnonzero(horror_group))


def folding_violations(train: InteractionTensor, horror: np.ndarray) -> list[int]:
    """Users linked to both a horror and a non-horror item in ``train`` (exhaustive scan)."""
    touched_h: set[int] = set()
    touched_o: set[int] = set()
    for u, i in zip(train.users.tolist(), train.items.tolist()):
        (touched_h if horror[i] else touched_o).add(u)
    return sorted(touched_h & touched_o)


# -- surrogate generator -------------------------------------------------------------


def synth_movielens(out_dir: str | Path, n_users: int = 300, n_items: int = 500,
                    min_ratings: int = 20, mean_ratings: int = 60, seed: int = 0,
                    latent_dim: int = 6) -> Path:
    """Write ``u.data``, ``u.item``, ``u.user`` in the MovieLens 100K layout.

    Kids (age < 14) never rate horror or thriller titles.  Ratings come from
    a latent-factor model with genre-dependent taste.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ages = np.where(rng.random(n_users) < 0.08, rng.integers(7, 14, n_users),
                    np.clip(rng.normal(33, 11, n_users).round(), 14, 73)).astype(int)
    genres = np.zeros((n_items, len(GENRES)), dtype=int)
    for i in range(n_items):
        r = rng.random()
        if r < 0.07:
            genres[i, HORROR] = 1
            if rng.random() < 0.3:
                genres[i, THRILLER] = 1
        elif r < 0.2:
            genres[i, THRILLER] = 1
        others = [g for g in range(1, len(GENRES)) if g not in (HORROR, THRILLER)]
        if genres[i].sum() == 0 or rng.random() < 0.5:
            genres[i, rng.choice(others)] = 1
    gvec = rng.normal(0, 1, (len(GENRES), latent_dim))
    item_f = rng.normal(0, 0.7, (n_items, latent_dim)) + genres @ gvec / np.maximum(genres.sum(1, keepdims=True), 1)
    user_f = rng.normal(0, 1, (n_users, latent_dim))
    pop = rng.pareto(2.0, n_items) + 1.0
    forbidden_for_kids = (genres[:, HORROR] == 1) | (genres[:, THRILLER] == 1)
    lines = []
    for u in range(n_users):
        allowed = np.flatnonzero(~forbidden_for_kids) if ages[u] < KID_AGE else np.arange(n_items)
        count = min(allowed.size, max(min_ratings, int(rng.poisson(mean_ratings))))
        aff = item_f[allowed] @ user_f[u] / np.sqrt(latent_dim)
        p = np.exp(0.8 * aff) * pop[allowed]
        chosen = rng.choice(allowed, count, replace=False, p=p / p.sum())
        scores = item_f[chosen] @ user_f[u] / np.sqrt(latent_dim) + rng.normal(0, 0.5, count)
        stars = np.clip(np.round(3.5 + 1.2 * scores), 1, 5).astype(int)
        for i, s in zip(chosen, stars):
            lines.append(f"{u + 1}\t{i + 1}\t{s}\t{874965758 + int(rng.integers(10**6))}")
    (out / "u.data").write_text("\n".join(lines) + "\n")
    item_lines = [f"{i + 1}|Movie {i + 1} (1995)|01-Jan-1995||http://example.invalid/{i + 1}|"
                  + "|".join(str(x) for x in genres[i]) for i in range(n_items)]
    (out / "u.item").write_text("\n".join(item_lines) + "\n", encoding="latin-1")
    user_lines = [f"{u + 1}|{ages[u]}|{'MF'[u % 2]}|other|00000" for u in range(n_users)]
    (out / "u.user").write_text("\n".join(user_lines) + "\n")
    return out
