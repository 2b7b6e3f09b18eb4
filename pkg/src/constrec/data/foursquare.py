"""Foursquare NYC check-ins with time-of-day constraints.

A check-in at minute ``t`` of the (UTC) day falls in bucket ``t // 12``; its
constraint activates the five buckets of the surrounding hour, wrapping
around midnight.  An item's feature row is the union of the windows it was
checked into, so every record satisfies ``c^T f_i = 5``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from ..constraints import FeatureMap, InteractionTensor
from .io import DatasetManifest, data_hash


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class TimeBucketScheme:
    bucket_minutes: int = 12
    buckets_per_window: int = 5

    def __post_init__(self):
        if self.bucket_minutes * self.buckets_per_window != 60:
            raise ValueError("a window must cover exactly one hour")
        if self.buckets_per_window % 2 != 1:
            raise ValueError("window must be centred, so an odd number of buckets")

    @property
    def buckets_per_day(self) -> int:
        return 24 * 60 // self.bucket_minutes

    def bucket(self, minute_of_day: int) -> int:
        return int(minute_of_day) // self.bucket_minutes

    def window(self, minute_of_day: int) -> list[int]:
        center = self.bucket(minute_of_day)
        half = self.buckets_per_window // 2
        return sorted((center + off) % self.buckets_per_day for off in range(-half, half + 1))

    def window_center(self, bits) -> int:
        """Centre bucket of a window constraint (handles wrap-around)."""
        active = set(np.flatnonzero(np.asarray(bits)).tolist())
        half = self.buckets_per_window // 2
        nb = self.buckets_per_day
        for b in active:
            if all((b + off) % nb in active for off in range(-half, half + 1)):
                return b
        raise ValueError("bits do not form a full time window")

    def bucket_range(self, start_hour: float, end_hour: float) -> range:
        """Buckets whose start minute lies in ``[start_hour, end_hour)``."""
        lo = int(round(start_hour * 60)) // self.bucket_minutes
        hi = int(round(end_hour * 60)) // self.bucket_minutes
        return range(lo, hi)


@dataclass
class SubsetConfig:
    categories: tuple[str, ...] | None = (
        "Restaurant", "Food", "Diner", "Pizza", "Burger", "Café", "Cafe", "Sandwich",
        "Deli", "Bakery", "Steakhouse", "BBQ", "Breakfast", "Taco", "Sushi", "Noodle",
        "Bagel", "Donut", "Dessert", "Snack", "Hot Dog", "Wings", "Salad", "Soup",
    )
    min_user_checkins: int = 1
    min_venue_checkins: int = 1
    max_users: int | None = None
    max_venues: int | None = None

    @classmethod
    def from_dict(cls, doc: dict | None) -> SubsetConfig:
        if not doc:
            return cls()
        doc = dict(doc)
        if doc.get("categories") is not None:
            doc["categories"] = tuple(doc["categories"])
        return cls(**doc)


def parse_utc_time(text: str) -> datetime:
    return datetime.strptime(text.strip(), "%a %b %d %H:%M:%S %z %Y")


def read_checkins(path: str | Path) -> tuple[list[tuple[str, str, str, int]], dict]:
    """Parse the tab-separated file into ``(user, venue, category, minute_of_day)`` rows."""
    rows = []
    skipped = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 8 or not parts[0] or not parts[1]:
                skipped += 1
                continue
            try:
                ts = parse_utc_time(parts[7])
            except ValueError as exc:
                raise IngestError(f"line {lineno}: unparseable timestamp {parts[7]!r}") from exc
            rows.append((parts[0], parts[1], parts[3], ts.hour * 60 + ts.minute))
    return rows, {"rows_read": len(rows), "rows_skipped": skipped}


def _filter(rows, cfg: SubsetConfig):
    if cfg.categories is not None:
        keys = tuple(c.lower() for c in cfg.categories)
        rows = [r for r in rows if any(k in r[2].lower() for k in keys)]
    while True:
        users = Counter(r[0] for r in rows)
        venues = Counter(r[1] for r in rows)
        keep_u = {u for u, c in users.items() if c >= cfg.min_user_checkins}
        keep_v = {v for v, c in venues.items() if c >= cfg.min_venue_checkins}
        if cfg.max_users is not None and len(keep_u) > cfg.max_users:
            ranked = sorted(keep_u, key=lambda u: (-users[u], u))
            keep_u = set(ranked[:cfg.max_users])
        if cfg.max_venues is not None and len(keep_v) > cfg.max_venues:
            ranked = sorted(keep_v, key=lambda v: (-venues[v], v))
            keep_v = set(ranked[:cfg.max_venues])
        new = [r for r in rows if r[0] in keep_u and r[1] in keep_v]
        if len(new) == len(rows):
            return new
        rows = new


@dataclass
class CheckinData:
    data: InteractionTensor
    features: FeatureMap
    manifest: DatasetManifest
    minutes: np.ndarray = field(repr=False)  # minute of day per record
    scheme: TimeBucketScheme = field(default_factory=TimeBucketScheme)


def load_foursquare(path: str | Path, subset: SubsetConfig | dict | None = None,
                    scheme: TimeBucketScheme | None = None) -> CheckinData:
    scheme = scheme or TimeBucketScheme()
    cfg = subset if isinstance(subset, SubsetConfig) else SubsetConfig.from_dict(subset)
    rows, notes = read_checkins(path)
    rows = _filter(rows, cfg)
    if not rows:
        raise IngestError("no check-ins left after subset filtering")
    user_ids = sorted({r[0] for r in rows}, key=_id_key)
    venue_ids = sorted({r[1] for r in rows}, key=_id_key)
    uidx = {u: j for j, u in enumerate(user_ids)}
    vidx = {v: j for j, v in enumerate(venue_ids)}
    d = scheme.buckets_per_day
    m, n = len(user_ids), len(venue_ids)
    minutes = np.array([r[3] for r in rows], dtype=np.int64)
    records = [(uidx[r[0]], vidx[r[1]], scheme.window(r[3]), 1.0) for r in rows]
    data = InteractionTensor.from_records(records, m, n, d)
    rows_f = np.zeros((n, d), dtype=np.uint8)
    np.maximum.at(rows_f, data.items, data.record_bits())
    features = FeatureMap(rows_f)
    observed = int(np.count_nonzero(np.bincount(
        [scheme.bucket(t) for t in minutes.tolist()], minlength=d)))
    notes.update(users=m, items=n, checkins=len(rows), observed_center_buckets=observed,
                 observed_window_buckets=int(rows_f.any(axis=0).sum()),
                 subset={k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items()})
    manifest = DatasetManifest(m, n, d, user_ids, venue_ids, {}, notes)
    manifest.notes["hash"] = data_hash(data, features)
    return CheckinData(data, features, manifest, minutes, scheme)


def _id_key(x: str):
    return (0, int(x), x) if x.isdigit() else (1, 0, x)


# -- surrogate generator -------------------------------------------------------------

_MEALS = {
    # name: (local peak hour, spread in hours, share of check-ins)
    "breakfast": (8.5, 0.6, 0.15),
    "lunch": (12.75, 0.7, 0.30),
    "dinner": (18.75, 0.9, 0.45),
    "late": (0.75, 1.2, 0.07),
    "early": (5.0, 0.6, 0.03),
}
_CATEGORY_NAMES = ["American Restaurant", "Pizza Place", "Diner", "Café", "Sushi Restaurant",
                   "Mexican Restaurant", "Deli / Bodega", "Burger Joint", "Bakery", "Thai Restaurant"]


def synth_checkins(path: str | Path, n_users: int = 300, n_venues: int = 1000,
                   checkins_per_user: int = 30, seed: int = 0, utc_offset_hours: int = -4,
                   latent_dim: int = 8) -> Path:
    """Write a surrogate check-in file in the Foursquare NYC schema.

    Venues serve one or two meal types; users split their visits between meal
    types by personal habit, pick a local time around the meal's peak, and
    choose among open venues by latent taste.  Times are written in UTC.
    """
    rng = np.random.default_rng(seed)
    meals = list(_MEALS)
    shares = np.array([_MEALS[x][2] for x in meals])
    venue_meals = []
    for _ in range(n_venues):
        first = rng.choice(len(meals), p=shares)
        served = {first}
        if rng.random() < 0.3:
            served.add(int(rng.choice(len(meals), p=shares)))
        venue_meals.append(served)
    taste_v = rng.normal(0, 1, (n_venues, latent_dim))
    meal_v = rng.normal(0, 1, (len(meals), latent_dim))
    taste_u = rng.normal(0, 1, (n_users, latent_dim))
    habits = rng.dirichlet(shares * 4.0, size=n_users)
    popularity = rng.pareto(1.5, n_venues) + 1.0
    by_meal = [np.array([v for v in range(n_venues) if mi in venue_meals[v]]) for mi in range(len(meals))]
    base = datetime(2012, 4, 3)
    lines = []
    for u in range(n_users):
        count = max(5, int(rng.poisson(checkins_per_user)))
        favourites: dict[int, list[int]] = {}
        for _ in range(count):
            mi = int(rng.choice(len(meals), p=habits[u]))
            peak, spread, _share = _MEALS[meals[mi]]
            local = (peak + rng.normal(0, spread)) % 24.0
            cands = by_meal[mi]
            fav = favourites.setdefault(mi, [])
            if fav and rng.random() < 0.35:
                v = int(rng.choice(fav))
            else:
                affinity = taste_v[cands] @ (taste_u[u] + 0.8 * meal_v[mi]) / np.sqrt(latent_dim)
                logits = 2.0 * affinity + np.log(popularity[cands])
                p = np.exp(logits - logits.max())
                v = int(rng.choice(cands, p=p / p.sum()))
                fav.append(v)
            utc = (local - utc_offset_hours) % 24.0
            minute = int(utc * 60) % 1440
            day = int(rng.integers(0, 300))
            ts = base.fromordinal(base.toordinal() + day).replace(hour=minute // 60, minute=minute % 60,
                                                                  second=int(rng.integers(60)))
            cat = _CATEGORY_NAMES[v % len(_CATEGORY_NAMES)]
            lines.append("\t".join([
                str(u + 1), f"{v:024x}", f"4bf58dd8d48988d1{v % 100:02d}941735", cat,
                f"{40.7 + rng.normal(0, 0.05):.6f}", f"{-74.0 + rng.normal(0, 0.05):.6f}",
                str(utc_offset_hours * 60), ts.strftime("%a %b %d %H:%M:%S +0000 %Y")]))
    out = Path(path)
    out.write_text("\n".join(lines) + "\n")
    return out
