"""Synthetic click data with rarely-overlapping brand constraints.

Brands are grouped into families.  A session's constraint is a single brand
or, with probability ``multi_prob``, two brands of the same family; the
probability is tuned so that two independently drawn distinct constraints
share a brand with probability ``overlap_prob``.  Users favour a couple of
families, so the same user picks several brands of a family across sessions.
Context effects are multiplicative and shared within a family; clicks
threshold a noisy ground-truth score.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..constraints import FeatureMap, InteractionTensor
from ..nn import ConfigurationError


@dataclass
class SyntheticConfig:
    m: int = 11655
    n: int = 2564
    d: int = 363
    overlap_prob: float = 0.005
    seed: int = 0
    family_size: int = 4
    latent_dim: int = 8
    sessions_per_user: float = 3.0
    items_per_session: int = 8
    favourite_families: int = 2
    favourite_prob: float = 0.85
    click_rate: float = 0.15
    noise: float = 0.3
    effect_spread: float = 1.0
    brand_effect_noise: float = 0.2

    @classmethod
    def from_dict(cls, doc: dict | None) -> SyntheticConfig:
        return cls(**(doc or {}))


@dataclass
class GroundTruth:
    U: np.ndarray
    P: np.ndarray
    A: np.ndarray  # (latent_dim, d) per-brand multiplicative effects
    family: np.ndarray  # brand -> family
    multi_prob: float


@dataclass
class SyntheticData:
    data: InteractionTensor
    features: FeatureMap
    truth: GroundTruth
    sessions: np.ndarray  # session id per record


def _families(d: int, size: int) -> list[np.ndarray]:
    if size < 2:
        raise ConfigurationError("family_size must be at least 2")
    count = max(1, d // size)
    fam = np.arange(d) % count
    return [np.flatnonzero(fam == f) for f in range(count)]


def constraint_distribution(d: int, families: list[np.ndarray], multi_prob: float
                            ) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Exact marginal over constraints when families and brands are picked uniformly."""
    keys: list[tuple[int, ...]] = []
    probs: list[float] = []
    nf = len(families)
    for fam in families:
        for j in fam:
            keys.append((int(j),))
            probs.append((1 - multi_prob) / nf / fam.size)
        pairs = list(combinations(fam.tolist(), 2))
        for pair in pairs:
            keys.append(pair)
            probs.append(multi_prob / nf / len(pairs))
    return keys, np.array(probs)


def overlap_rate(keys: list[tuple[int, ...]], probs: np.ndarray) -> float:
    """P(c1 . c2 > 0 | c1 != c2) for two independent draws."""
    live = probs > 0
    keys = [k for k, ok in zip(keys, live) if ok]
    probs = probs[live]
    sets = [set(k) for k in keys]
    hit = 0.0
    distinct = 1.0 - float(np.sum(probs ** 2))
    if distinct <= 0:
        return 0.0
    by_bit: dict[int, list[int]] = {}
    for idx, s in enumerate(sets):
        for j in s:
            by_bit.setdefault(j, []).append(idx)
    for a, s in enumerate(sets):
        partners = {b for j in s for b in by_bit[j] if b != a}
        hit += probs[a] * sum(probs[b] for b in partners)
    return hit / distinct


def tune_multi_prob(d: int, families: list[np.ndarray], target: float) -> float:
    if not 0.0 <= target <= 1.0:
        raise ConfigurationError("overlap_prob must lie in [0, 1]")
    if target == 0.0:
        return 0.0
    top = overlap_rate(*constraint_distribution(d, families, 1.0))
    if target > top + 1e-12:
        raise ConfigurationError(
            f"overlap_prob={target} infeasible for d={d}; at most {top:.4f} with this family layout")
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if overlap_rate(*constraint_distribution(d, families, mid)) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def synth_low_overlap(config: SyntheticConfig | dict | None = None) -> SyntheticData:
    cfg = config if isinstance(config, SyntheticConfig) else SyntheticConfig.from_dict(config)
    rng = np.random.default_rng(cfg.seed)
    families = _families(cfg.d, cfg.family_size)
    multi_prob = tune_multi_prob(cfg.d, families, cfg.overlap_prob)
    nf = len(families)
    family_of = np.empty(cfg.d, dtype=np.int64)
    for f, fam in enumerate(families):
        family_of[fam] = f

    k = cfg.latent_dim
    U = rng.normal(0, 1, (cfg.m, k)) / np.sqrt(k)
    P = rng.normal(0, 1, (cfg.n, k))
    fam_effect = 1.0 + cfg.effect_spread * rng.normal(0, 1, (k, nf))
    A = fam_effect[:, family_of] + cfg.brand_effect_noise * rng.normal(0, 1, (k, cfg.d))
    brand = np.concatenate([np.arange(cfg.d), rng.integers(0, cfg.d, max(0, cfg.n - cfg.d))])[:cfg.n]
    brand = rng.permutation(brand)
    frows = np.zeros((cfg.n, cfg.d), dtype=np.uint8)
    frows[np.arange(cfg.n), brand] = 1
    items_of_brand = [np.flatnonzero(brand == j) for j in range(cfg.d)]

    users, items, bits_list, scores, sessions = [], [], [], [], []
    sid = 0
    for u in range(cfg.m):
        favs = rng.choice(nf, size=min(cfg.favourite_families, nf), replace=False)
        for _ in range(max(1, int(rng.poisson(cfg.sessions_per_user)))):
            f = int(rng.choice(favs)) if rng.random() < cfg.favourite_prob else int(rng.integers(nf))
            fam = families[f]
            if fam.size >= 2 and rng.random() < multi_prob:
                chosen = rng.choice(fam, 2, replace=False)
            else:
                chosen = rng.choice(fam, 1)
            cands = np.concatenate([items_of_brand[j] for j in chosen])
            if cands.size == 0:
                continue
            shown = rng.choice(cands, min(cfg.items_per_session, cands.size), replace=False)
            a = A[:, chosen].mean(axis=1)
            s = (U[u] * a) @ P[shown].T
            for i, val in zip(shown, s):
                users.append(u)
                items.append(int(i))
                bits_list.append(tuple(sorted(int(j) for j in chosen)))
                scores.append(val)
                sessions.append(sid)
            sid += 1
    scores = np.array(scores) + cfg.noise * rng.normal(0, 1, len(scores)) * np.std(scores)
    threshold = np.quantile(scores, 1.0 - cfg.click_rate)
    rewards = (scores > threshold).astype(np.float64)
    catalog_keys = sorted(set(bits_list))
    index = {key: q for q, key in enumerate(catalog_keys)}
    catalog = np.zeros((len(catalog_keys), cfg.d), dtype=np.uint8)
    for q, key in enumerate(catalog_keys):
        catalog[q, list(key)] = 1
    data = InteractionTensor(np.array(users), np.array(items),
                             np.array([index[b] for b in bits_list]), rewards,
                             np.ones(len(users)), catalog, cfg.m, cfg.n,
                             {"generator": "synth_low_overlap", "multi_prob": multi_prob})
    return SyntheticData(data, FeatureMap(frows), GroundTruth(U, P, A, family_of, multi_prob),
                         np.array(sessions, dtype=np.int64))


def sample_constraint_pairs(data: InteractionTensor, count: int, seed: int) -> np.ndarray:
    """Overlap indicator for ``count`` random record pairs with distinct constraints."""
    rng = np.random.default_rng(seed)
    out = np.empty(count, dtype=bool)
    got = 0
    if data.catalog.shape[0] < 2:
        raise ValueError("need at least two distinct constraints")
    while got < count:
        a, b = rng.integers(0, len(data), 2)
        qa, qb = data.cids[a], data.cids[b]
        if qa == qb:
            continue
        out[got] = bool(np.dot(data.catalog[qa].astype(int), data.catalog[qb].astype(int)) > 0)
        got += 1
    return out
