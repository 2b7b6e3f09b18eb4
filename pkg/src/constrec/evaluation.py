"""AUC, context slices, constraint-aware test negatives and folding summaries."""

from __future__ import annotations

import csv
import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .constraints import InteractionTensor, item_bit_matrix, user_bit_matrix


class UndefinedMetricError(ValueError):
    pass


class InfeasibleSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoredPair:
    score: float
    label: int
    tags: frozenset = field(default_factory=frozenset)


def auc(scores, labels=None) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Accepts either a sequence of ``ScoredPair`` or parallel score/label arrays.
    """
    if labels is None:
        pairs = list(scores)
        scores = np.array([p.score for p in pairs], dtype=np.float64)
        labels = np.array([p.label for p in pairs])
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks: ties share the midpoint
    u_stat = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


def sliced_auc(scores, labels, mask, name: str = "slice") -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise UndefinedMetricError(f"slice {name!r} is empty")
    try:
        return auc(np.asarray(scores)[mask], np.asarray(labels)[mask])
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(f"slice {name!r}: {exc}") from None


@dataclass
class EvalSet:
    """Labelled test pairs sharing one constraint catalog, plus boolean slice tags."""

    users: np.ndarray
    items: np.ndarray
    cids: np.ndarray
    catalog: np.ndarray
    labels: np.ndarray
    tags: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.users.size)

    @classmethod
    def from_bits(cls, users, items, bits, labels, tags=None) -> EvalSet:
        catalog, cids = np.unique(np.asarray(bits, dtype=np.uint8), axis=0, return_inverse=True)
        return cls(np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64),
                   np.asarray(cids).reshape(-1), catalog, np.asarray(labels, dtype=np.int64),
                   dict(tags or {}))

    def scores(self, model) -> np.ndarray:
        return model.predict(self.users, self.items, self.catalog, self.cids)

    def slice_mask(self, name: str) -> np.ndarray:
        if name == "global":
            return np.ones(len(self), dtype=bool)
        if name not in self.tags:
            raise KeyError(f"unknown slice {name!r}")
        return self.tags[name]

    def evaluate(self, scores: np.ndarray, slices: Sequence[str]) -> list[dict]:
        rows = []
        for name in slices:
            mask = self.slice_mask(name)
            lab = self.labels[mask]
            rows.append({"slice": name, "auc": sliced_auc(scores, self.labels, mask, name),
                         "n_pos": int(np.sum(lab == 1)), "n_neg": int(np.sum(lab != 1))})
        return rows

    def to_lines(self) -> list[str]:
        active = [np.flatnonzero(r).tolist() for r in self.catalog]
        names = sorted(self.tags)
        out = []
        for t in range(len(self)):
            out.append(json.dumps({
                "user": int(self.users[t]), "item": int(self.items[t]),
                "constraint_bits": active[self.cids[t]], "label": int(self.labels[t]),
                "tags": [n for n in names if self.tags[n][t]]}))
        return out

    def save(self, path: str | Path, d: int) -> None:
        header = json.dumps({"d": d, "tags": sorted(self.tags)})
        Path(path).write_text("\n".join([header, *self.to_lines()]) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> EvalSet:
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        d, names = head["d"], head["tags"]
        docs = [json.loads(x) for x in lines[1:] if x.strip()]
        bits = np.zeros((len(docs), d), dtype=np.uint8)
        for t, doc in enumerate(docs):
            bits[t, doc["constraint_bits"]] = 1
        tags = {n: np.array([n in doc["tags"] for doc in docs], dtype=bool) for n in names}
        return cls.from_bits([x["user"] for x in docs], [x["item"] for x in docs], bits,
                             [x["label"] for x in docs], tags)


def make_test_negatives_timebucket(positives: InteractionTensor, observed: InteractionTensor,
                                   ratio: float, seed: int,
                                   tagger: Callable[[np.ndarray], dict[str, np.ndarray]] | None = None
                                   ) -> EvalSet:
    """Positives plus ``ratio`` negatives each, eligible only by observation absence.

    A negative for a positive under window ``c`` pairs a random item never
    observed in any bucket of ``c`` with a random user never observed in any
    bucket of ``c`` (presence taken from ``observed``).  Negatives inherit the
    constraint, and hence the slice tags, of their positive.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    rng = np.random.default_rng(seed)
    user_seen = user_bit_matrix(observed)
    item_seen = item_bit_matrix(observed)
    n_pos = len(positives)
    n_neg = int(round(ratio * n_pos))
    source = np.arange(n_neg) % n_pos
    cids = positives.cids[source]
    neg_u = np.empty(n_neg, dtype=np.int64)
    neg_i = np.empty(n_neg, dtype=np.int64)
    for q in np.unique(cids):
        slots = np.flatnonzero(cids == q)
        c = positives.catalog[q].astype(np.int64)
        ok_u = np.flatnonzero(user_seen @ c == 0)
        ok_i = np.flatnonzero(item_seen @ c == 0)
        if ok_u.size == 0 or ok_i.size == 0:
            raise InfeasibleSamplingError(
                f"no eligible {'users' if ok_u.size == 0 else 'items'} for constraint bits "
                f"{np.flatnonzero(c).tolist()} ({slots.size} negatives requested)")
        neg_u[slots] = rng.choice(ok_u, slots.size)
        neg_i[slots] = rng.choice(ok_i, slots.size)
    bits = np.concatenate([positives.record_bits(), positives.catalog[cids]])
    users = np.concatenate([positives.users, neg_u])
    items = np.concatenate([positives.items, neg_i])
    labels = np.r_[np.ones(n_pos, dtype=np.int64), np.zeros(n_neg, dtype=np.int64)]
    tags = tagger(bits) if tagger is not None else {}
    return EvalSet.from_bits(users, items, bits, labels, tags)


@dataclass
class SeedSummary:
    per_seed: dict
    mean: float
    std: float
    fraction_at_or_below_half: float

    def to_dict(self) -> dict:
        return {"per_seed": {str(k): v for k, v in self.per_seed.items()}, "mean": self.mean,
                "std": self.std, "fraction_at_or_below_half": self.fraction_at_or_below_half}


def summarize_seeds(per_seed: dict) -> SeedSummary:
    """Mean, sample standard deviation (ddof=1) and share of seeds with AUC <= 0.5."""
    values = np.array([per_seed[s] for s in sorted(per_seed)], dtype=np.float64)
    if values.size == 0:
        raise ValueError("no seeds to summarize")
    if np.any((values < 0) | (values > 1)):
        raise ValueError("AUC values must lie in [0, 1]")
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return SeedSummary(dict(per_seed), float(values.mean()), std,
                       float(np.mean(values <= 0.5)))


def folding_report(per_seed: dict) -> SeedSummary:
    if len(per_seed) < 2:
        raise ValueError("folding report needs at least two seeds")
    return summarize_seeds(per_seed)


METRIC_COLUMNS = ("dataset", "model", "seed", "slice", "auc", "n_pos", "n_neg", "iteration")


def write_metrics_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            out = {k: row[k] for k in METRIC_COLUMNS}
            out["auc"] = repr(float(row["auc"]))
            writer.writerow(out)


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["seed"] = int(row["seed"])
        row["auc"] = float(row["auc"])
        row["n_pos"] = int(row["n_pos"])
        row["n_neg"] = int(row["n_neg"])
        row["iteration"] = int(row["iteration"])
    return rows
