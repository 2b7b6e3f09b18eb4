"""Small deterministic toy worlds with expected values.

Each fixture directory holds data in the canonical JSON-lines layout (or the
raw MovieLens layout for the folding world) plus ``expected.json``.  Every
expected value records where it comes from: ``construction`` when the world
was built to have it, or ``oracle`` naming the test-suite check that
confirms it.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .constraints import InteractionTensor
from .data.io import write_jsonl


def _write_expected(path: Path, name: str, seed: int, values: dict) -> None:
    doc = {"fixture": name, "seed": seed, "values": values}
    (path / "expected.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def bucket_world() -> InteractionTensor:
    """Three users, three items, two time buckets.

    User 0 and item 0 live in bucket 0, user 1 and item 1 in bucket 1, user 2
    and item 2 in both.  A negative for a bucket-0 positive can only be
    (user 1, item 1), and vice versa.
    """
    records = [(0, 0, [0], 1.0), (1, 1, [1], 1.0), (2, 2, [0], 1.0), (2, 2, [1], 1.0)]
    return InteractionTensor.from_records(records, 3, 3, 2, meta={"fixture": "bucket_world"})


def realizable_als(seed: int, m: int = 12, n: int = 10, k: int = 3
                   ) -> tuple[InteractionTensor, dict]:
    """Every (user, item) pair rated by an exact rank-``k`` model plus user bias."""
    rng = np.random.default_rng(seed)
    U = rng.uniform(-0.25, 0.25, (m, k))
    P = rng.uniform(-0.25, 0.25, (n, k))
    B = rng.uniform(0.4, 0.6, m)
    S = U @ P.T + B[:, None]
    users, items = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    data = InteractionTensor(users.ravel(), items.ravel(), np.zeros(m * n, dtype=np.int64),
                             S.ravel(), np.ones(m * n), np.ones((1, 1), dtype=np.uint8), m, n,
                             {"fixture": "als_realizable"})
    truth = {"U": U.tolist(), "P": P.tolist(), "B": B.tolist(), "k": k}
    return data, truth


def folding_micro(out_dir: Path, seed: int) -> dict:
    """Twelve users (three kids), ten movies (three horror, two thriller), raw MovieLens layout."""
    rng = np.random.default_rng(seed)
    ages = [9, 11, 13, 25, 31, 44, 52, 19, 38, 27, 60, 35]
    n_items = 10
    horror = {0, 1, 2}
    thriller = {3, 4}
    genre_idx = {"horror": 11, "thriller": 16, "drama": 8}
    lines = []
    for u, age in enumerate(ages):
        allowed = [i for i in range(n_items) if age >= 14 or (i not in horror and i not in thriller)]
        for i in sorted(rng.choice(allowed, size=min(len(allowed), 6), replace=False).tolist()):
            lines.append(f"{u + 1}\t{i + 1}\t{int(rng.integers(1, 6))}\t88125{u:02d}{i:02d}")
    (out_dir / "u.data").write_text("\n".join(lines) + "\n")
    item_lines = []
    for i in range(n_items):
        flags = [0] * 19
        key = "horror" if i in horror else "thriller" if i in thriller else "drama"
        flags[genre_idx[key]] = 1
        item_lines.append(f"{i + 1}|Title {i + 1} (1990)|01-Jan-1990||http://example.invalid|"
                          + "|".join(map(str, flags)))
    (out_dir / "u.item").write_text("\n".join(item_lines) + "\n")
    (out_dir / "u.user").write_text(
        "\n".join(f"{u + 1}|{a}|M|other|00000" for u, a in enumerate(ages)) + "\n")
    return {"ages": ages, "horror_items": sorted(horror), "thriller_items": sorted(thriller)}


def generate_fixtures(out_dir: str | Path, seed: int = 0) -> Path:
    """Write every fixture under ``out_dir``; identical output for identical ``seed``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    d = out / "bucket_world"
    d.mkdir(exist_ok=True)
    write_jsonl(bucket_world(), d / "records.jsonl")
    _write_expected(d, "bucket_world", seed, {
        "m": {"value": 3, "provenance": "construction"},
        "n": {"value": 3, "provenance": "construction"},
        "d": {"value": 2, "provenance": "construction"},
        "eligible_users": {"value": {"0": [1], "1": [0]},
                           "provenance": "oracle: exhaustive eligibility scan"},
        "eligible_items": {"value": {"0": [1], "1": [0]},
                           "provenance": "oracle: exhaustive eligibility scan"},
    })

    d = out / "als_realizable"
    d.mkdir(exist_ok=True)
    data, truth = realizable_als(seed)
    write_jsonl(data, d / "records.jsonl")
    _write_expected(d, "als_realizable", seed, {
        "m": {"value": data.m, "provenance": "construction"},
        "n": {"value": data.n, "provenance": "construction"},
        "k": {"value": truth["k"], "provenance": "construction"},
        "truth": {"value": truth, "provenance": "construction"},
        "loss_bound": {"value": 1e-8, "lambda": 0.0,
                       "provenance": "oracle: per-record loss summation after ALS"},
    })

    d = out / "folding_micro"
    d.mkdir(exist_ok=True)
    layout = folding_micro(d, seed)
    _write_expected(d, "folding_micro", seed, {
        "layout": {"value": layout, "provenance": "construction"},
        "violations": {"value": [], "provenance": "oracle: exhaustive disjointness scan"},
    })

    index = {"seed": seed, "fixtures": ["als_realizable", "bucket_world", "folding_micro"]}
    (out / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Write the toy fixtures.")
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    generate_fixtures(args.out, args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
