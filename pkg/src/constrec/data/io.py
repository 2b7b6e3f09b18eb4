"""Canonical on-disk format: JSON-lines records plus feature and manifest documents."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..constraints import FeatureMap, InteractionTensor


@dataclass
class DatasetManifest:
    m: int
    n: int
    d: int
    user_ids: list = field(default_factory=list)  # contiguous id -> original id
    item_ids: list = field(default_factory=list)
    splits: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def user_index(self) -> dict:
        return {orig: new for new, orig in enumerate(self.user_ids)}

    def item_index(self) -> dict:
        return {orig: new for new, orig in enumerate(self.item_ids)}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> DatasetManifest:
        return cls(**doc)


def remap_ids(values) -> tuple[np.ndarray, list]:
    """Map arbitrary ids onto ``0..k-1`` in order of first appearance."""
    table: dict = {}
    out = np.empty(len(values), dtype=np.int64)
    for pos, v in enumerate(values):
        out[pos] = table.setdefault(v, len(table))
    return out, list(table)


def record_lines(data: InteractionTensor) -> list[str]:
    lines = []
    active = [np.flatnonzero(row).tolist() for row in data.catalog]
    for u, i, q, r, w in zip(data.users.tolist(), data.items.tolist(), data.cids.tolist(),
                             data.rewards.tolist(), data.weights.tolist()):
        lines.append(json.dumps({"user": u, "item": i, "constraint_bits": active[q],
                                 "reward": r, "weight": w}))
    return lines


def write_jsonl(data: InteractionTensor, path: str | Path) -> None:
    lines = record_lines(data)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_jsonl(path: str | Path, m: int, n: int, d: int) -> InteractionTensor:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            records.append((doc["user"], doc["item"], doc["constraint_bits"],
                            doc["reward"], doc.get("weight", 1.0)))
    return InteractionTensor.from_records(records, m, n, d)


def features_to_dict(features: FeatureMap) -> dict:
    return {"n": features.n, "d": features.d,
            "rows": [np.flatnonzero(r).tolist() for r in features.rows]}


def features_from_dict(doc: dict) -> FeatureMap:
    rows = np.zeros((doc["n"], doc["d"]), dtype=np.uint8)
    for i, active in enumerate(doc["rows"]):
        rows[i, active] = 1
    return FeatureMap(rows)


def digest(*parts: bytes | str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode() if isinstance(p, str) else p)
        h.update(b"\x00")
    return h.hexdigest()


def data_hash(data: InteractionTensor, features: FeatureMap | None = None) -> str:
    parts = ["\n".join(record_lines(data))]
    if features is not None:
        parts.append(json.dumps(features_to_dict(features), sort_keys=True))
    return digest(*parts)


def save_dataset(out_dir: str | Path, data: InteractionTensor, features: FeatureMap,
                 manifest: DatasetManifest, extra: dict | None = None) -> Path:
    """Write ``records.jsonl``, ``features.json`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(data, out / "records.jsonl")
    doc = features_to_dict(features)
    if extra:
        doc["extra"] = extra
    (out / "features.json").write_text(json.dumps(doc, sort_keys=True))
    man = manifest.to_dict()
    man["hash"] = data_hash(data, features)
    (out / "manifest.json").write_text(json.dumps(man, sort_keys=True, indent=1))
    return out


def load_dataset(in_dir: str | Path) -> tuple[InteractionTensor, FeatureMap, DatasetManifest, dict]:
    src = Path(in_dir)
    man_doc = json.loads((src / "manifest.json").read_text())
    man_doc.pop("hash", None)
    manifest = DatasetManifest.from_dict(man_doc)
    feat_doc = json.loads((src / "features.json").read_text())
    extra = feat_doc.pop("extra", {})
    features = features_from_dict(feat_doc)
    data = read_jsonl(src / "records.jsonl", manifest.m, manifest.n, manifest.d)
    return data, features, manifest, extra
