"""Multi-seed sweeps of model variants over the three data regimes.

A run prepares one regime per split seed (training data, persisted test
pairs, slice tags), trains every requested model for every seed, scores the
shared test pairs after each training iteration and writes:

* ``metrics.csv``: one row per (model, seed, iteration, slice);
* ``eval/split_<s>.jsonl``: the persisted test pairs;
* ``runs/<model>/seed_<s>/model.json`` and ``trace.csv``;
* ``report.json``: summaries, learning curves, comparison table, hashes.

Nothing time- or host-dependent enters ``report.json``, so reruns with the
same inputs produce identical bytes.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .constraints import (
    CooccurrenceStats,
    FeatureMap,
    InteractionTensor,
    build_cooccurrence,
    item_bit_matrix,
)
from .data.foursquare import SubsetConfig, TimeBucketScheme, load_foursquare
from .data.io import DatasetManifest, data_hash, digest, load_dataset
from .data.movielens import (
    build_folding_split,
    load_movielens,
    movielens_extra,
    movielens_from_saved,
)
from .data.synthetic import SyntheticConfig, synth_low_overlap
from .evaluation import (
    EvalSet,
    UndefinedMetricError,
    make_test_negatives_timebucket,
    summarize_seeds,
    write_metrics_csv,
)
from .models import LINEAR_VARIANTS, NEURAL_VARIANTS, SideInfo, model_to_dict
from .nn import ConstraintFeatureMapG
from .training import (
    TrainConfig,
    balanced_class_weights,
    fit_linear,
    fit_neural,
    reweight_classes,
    sample_training_negatives,
)

logger = logging.getLogger(__name__)

DATASETS = ("foursquare", "movielens", "synthetic")
ENLARGED_MF = "MF+data-enlargement"
MODELS = (*LINEAR_VARIANTS, *NEURAL_VARIANTS, ENLARGED_MF)
REPORT_FORMAT = "constrec-report"

FOURSQUARE_SLICES = {"08-09": (8, 9), "12-13": (12, 13), "22-23": (22, 23)}

REGIME_DEFAULTS = {
    "foursquare": {
        "slices": ["global", "08-09", "12-13", "22-23"],
        "rare_slices": ["08-09", "12-13"],
        "popular_slices": ["22-23"],
        "default_seeds": 20,
        "model_train": {"DC-MF": {"warm_start": "feature_overlap"}},
    },
    "synthetic": {
        "slices": ["global", "multi_brand", "feature_similarity"],
        "rare_slices": ["multi_brand"],
        "popular_slices": [],
        "default_seeds": 10,
        "model_train": {"DC-MF": {"warm_start": "cooccurrence",
                                  "cooccurrence_reg_strength": 1.0}},
    },
    "movielens": {
        "slices": ["horror", "thriller"],
        "rare_slices": [],
        "popular_slices": [],
        "default_seeds": 10,
        "model_train": {},
    },
}


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    dataset: str
    models: list[str]
    seeds: list[int]
    name: str = "experiment"
    data: str | None = None  # canonical dataset directory written by ``ingest``
    source: dict | None = None  # raw input ({"path", "subset"}) or synthetic generator config
    train: dict = field(default_factory=dict)
    model_train: dict = field(default_factory=dict)
    slices: list[str] | None = None
    rare_slices: list[str] | None = None
    popular_slices: list[str] | None = None
    split_seed: int | None = 0  # None: a fresh split per model seed
    test_fraction: float = 0.2
    test_negative_ratio: float = 1.0
    train_negative_ratio: float = 1.0
    eval_every_iteration: bool = True
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dataset not in DATASETS:
            raise SpecError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if not self.models:
            raise SpecError("at least one model is required")
        unknown = [m for m in self.models if m not in MODELS]
        if unknown:
            raise SpecError(f"unknown models {unknown}; choose from {MODELS}")
        if len(set(self.models)) != len(self.models):
            raise SpecError("duplicate model names")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise SpecError("seeds must be a nonempty list of distinct integers")
        if self.dataset != "movielens":
            towers = [m for m in self.models if m in ("NN-MF", "NC-NN-MF")]
            if towers:
                raise SpecError(f"{towers} need user/item side features, available for movielens only")
        if ENLARGED_MF in self.models and self.dataset != "foursquare":
            raise SpecError(f"{ENLARGED_MF} samples time-bucket negatives and needs foursquare data")
        if self.data is None and self.source is None and self.dataset != "synthetic":
            raise SpecError("either 'data' (ingested directory) or 'source' is required")
        if not 0.0 < self.test_fraction < 1.0:
            raise SpecError("test_fraction must lie in (0, 1)")
        if self.test_negative_ratio <= 0 or self.train_negative_ratio < 0:
            raise SpecError("negative ratios must be positive (test) and nonnegative (train)")
        if self.workers < 1:
            raise SpecError("workers must be at least 1")
        for model in self.model_train:
            if model not in self.models:
                raise SpecError(f"model_train lists {model!r}, which is not in models")
        for model in self.models:
            self.train_config(model, self.seeds[0])  # raises on bad fields

    @property
    def regime(self) -> dict:
        return REGIME_DEFAULTS[self.dataset]

    @property
    def slice_names(self) -> list[str]:
        return list(self.slices if self.slices is not None else self.regime["slices"])

    def slice_groups(self) -> tuple[list[str], list[str]]:
        rare = self.rare_slices if self.rare_slices is not None else self.regime["rare_slices"]
        popular = (self.popular_slices if self.popular_slices is not None
                   else self.regime["popular_slices"])
        names = set(self.slice_names)
        return [s for s in rare if s in names], [s for s in popular if s in names]

    def train_config(self, model: str, seed: int) -> TrainConfig:
        doc = dict(self.train)
        doc.update(self.regime["model_train"].get(model, {}))
        doc.update(self.model_train.get(model, {}))
        doc["seed"] = int(seed)
        try:
            return TrainConfig.from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise SpecError(f"bad training config for {model}: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path | None = None) -> ExperimentSpec:
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown experiment spec fields: {sorted(unknown)}")
        for key in ("dataset", "models"):
            if key not in doc:
                raise SpecError(f"experiment spec needs {key!r}")
        if doc["dataset"] not in DATASETS:
            raise SpecError(f"dataset must be one of {DATASETS}, got {doc['dataset']!r}")
        doc.setdefault("seeds", list(range(REGIME_DEFAULTS[doc["dataset"]]["default_seeds"])))
        if base_dir is not None:
            base = Path(base_dir)
            if doc.get("data"):
                doc["data"] = str((base / doc["data"]).resolve())
            src = doc.get("source")
            if src and src.get("path"):
                doc["source"] = dict(src, path=str((base / src["path"]).resolve()))
        doc["models"] = list(doc["models"])
        doc["seeds"] = [int(s) for s in doc["seeds"]]
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentSpec:
        p = Path(path)
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{p}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, p.parent)

    def config_hash(self) -> str:
        """Hash of every field that can change results (paths and worker count excluded)."""
        doc = self.to_dict()
        for key in ("data", "workers", "name"):
            doc.pop(key)
        if doc.get("source"):
            doc["source"] = {k: v for k, v in doc["source"].items() if k != "path"}
        resolved = {m: self.train_config(m, 0).to_dict() for m in self.models}
        return digest(json.dumps([doc, resolved], sort_keys=True))


# -- dataset loading -----------------------------------------------------------------


@dataclass
class LoadedData:
    dataset: str
    data: InteractionTensor
    features: FeatureMap
    manifest: DatasetManifest
    extra: dict

    @property
    def hash(self) -> str:
        return digest(data_hash(self.data, self.features), json.dumps(self.extra, sort_keys=True))


def load_spec_data(spec: ExperimentSpec) -> LoadedData:
    if spec.data is not None:
        data, features, manifest, extra = load_dataset(spec.data)
        return LoadedData(spec.dataset, data, features, manifest, extra)
    src = dict(spec.source or {})
    if spec.dataset == "foursquare":
        cd = load_foursquare(src["path"], SubsetConfig.from_dict(src.get("subset")))
        return LoadedData(spec.dataset, cd.data, cd.features, cd.manifest, {})
    if spec.dataset == "movielens":
        ml = load_movielens(src["path"])
        return LoadedData(spec.dataset, ml.data, ml.features, ml.manifest, movielens_extra(ml))
    sd = synth_low_overlap(SyntheticConfig.from_dict(src))
    manifest = DatasetManifest(sd.data.m, sd.data.n, sd.data.d, notes={"generator": src})
    return LoadedData(spec.dataset, sd.data, sd.features, manifest,
                      {"sessions": sd.sessions.tolist()})


# -- regimes -------------------------------------------------------------------------


@dataclass
class Regime:
    """Everything a (model, seed) run needs; shared by all models of a split."""

    train: InteractionTensor
    features: FeatureMap
    eval_set: EvalSet
    gmap: ConstraintFeatureMapG
    stats: CooccurrenceStats | None = None
    side: SideInfo | None = None
    transform_side_cols: tuple[int, ...] = ()
    enlarged: InteractionTensor | None = None
    info: dict = field(default_factory=dict)


def foursquare_tagger(scheme: TimeBucketScheme | None = None):
    scheme = scheme or TimeBucketScheme()
    ranges = {name: scheme.bucket_range(*hours) for name, hours in FOURSQUARE_SLICES.items()}

    def tag(bits: np.ndarray) -> dict[str, np.ndarray]:
        unique, inverse = np.unique(bits, axis=0, return_inverse=True)
        centers = np.array([scheme.window_center(row) for row in unique])[np.asarray(inverse).ravel()]
        return {name: (centers >= r.start) & (centers < r.stop) for name, r in ranges.items()}

    return tag


def _foursquare_regime(loaded: LoadedData, spec: ExperimentSpec, split_seed: int) -> Regime:
    data = loaded.data
    if not np.all(data.rewards == 1.0):
        raise SpecError("foursquare regime expects a positives-only check-in tensor")
    rng = np.random.default_rng(split_seed)
    is_test = rng.random(len(data)) < spec.test_fraction
    train_pos = data.subset(np.flatnonzero(~is_test))
    seen_u = np.zeros(data.m, dtype=bool)
    seen_i = np.zeros(data.n, dtype=bool)
    seen_u[train_pos.users] = True
    seen_i[train_pos.items] = True
    test_rows = np.flatnonzero(is_test & seen_u[data.users] & seen_i[data.items])
    test_pos = data.subset(test_rows)
    features = FeatureMap(np.minimum(item_bit_matrix(train_pos), 1).astype(np.uint8))
    eval_set = make_test_negatives_timebucket(test_pos, data, spec.test_negative_ratio,
                                              split_seed, foursquare_tagger())
    train = sample_training_negatives(train_pos, "uniform", spec.train_negative_ratio, split_seed)
    enlarged = None
    if ENLARGED_MF in spec.models:
        enlarged = sample_training_negatives(train_pos, "time_bucket", spec.train_negative_ratio,
                                             split_seed)
    info = {"train_positives": len(train_pos), "test_positives": len(test_pos),
            "dropped_cold_test": int(is_test.sum()) - len(test_pos),
            "warnings": list(train.meta.get("warnings", [])) + (
                list(enlarged.meta.get("warnings", [])) if enlarged is not None else [])}
    return Regime(train, features, eval_set, ConstraintFeatureMapG(data.d), enlarged=enlarged,
                  info=info)


def feature_similarity_brands(train: InteractionTensor, share: float = 0.5) -> np.ndarray:
    """Brands whose training selections come mostly from multi-brand constraints."""
    bits = train.record_bits().astype(np.int64)
    multi = bits.sum(axis=1) >= 2
    total = bits.sum(axis=0)
    in_multi = bits[multi].sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(total > 0, in_multi / np.maximum(total, 1), 0.0)
    return (total > 0) & (frac >= share)


def _synthetic_regime(loaded: LoadedData, spec: ExperimentSpec, split_seed: int) -> Regime:
    data = loaded.data
    if "sessions" not in loaded.extra:
        raise SpecError("synthetic dataset lacks session ids; re-run ingest")
    sessions = np.asarray(loaded.extra["sessions"], dtype=np.int64)
    rng = np.random.default_rng(split_seed)
    uniq = np.unique(sessions)
    test_sessions = uniq[rng.random(uniq.size) < spec.test_fraction]
    is_test = np.isin(sessions, test_sessions)
    train = data.subset(np.flatnonzero(~is_test))
    test = data.subset(np.flatnonzero(is_test))
    pw, nw = balanced_class_weights(train)
    train = reweight_classes(train, pw, nw)
    stats = build_cooccurrence(train)
    bits = test.record_bits()
    single = bits.sum(axis=1) == 1
    sim_brands = feature_similarity_brands(train)
    tags = {"multi_brand": ~single,
            "feature_similarity": single & (bits.astype(bool) & sim_brands[None, :]).any(axis=1)}
    eval_set = EvalSet.from_bits(test.users, test.items, bits,
                                 (test.rewards == 1.0).astype(np.int64), tags)
    info = {"train_records": len(train), "test_records": len(test),
            "class_weights": [pw, nw], "feature_similarity_brands": int(sim_brands.sum())}
    return Regime(train, loaded.features, eval_set, ConstraintFeatureMapG(data.d), stats=stats,
                  info=info)


def _movielens_regime(loaded: LoadedData, spec: ExperimentSpec, split_seed: int) -> Regime:
    ml = movielens_from_saved(loaded.data, loaded.features, loaded.manifest, loaded.extra)
    split = build_folding_split(ml, seed=split_seed, test_fraction=spec.test_fraction,
                                kid_negative_ratio=spec.test_negative_ratio)
    h, t = split.horror_test, split.thriller_test
    nh, nt = len(h), len(t)
    tags = {"horror": np.r_[np.ones(nh, bool), np.zeros(nt, bool)],
            "thriller": np.r_[np.zeros(nh, bool), np.ones(nt, bool)]}
    eval_set = EvalSet.from_bits(np.r_[h.users, t.users], np.r_[h.items, t.items],
                                 np.vstack([h.bits, t.bits]),
                                 np.r_[h.labels, t.labels].astype(np.int64), tags)
    info = {"train_records": len(split.train), "horror_group_users": int(split.horror_users.size),
            "horror_test": nh, "thriller_test": nt}
    return Regime(split.train, ml.features, eval_set, ml.gmap(), side=ml.side_info(),
                  transform_side_cols=(0,), info=info)


_REGIMES = {"foursquare": _foursquare_regime, "synthetic": _synthetic_regime,
            "movielens": _movielens_regime}


def prepare_regime(loaded: LoadedData, spec: ExperimentSpec, split_seed: int) -> Regime:
    regime = _REGIMES[spec.dataset](loaded, spec, split_seed)
    for name in spec.slice_names:
        mask = regime.eval_set.slice_mask(name)
        lab = regime.eval_set.labels[mask]
        if not (np.any(lab == 1) and np.any(lab != 1)):
            raise SpecError(f"slice {name!r} has {int(np.sum(lab == 1))} positives and "
                            f"{int(np.sum(lab != 1))} negatives for split seed {split_seed}; "
                            "AUC is undefined")
    return regime


# -- single runs ---------------------------------------------------------------------


def _run_one(spec: ExperimentSpec, regime: Regime, model_name: str, seed: int,
             out_dir: Path | None) -> dict:
    config = spec.train_config(model_name, seed)
    variant = "MF" if model_name == ENLARGED_MF else model_name
    data = regime.enlarged if model_name == ENLARGED_MF else regime.train
    slices = spec.slice_names
    rows: list[dict] = []

    def evaluate(it: int, model) -> None:
        if not spec.eval_every_iteration and it != config.iterations:
            return
        scores = regime.eval_set.scores(model)
        for res in regime.eval_set.evaluate(scores, slices):
            rows.append({"dataset": spec.dataset, "model": model_name, "seed": seed,
                         "iteration": it, **res})

    if variant in LINEAR_VARIANTS:
        model, trace = fit_linear(variant, data, config, regime.features, regime.stats,
                                  callback=evaluate)
    else:
        model, trace = fit_neural(variant, data, config, regime.gmap, regime.side,
                                  regime.transform_side_cols, callback=evaluate)
    if out_dir is not None:
        run_dir = out_dir / "runs" / model_name / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        doc = model_to_dict(model)
        doc["meta"] = {"model": model_name, "seed": seed, "dataset": spec.dataset}
        (run_dir / "model.json").write_text(json.dumps(doc))
        trace.write_csv(run_dir / "trace.csv")
    return {"model": model_name, "seed": seed, "rows": rows,
            "final_loss": trace.iteration_losses[-1],
            "early_stop_iteration": trace.early_stop_iteration,
            "warm_start": trace.warm_start}


def _run_seed(spec: ExperimentSpec, regime: Regime, seed: int, out_dir: Path | None) -> list[dict]:
    results = []
    for model_name in spec.models:
        try:
            results.append(_run_one(spec, regime, model_name, seed, out_dir))
        except (ArithmeticError, ValueError, UndefinedMetricError, np.linalg.LinAlgError) as exc:
            logger.error("run %s seed %d failed: %s", model_name, seed, exc)
            results.append({"model": model_name, "seed": seed,
                            "error": f"{type(exc).__name__}: {exc}"})
    return results


# -- summaries -----------------------------------------------------------------------


def final_rows(rows: list[dict]) -> list[dict]:
    """Rows at each (model, seed)'s last evaluated iteration."""
    last: dict[tuple, int] = {}
    for r in rows:
        key = (r["model"], r["seed"])
        last[key] = max(last.get(key, -1), r["iteration"])
    return [r for r in rows if r["iteration"] == last[(r["model"], r["seed"])]]


def build_summary(rows: list[dict], models: list[str], slices: list[str]) -> dict:
    summary: dict = {}
    for model in models:
        per_slice = {}
        for s in slices:
            per_seed = {r["seed"]: r["auc"] for r in final_rows(rows)
                        if r["model"] == model and r["slice"] == s}
            if per_seed:
                per_slice[s] = summarize_seeds(per_seed).to_dict()
        summary[model] = per_slice
    return summary


def build_curves(rows: list[dict], models: list[str], slices: list[str]) -> dict:
    curves: dict = {}
    for model in models:
        curves[model] = {}
        for s in slices:
            sel = [r for r in rows if r["model"] == model and r["slice"] == s]
            its = sorted({r["iteration"] for r in sel})
            curves[model][s] = [
                {"iteration": it,
                 "mean_auc": float(np.mean([r["auc"] for r in sel if r["iteration"] == it]))}
                for it in its]
    return curves


def compare_models(summary: dict, slices: list[str], rare: list[str] | None = None,
                   popular: list[str] | None = None) -> dict:
    """Models ordered by mean AUC on the leading slice, with ties and slice deltas.

    ``pairs`` lists, for every ordered pair, the per-slice mean difference,
    its pooled standard error ``sqrt(s_a^2/n_a + s_b^2/n_b)`` and, when rare
    and popular slices are given, the mean advantage on each group.
    """
    rare, popular = list(rare or []), list(popular or [])
    key = "global" if "global" in slices else slices[0]
    present = [m for m in summary if key in summary[m]]
    order = sorted(present, key=lambda m: (-summary[m][key]["mean"], m))
    table = []
    for rank, m in enumerate(order, 1):
        row = {"rank": rank, "model": m, "slices": {}}
        for s in slices:
            if s in summary[m]:
                ss = summary[m][s]
                row["slices"][s] = {"mean": ss["mean"], "std": ss["std"],
                                    "n_seeds": len(ss["per_seed"]),
                                    "fraction_at_or_below_half": ss["fraction_at_or_below_half"]}
        if rare and popular:
            row["rare_minus_popular"] = (
                float(np.mean([row["slices"][s]["mean"] for s in rare]))
                - float(np.mean([row["slices"][s]["mean"] for s in popular])))
        table.append(row)
    ties = []
    for m in order:
        group = [x for x in order if summary[x][key]["mean"] == summary[m][key]["mean"]]
        if len(group) > 1 and group not in ties:
            ties.append(group)
    pairs = []
    for a in order:
        for b in order:
            if a == b:
                continue
            entry: dict = {"a": a, "b": b, "diff": {}, "pooled_se": {}}
            for s in slices:
                if s in summary[a] and s in summary[b]:
                    sa, sb = summary[a][s], summary[b][s]
                    entry["diff"][s] = sa["mean"] - sb["mean"]
                    entry["pooled_se"][s] = float(np.sqrt(sa["std"] ** 2 / len(sa["per_seed"])
                                                          + sb["std"] ** 2 / len(sb["per_seed"])))
            if rare and popular and all(s in entry["diff"] for s in rare + popular):
                entry["rare_advantage"] = float(np.mean([entry["diff"][s] for s in rare]))
                entry["popular_advantage"] = float(np.mean([entry["diff"][s] for s in popular]))
            pairs.append(entry)
    return {"sort_slice": key, "table": table, "ties": ties, "pairs": pairs,
            "rare_slices": rare, "popular_slices": popular}


def format_table(comparison: dict) -> str:
    slices = list(comparison["table"][0]["slices"]) if comparison["table"] else []
    head = ["rank", "model", *slices]
    lines = ["\t".join(head)]
    for row in comparison["table"]:
        cells = [str(row["rank"]), row["model"]]
        for s in slices:
            c = row["slices"].get(s)
            cells.append(f"{c['mean']:.4f}±{c['std']:.4f}" if c else "-")
        lines.append("\t".join(cells))
    for group in comparison["ties"]:
        lines.append("tie: " + " = ".join(group))
    return "\n".join(lines)


# -- orchestration -------------------------------------------------------------------


def _seed_job(args):
    spec_doc, regime, seed, out_dir = args
    spec = ExperimentSpec.from_dict(spec_doc)
    return _run_seed(spec, regime, seed, Path(out_dir) if out_dir else None)


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None,
                   loaded: LoadedData | None = None) -> dict:
    """Train and evaluate every (model, seed); return (and persist) the report."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    loaded = loaded or load_spec_data(spec)
    split_seeds = sorted({spec.split_seed if spec.split_seed is not None else s
                          for s in spec.seeds})
    regimes = {s: prepare_regime(loaded, spec, s) for s in split_seeds}
    eval_hashes = {}
    for s, regime in regimes.items():
        lines = "\n".join(regime.eval_set.to_lines())
        eval_hashes[str(s)] = digest(lines)
        if out is not None:
            (out / "eval").mkdir(exist_ok=True)
            regime.eval_set.save(out / "eval" / f"split_{s}.jsonl", loaded.data.d)
    jobs = [(spec.to_dict(), regimes[spec.split_seed if spec.split_seed is not None else seed],
             seed, str(out) if out else None) for seed in spec.seeds]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(spec.workers, len(jobs))) as pool:
            per_seed = list(pool.map(_seed_job, jobs))
    else:
        per_seed = [_seed_job(job) for job in jobs]
    results = [r for batch in per_seed for r in batch]
    rows = [row for r in results if "rows" in r for row in r["rows"]]
    rows.sort(key=lambda r: (spec.models.index(r["model"]), r["seed"], r["iteration"],
                             spec.slice_names.index(r["slice"])))
    failures = [{"model": r["model"], "seed": r["seed"], "error": r["error"]}
                for r in results if "error" in r]
    if out is not None:
        write_metrics_csv(rows, out / "metrics.csv")
    report = assemble_report(spec, loaded, rows, results, failures, regimes, eval_hashes)
    if out is not None:
        (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    return report


def assemble_report(spec, loaded, rows, results, failures, regimes, eval_hashes) -> dict:
    slices = spec.slice_names
    rare, popular = spec.slice_groups()
    summary = build_summary(rows, spec.models, slices)
    runs = {}
    for r in results:
        if "error" in r:
            continue
        runs.setdefault(r["model"], {})[str(r["seed"])] = {
            "final_loss": r["final_loss"], "early_stop_iteration": r["early_stop_iteration"],
            "warm_start": r["warm_start"]}
    return {
        "format": REPORT_FORMAT,
        "version": 1,
        "name": spec.name,
        "dataset": spec.dataset,
        "models": spec.models,
        "seeds": spec.seeds,
        "slices": slices,
        "manifest": {"data_hash": loaded.hash, "config_hash": spec.config_hash(),
                     "eval_hashes": eval_hashes,
                     "dataset": {"m": loaded.data.m, "n": loaded.data.n, "d": loaded.data.d,
                                 "records": len(loaded.data)}},
        "config": {"spec": {k: v for k, v in spec.to_dict().items()
                            if k not in ("data", "workers")},
                   "train": {m: spec.train_config(m, 0).to_dict() for m in spec.models}},
        "regimes": {str(s): r.info for s, r in regimes.items()},
        "summary": summary,
        "curves": build_curves(rows, spec.models, slices),
        "comparison": compare_models(summary, slices, rare, popular) if len(summary) else {},
        "runs": runs,
        "failures": failures,
        "partial": bool(failures),
    }

