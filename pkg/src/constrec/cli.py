"""Command-line entry point: ingest, train, evaluate, experiment, report.

Every command prints a JSON document on success.  On failure the exit code
is nonzero and a JSON error document goes to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .data.foursquare import IngestError, SubsetConfig, load_foursquare
from .data.io import DatasetManifest, save_dataset
from .data.movielens import load_movielens, movielens_extra
from .data.synthetic import SyntheticConfig, synth_low_overlap
from .evaluation import EvalSet, read_metrics_csv, write_metrics_csv
from .experiment import (
    ExperimentSpec,
    SpecError,
    build_summary,
    compare_models,
    format_table,
    run_experiment,
)
from .models import model_from_dict

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return json.loads(p.read_text())


# -- commands ------------------------------------------------------------------------


def cmd_ingest(args) -> dict:
    out = Path(args.out)
    if args.dataset == "foursquare":
        if args.input is None:
            raise UsageError("--input is required for foursquare")
        cd = load_foursquare(args.input, SubsetConfig.from_dict(_read_json(args.subset)))
        save_dataset(out, cd.data, cd.features, cd.manifest)
        notes = cd.manifest.notes
    elif args.dataset == "movielens":
        if args.input is None:
            raise UsageError("--input is required for movielens")
        ml = load_movielens(args.input)
        save_dataset(out, ml.data, ml.features, ml.manifest, movielens_extra(ml))
        notes = ml.manifest.notes
    else:
        cfg = SyntheticConfig.from_dict(_read_json(args.input))
        sd = synth_low_overlap(cfg)
        notes = {"generator": vars(cfg), "multi_prob": sd.truth.multi_prob,
                 "records": len(sd.data), "distinct_constraints": int(sd.data.catalog.shape[0])}
        manifest = DatasetManifest(sd.data.m, sd.data.n, sd.data.d, notes=notes)
        save_dataset(out, sd.data, sd.features, manifest, {"sessions": sd.sessions.tolist()})
        truth = {"U": sd.truth.U.tolist(), "P": sd.truth.P.tolist(), "A": sd.truth.A.tolist(),
                 "family": sd.truth.family.tolist(), "multi_prob": sd.truth.multi_prob}
        (out / "truth.json").write_text(json.dumps(truth))
    return {"command": "ingest", "dataset": args.dataset, "out": str(out),
            "notes": {k: v for k, v in notes.items() if k != "subset"}}


def _single_run_spec(path: str) -> ExperimentSpec:
    p = Path(path)
    doc = _read_json(path)
    if "model" in doc:
        doc["models"] = [doc.pop("model")]
    if "seed" in doc:
        doc["seeds"] = [doc.pop("seed")]
    doc.setdefault("seeds", [0])
    spec = ExperimentSpec.from_dict(doc, p.parent)
    if len(spec.models) != 1 or len(spec.seeds) != 1:
        raise SpecError("train expects exactly one model and one seed; use 'experiment' for sweeps")
    return spec


def cmd_train(args) -> dict:
    spec = _single_run_spec(args.spec)
    out = Path(args.out)
    report = run_experiment(spec, out)
    if report["failures"]:
        raise RuntimeError(report["failures"][0]["error"])
    model, seed = spec.models[0], spec.seeds[0]
    run_dir = out / "runs" / model / f"seed_{seed}"
    shutil.copyfile(run_dir / "model.json", out / "model.json")
    shutil.copyfile(run_dir / "trace.csv", out / "trace.csv")
    return {"command": "train", "model": model, "seed": seed, "out": str(out),
            "final_loss": report["runs"][model][str(seed)]["final_loss"],
            "auc": {s: v["mean"] for s, v in report["summary"][model].items()}}


def _eval_path(path: str) -> Path:
    p = Path(path)
    if p.is_file():
        return p
    candidates = sorted((p / "eval").glob("split_*.jsonl")) if (p / "eval").is_dir() else []
    candidates += sorted(p.glob("*.jsonl")) if p.is_dir() else []
    if len(candidates) != 1:
        raise FileNotFoundError(f"expected exactly one evaluation file under {p}, found {len(candidates)}")
    return candidates[0]


def _slice_list(arg: str | None, eval_set: EvalSet) -> list[str]:
    if arg is None:
        return ["global", *sorted(eval_set.tags)]
    if Path(arg).is_file():
        doc = json.loads(Path(arg).read_text())
        return list(doc["slices"] if isinstance(doc, dict) else doc)
    return [s.strip() for s in arg.split(",") if s.strip()]


def cmd_evaluate(args) -> dict:
    doc = json.loads(Path(args.model).read_text())
    model = model_from_dict(doc)
    eval_set = EvalSet.load(_eval_path(args.data))
    slices = _slice_list(args.slices, eval_set)
    meta = doc.get("meta", {})
    scores = eval_set.scores(model)
    rows = [{"dataset": meta.get("dataset", ""), "model": meta.get("model", doc["variant"]),
             "seed": meta.get("seed", -1), "iteration": -1, **res}
            for res in eval_set.evaluate(scores, slices)]
    write_metrics_csv(rows, args.out)
    return {"command": "evaluate", "out": str(args.out),
            "auc": {r["slice"]: r["auc"] for r in rows}}


def cmd_experiment(args) -> dict:
    spec = ExperimentSpec.load(args.spec)
    if args.workers is not None:
        spec.workers = args.workers
    report = run_experiment(spec, args.out)
    return {"command": "experiment", "out": str(args.out), "partial": report["partial"],
            "failures": report["failures"], "table": format_table(report["comparison"])}


def comparison_from_dir(in_dir: str | Path) -> dict:
    src = Path(in_dir)
    rows = read_metrics_csv(src / "metrics.csv")
    report = json.loads((src / "report.json").read_text())
    summary = build_summary(rows, report["models"], report["slices"])
    cmp_ = report.get("comparison") or {}
    return compare_models(summary, report["slices"], cmp_.get("rare_slices"),
                          cmp_.get("popular_slices"))


def comparison_csv(comparison: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "model", "slice", "mean", "std", "n_seeds", "fraction_at_or_below_half"])
    for row in comparison["table"]:
        for s, c in row["slices"].items():
            writer.writerow([row["rank"], row["model"], s, repr(c["mean"]), repr(c["std"]),
                             c["n_seeds"], repr(c["fraction_at_or_below_half"])])
    return buf.getvalue()


def cmd_report(args) -> dict | str:
    comparison = comparison_from_dir(args.input)
    if args.format == "csv":
        return comparison_csv(comparison)
    return comparison


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="constrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a raw dataset into the canonical format")
    p.add_argument("--dataset", required=True, choices=["foursquare", "movielens", "synthetic"])
    p.add_argument("--input", help="raw file/directory, or a generator config JSON for synthetic")
    p.add_argument("--out", required=True)
    p.add_argument("--subset", help="subset filter JSON (foursquare)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model for one seed")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on persisted test pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="evaluation JSONL, or a directory holding one")
    p.add_argument("--slices", help="comma-separated slice names or a JSON file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a multi-seed sweep")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, help="override the worker count in the experiment file")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="summarize an experiment directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.set_defaults(func=cmd_report)
    return parser


def _error(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__,
                                 "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _error("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except (UsageError, SpecError) as exc:
        return _error("usage", exc, EXIT_USAGE)
    except (OSError, ValueError, IngestError, KeyError, RuntimeError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        return _error("failure", exc, EXIT_FAILURE)
    if isinstance(result, str):
        sys.stdout.write(result)
    else:
        sys.stdout.write(json.dumps(result, indent=1, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
