"""Command-line pipeline: parse, mine, build, embed, train, evaluate, report.

Every subcommand accepts --config pointing at a JSON object whose keys mirror
the long flag names; explicit flags win over config values. All errors exit
with a machine-readable JSON line on stderr: usage problems exit 2, data
problems 3, numeric problems 4.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from types import SimpleNamespace

from . import annotations, benchmark, captions, combiner, embeddings, evaluation
from . import mining, training
from .errors import (
    CondsimError,
    DimensionMismatch,
    EmptyTemplateSet,
    GeometryError,
    InsufficientScene,
    IntegrityError,
    MissingEmbedding,
    NonFinite,
    SchemaError,
    ValidationError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DATA_ERRORS = (
    SchemaError, IntegrityError, GeometryError, InsufficientScene,
    ValidationError, MissingEmbedding, EmptyTemplateSet,
    FileNotFoundError, IsADirectoryError, PermissionError,
)
_NUMERIC_ERRORS = (NonFinite, DimensionMismatch)


class UsageError(Exception):
    """A flag or config value the pipeline cannot act on."""


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", path) from exc
    if not isinstance(obj, dict):
        raise SchemaError("config must be a JSON object", path)
    return obj


def _merge(args: argparse.Namespace, defaults: dict) -> SimpleNamespace:
    """Resolve each option as: explicit flag, else config value, else default."""
    config = _load_config(args.config)
    unknown = set(config) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    merged = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        merged[key] = config.get(key, default) if flag is None else flag
    return SimpleNamespace(**merged)


def _require(opts: SimpleNamespace, *keys: str) -> None:
    missing = [k for k in keys if getattr(opts, k) in (None, "")]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"missing required option(s): {flags}")


def _parse_ks(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(v) for v in str(value).split(","))
    except ValueError as exc:
        raise UsageError(f"--k expects integers like 1,2,3; got {value!r}") from exc


def _cmd_parse_captions(args: argparse.Namespace) -> str:
    opts = _merge(args, {
        "captions": None, "concreteness": None, "out": None,
        "threshold": captions.DEFAULT_THRESHOLD,
        "stopwords": None, "prepositions": None,
    })
    _require(opts, "captions", "concreteness", "out")
    lexicon = captions.load_lexicon(opts.stopwords, opts.prepositions)
    records = captions.read_captions(opts.captions)
    table = captions.load_concreteness(opts.concreteness)
    rels = captions.parse_captions(records, lexicon)
    scored = captions.score_relationships(rels, table)
    kept = captions.filter_relationships(scored, float(opts.threshold))
    captions.write_relationships(kept, opts.out)
    return (f"parsed {len(records)} captions -> {len(scored)} relationships, "
            f"kept {len(kept)} at threshold {opts.threshold}")


def _cmd_mine_triplets(args: argparse.Namespace) -> str:
    opts = _merge(args, {
        "relationships": None, "out": None, "n_triplets": 1000,
        "seed": 0, "min_concreteness": captions.DEFAULT_THRESHOLD,
    })
    _require(opts, "relationships", "out")
    rels = captions.read_relationships(opts.relationships)
    scored = [r for r in rels if r.concreteness is not None]
    kept = captions.filter_relationships(scored, float(opts.min_concreteness))
    index = mining.build_subject_index(kept)
    triplets = mining.mine_triplets(index, int(opts.n_triplets), int(opts.seed))
    mining.write_triplets(triplets, opts.out)
    return (f"mined {len(triplets)} of {opts.n_triplets} requested triplets "
            f"from {len(kept)} relationships")


def _cmd_build_benchmark(args: argparse.Namespace) -> str:
    opts = _merge(args, {
        "store": None, "out": None, "task": "all", "seed": 0,
        "quota": None, "far_max": benchmark.DEFAULT_FAR_MAX,
        "dilation": benchmark.DEFAULT_DILATION,
        "presence_threshold": annotations.PRESENCE_THRESHOLD,
    })
    _require(opts, "store", "out")
    tasks = benchmark.ALL_TASKS if opts.task == "all" else (opts.task,)
    for task in tasks:
        if task not in benchmark.ALL_TASKS:
            raise UsageError(f"unknown task {task!r}; choose from "
                             f"{('all',) + benchmark.ALL_TASKS}")
    store = annotations.load_store(annotations.StorePaths.in_dir(opts.store))
    seed = int(opts.seed)
    per_type = int(opts.quota) if opts.quota is not None else benchmark.DEFAULT_PER_TYPE_QUOTA
    cap = int(opts.quota) if opts.quota is not None else None
    templates: list[benchmark.RetrievalTemplate] = []
    for task in tasks:
        if task == benchmark.TASK_FOCUS_ATTRIBUTE:
            templates += benchmark.build_focus_attribute(
                store, seed, per_type, float(opts.dilation))
        elif task == benchmark.TASK_CHANGE_ATTRIBUTE:
            templates += benchmark.build_change_attribute(
                store, seed, per_type, float(opts.dilation))
        elif task == benchmark.TASK_FOCUS_OBJECT:
            templates += benchmark.build_focus_object(
                store, seed, int(opts.far_max), cap, float(opts.presence_threshold))
        else:
            templates += benchmark.build_change_object(
                store, seed, int(opts.far_max), cap, float(opts.presence_threshold))
    report = benchmark.validate_benchmark(
        templates, store, int(opts.far_max), float(opts.presence_threshold))
    benchmark.write_templates(templates, opts.out)
    return (f"built {len(templates)} templates\n{report.format_summary()}")


def _collect_keys(
    template_path: str | None, triplet_path: str | None
) -> list[tuple[str, str]]:
    keys: dict[str, str] = {}

    def put(key: str, kind: str) -> None:
        have = keys.get(key)
        if have is not None and have != kind:
            raise IntegrityError(
                f"id {key!r} is used as both an image and a text key")
        keys[key] = kind

    if template_path:
        for tmpl in benchmark.read_templates(template_path):
            put(tmpl.reference.key, embeddings.KIND_IMAGE)
            put(tmpl.condition, embeddings.KIND_TEXT)
            for spec in tmpl.gallery:
                put(spec.key, embeddings.KIND_IMAGE)
    if triplet_path:
        for trip in mining.read_triplets(triplet_path):
            put(trip.reference_image_id, embeddings.KIND_IMAGE)
            put(trip.target_image_id, embeddings.KIND_IMAGE)
            put(trip.condition_text, embeddings.KIND_TEXT)
    return sorted(keys.items())


def _cmd_stub_embed(args: argparse.Namespace) -> str:
    opts = _merge(args, {
        "templates": None, "triplets": None, "out": None,
        "dim": 64, "salt": "",
    })
    _require(opts, "out")
    if not opts.templates and not opts.triplets:
        raise UsageError("need --templates and/or --triplets to collect ids")
    entries = _collect_keys(opts.templates, opts.triplets)
    embedder = embeddings.StubEmbedder(dim=int(opts.dim), salt=str(opts.salt))
    table = embedder.build_table(entries)
    embeddings.write_gceb(table, opts.out)
    return f"embedded {len(table)} ids at dim {opts.dim} -> {opts.out}"


def _cmd_train(args: argparse.Namespace) -> str:
    opts = _merge(args, {
        "triplets": None, "embeddings": None, "out": None,
        "val_templates": None, "log": None,
        "steps": 2000, "batch_size": 256, "learning_rate": 1e-3,
        "temperature": 0.01, "seed": 0, "val_fraction": 0.1,
        "eval_interval": 100,
    })
    _require(opts, "triplets", "embeddings", "out")
    table = embeddings.read_gceb(opts.embeddings)
    triplets = mining.read_triplets(opts.triplets)
    val_templates = (benchmark.read_templates(opts.val_templates)
                     if opts.val_templates else None)
    config = training.TrainConfig(
        temperature=float(opts.temperature),
        batch_size=int(opts.batch_size),
        steps=int(opts.steps),
        learning_rate=float(opts.learning_rate),
        seed=int(opts.seed),
        val_fraction=float(opts.val_fraction),
        eval_interval=int(opts.eval_interval),
    )
    result = training.train(triplets, table, config, val_templates=val_templates)
    combiner.save_checkpoint(result.params, opts.out)
    if opts.log:
        training.write_train_log(result.log, opts.log)
    last_loss = result.log[-1].loss if result.log else float("nan")
    best = ("none" if result.best_val_r1 is None
            else f"{result.best_val_r1:.3f} at step {result.best_step}")
    return (f"trained {config.steps} steps on {len(triplets)} triplets: "
            f"final loss {last_loss:.4f}, best val R@1 {best}")


def _cmd_evaluate(args: argparse.Namespace) -> str:
    opts = _merge(args, {
        "templates": None, "embeddings": None, "out": None,
        "scorer": "image-only", "checkpoint": None, "k": "1,2,3",
        "skip_missing": False,
    })
    _require(opts, "templates", "embeddings")
    if opts.scorer not in evaluation.SCORER_NAMES:
        raise UsageError(f"unknown scorer {opts.scorer!r}; choose from "
                         f"{evaluation.SCORER_NAMES}")
    params = None
    if opts.scorer == "combiner":
        if not opts.checkpoint:
            raise UsageError("--scorer combiner requires --checkpoint")
        params = combiner.load_checkpoint(opts.checkpoint)
    scorer = evaluation.make_scorer(opts.scorer, params)
    table = embeddings.read_gceb(opts.embeddings)
    templates = benchmark.read_templates(opts.templates)
    report = evaluation.recall_at_k(
        templates, scorer, table, ks=_parse_ks(opts.k),
        skip_missing=bool(opts.skip_missing))
    if opts.out:
        Path(opts.out).write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    print(report.format_table())
    return (f"evaluated {len(templates)} templates with {opts.scorer}: "
            f"average R@1 {report.average_r1:.1f}")


def _cmd_report(args: argparse.Namespace) -> str:
    opts = _merge(args, {"reports": None, "out": None})
    _require(opts, "reports")
    paths = opts.reports if isinstance(opts.reports, list) else [opts.reports]
    blocks = []
    summary = []
    for path in paths:
        try:
            obj = json.loads(Path(path).read_text("utf-8"))
            report = evaluation.EvalReport.from_json(obj)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad report ({exc})", str(path)) from exc
        blocks.append(report.format_table())
        summary.append((report.scorer, report.average_r1))
    if len(summary) > 1:
        width = max(len(name) for name, _ in summary)
        lines = ["average R@1 by scorer:"]
        for name, avg in sorted(summary, key=lambda p: -p[1]):
            lines.append(f"  {name.ljust(width)}  {avg:.1f}")
        blocks.append("\n".join(lines))
    text = "\n\n".join(blocks)
    print(text)
    if opts.out:
        Path(opts.out).write_text(text + "\n", encoding="utf-8")
    return f"rendered {len(paths)} report(s)"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condsim",
        description="conditional similarity benchmarks over precomputed embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config merged under explicit flags")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        return p

    p = add("parse-captions", "extract and filter caption relationships")
    p.add_argument("--captions")
    p.add_argument("--concreteness")
    p.add_argument("--threshold", type=float)
    p.add_argument("--stopwords")
    p.add_argument("--prepositions")

    p = add("mine-triplets", "sample training triplets from relationships")
    p.add_argument("--relationships")
    p.add_argument("--n-triplets", "--n", type=int, dest="n_triplets")
    p.add_argument("--min-concreteness", type=float, dest="min_concreteness")

    p = add("build-benchmark", "construct and validate retrieval templates")
    p.add_argument("--store")
    p.add_argument("--task")
    p.add_argument("--quota", type=int)
    p.add_argument("--far-max", type=int, dest="far_max")
    p.add_argument("--dilation", type=float)
    p.add_argument("--presence-threshold", type=float, dest="presence_threshold")

    p = add("stub-embed", "hash-seeded embeddings for every referenced id")
    p.add_argument("--templates")
    p.add_argument("--triplets")
    p.add_argument("--dim", type=int)
    p.add_argument("--salt")

    p = add("train", "fit the combiner on mined triplets")
    p.add_argument("--triplets")
    p.add_argument("--embeddings")
    p.add_argument("--val-templates", dest="val_templates")
    p.add_argument("--log")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--temperature", type=float)
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--eval-interval", type=int, dest="eval_interval")

    p = add("evaluate", "score templates with one scorer")
    p.add_argument("--templates")
    p.add_argument("--embeddings")
    p.add_argument("--scorer")
    p.add_argument("--checkpoint")
    p.add_argument("--k")
    p.add_argument("--skip-missing", action=argparse.BooleanOptionalAction,
                   dest="skip_missing")

    p = add("report", "render saved evaluation reports as tables")
    p.add_argument("reports", nargs="*", default=None)

    return parser


_HANDLERS = {
    "parse-captions": _cmd_parse_captions,
    "mine-triplets": _cmd_mine_triplets,
    "build-benchmark": _cmd_build_benchmark,
    "stub-embed": _cmd_stub_embed,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def _fail(stage: str, exc: BaseException, code: int) -> int:
    payload = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    stage = args.command
    try:
        summary = _HANDLERS[stage](args)
    except UsageError as exc:
        return _fail(stage, exc, EXIT_USAGE)
    except _NUMERIC_ERRORS as exc:
        return _fail(stage, exc, EXIT_NUMERIC)
    except _DATA_ERRORS as exc:
        return _fail(stage, exc, EXIT_DATA)
    except ValueError as exc:
        return _fail(stage, exc, EXIT_USAGE)
    except CondsimError as exc:
        return _fail(stage, exc, EXIT_DATA)
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
