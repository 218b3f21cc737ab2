"""trapdex command line: plain-file pipelines over stores and JSONL.

Exit codes: 0 success, 1 option/validation error (single-line diagnostic),
2 runtime error. Identical inputs, flags, and seed produce byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .classify import (
    MatchingConfig,
    RouterConfig,
    ScoreProvider,
    classify_images,
    retrieval_provider,
    write_predictions,
)
from .evaluation import SplitConfig, grouped_report, make_safari_split, make_wct_split
from .geometry import select_primary_detection, square_crop_rect
from .index import build_flat_index, class_centroids, search_topk_batch
from .ingest import parse_coco_cameratraps, parse_megadetector_json
from .model import EMPTY_LABEL, EmbeddingRecord, TrapdexError
from .prompts import build_adjudication_prompt, caption_prompt_catalog, prompt_hash
from .store import read_embedding_store, write_embedding_store

log = logging.getLogger("trapdex")

SUBCOMMANDS = ("ingest", "crop-plan", "search", "classify", "evaluate", "split", "prompt")


class UsageError(Exception):
    """Bad flags or inconsistent options; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="trapdex", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of flag defaults (flags override)")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="increase log verbosity")
    # Accept -v after the subcommand too; SUPPRESS keeps a pre-subcommand -v
    # from being clobbered by the subparser default.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count",
                        default=argparse.SUPPRESS, help="increase log verbosity")

    def add_parser(sub, name: str, description: str):
        return sub.add_parser(name, description=description, parents=[common])

    sub = parser.add_subparsers(dest="command", metavar="|".join(SUBCOMMANDS))

    p = add_parser(sub, "ingest", "Build an embedding store from a JSONL dump.")
    p.add_argument("--records", help="JSONL with image_id/label/location/vector fields")
    p.add_argument("--out", help="store directory to create")
    p.add_argument("--variant", choices=("full", "cropped", "segmented"))
    p.add_argument("--dimension", type=int, help="declared D (required if records are empty)")
    p.add_argument("--database", action=argparse.BooleanOptionalAction,
                   help="treat as retrieval database: rows labeled, no empty class")
    p.add_argument("--truth", help="COCO annotations providing the label space")

    p = add_parser(sub, "crop-plan", "Emit square crop plans for detections.")
    p.add_argument("--detections", help="MegaDetector batch JSON")
    p.add_argument("--images", help="COCO json or CSV (image_id,width,height) with dimensions")
    p.add_argument("--conf-threshold", type=float)
    p.add_argument("--animals-only", action=argparse.BooleanOptionalAction)
    p.add_argument("--oversize", choices=("pad", "clip"))
    p.add_argument("--out", help="output JSONL (default stdout)")

    p = add_parser(sub, "search", "Exact top-k retrieval between two stores.")
    p.add_argument("--db", help="database store directory")
    p.add_argument("--queries", help="query store directory")
    p.add_argument("--metric", choices=("l2", "cosine"))
    p.add_argument("-k", type=int, dest="k")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output JSONL (default stdout)")

    p = add_parser(sub, "classify", "Detection-routed classification.")
    p.add_argument("--db", help="retrieval database store (crop branch)")
    p.add_argument("--queries", action="append",
                   help="query store; repeat to cover several variants")
    p.add_argument("--detections", help="MegaDetector batch JSON")
    p.add_argument("--strategy", choices=("empty", "second"))
    p.add_argument("--arrangement", choices=("one", "two"))
    p.add_argument("--metric", choices=("l2", "cosine"))
    p.add_argument("--mode", choices=("knn", "centroid"))
    p.add_argument("-k", type=int, dest="k")
    p.add_argument("--conf-threshold", type=float)
    p.add_argument("--crop-variant", choices=("cropped", "segmented"))
    p.add_argument("--crop-preds", help="prediction JSONL replacing crop retrieval")
    p.add_argument("--full-preds", help="prediction JSONL for the full-image branch")
    p.add_argument("--full-db", help="retrieval database store for the full branch")
    p.add_argument("--full-queries", help="full-image query store")
    p.add_argument("--truth", help="COCO annotations (empty label id, file-name mapping)")
    p.add_argument("--out", help="output JSONL (default stdout)")

    p = add_parser(sub, "evaluate", "Score predictions against annotations.")
    p.add_argument("--preds", help="prediction JSONL")
    p.add_argument("--truth", help="COCO annotations JSON")
    p.add_argument("--group-by", choices=("split", "location"))
    p.add_argument("--splits", help="CSV image_id,split for --group-by split")
    p.add_argument("--variant", help="evaluate only predictions of this variant")
    p.add_argument("--baseline-top1", type=float,
                   help="baseline Top-1 in percent; adds the error-reduction figure")
    p.add_argument("--out", help="write the JSON report here (table goes to stdout)")

    p = add_parser(sub, "split", "Construct a reproducible dataset split.")
    p.add_argument("--truth", help="COCO annotations JSON")
    p.add_argument("--scheme", choices=("wct", "safari"))
    p.add_argument("--seed", type=int)
    p.add_argument("--x", type=int, help="first-x-locations count (safari)")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--stratify", action=argparse.BooleanOptionalAction)
    p.add_argument("--out", help="output CSV (default stdout)")

    p = add_parser(sub, "prompt", "Emit adjudication prompts for captions.")
    p.add_argument("--truth", help="COCO annotations providing the category list")
    p.add_argument("--categories", help="comma-separated category names (overrides --truth)")
    p.add_argument("--captions", help="JSONL with image_id and caption fields")
    p.add_argument("--list-caption-prompts", action=argparse.BooleanOptionalAction,
                   help="print the caption-prefix catalog and exit")
    p.add_argument("--out", help="output JSONL (default stdout)")

    return parser


# Real defaults, applied after --config merging so flags always win.
_DEFAULTS: dict[str, dict[str, Any]] = {
    "ingest": {"variant": None, "dimension": None, "database": False, "truth": None},
    "crop-plan": {"conf_threshold": 0.2, "animals_only": True, "oversize": "pad",
                  "out": None},
    "search": {"metric": "l2", "k": 1, "threads": 1, "out": None},
    "classify": {"strategy": "second", "arrangement": "two", "metric": "l2",
                 "mode": "knn", "k": 1, "conf_threshold": 0.2,
                 "crop_variant": "cropped", "crop_preds": None, "full_preds": None,
                 "full_db": None, "full_queries": None, "truth": None, "out": None,
                 "db": None, "queries": None},
    "evaluate": {"group_by": None, "splits": None, "variant": None,
                 "baseline_top1": None, "out": None},
    "split": {"scheme": "wct", "seed": 0, "x": 0, "test_fraction": 1.0 / 3.0,
              "train_fraction": 0.8, "stratify": False, "out": None},
    "prompt": {"truth": None, "categories": None, "captions": None,
               "list_caption_prompts": False, "out": None},
}

_REQUIRED: dict[str, tuple[str, ...]] = {
    "ingest": ("records", "out"),
    "crop-plan": ("detections", "images"),
    "search": ("db", "queries"),
    "classify": ("detections",),
    "evaluate": ("preds", "truth"),
    "split": ("truth",),
    "prompt": (),
}


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    command = args.command
    file_values: dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            file_values = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
        file_values = {k.replace("-", "_"): v for k, v in file_values.items()}
    known = set(_DEFAULTS[command]) | set(_REQUIRED[command])
    for key in file_values:
        if key not in known:
            raise UsageError(f"config key {key!r} unknown for {command!r}")
    for key, default in _DEFAULTS[command].items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, default))
    for key in _REQUIRED[command]:
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key))
        if getattr(args, key) is None:
            raise UsageError(f"{command}: missing required --{key.replace('_', '-')}")
    return args


def _check_paths(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise UsageError(f"path does not exist: {p}")


def _open_out(path: str | None):
    if path is None:
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TrapdexError(f"{path}: bad JSON at line {lineno + 1}: {exc}") from exc
    return rows


def _cmd_ingest(args: argparse.Namespace) -> int:
    _check_paths(args.records, args.truth)
    label_space = None
    if args.truth:
        label_space = parse_coco_cameratraps(
            Path(args.truth).read_bytes(), args.truth
        ).label_space
    records = []
    for row in _read_jsonl(args.records):
        try:
            records.append(
                EmbeddingRecord(
                    image_id=str(row["image_id"]),
                    variant=row.get("variant") or args.variant or "full",
                    vector=np.asarray(row["vector"], dtype=np.float32),
                    label=row.get("label"),
                    location_id=str(row.get("location", "")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TrapdexError(f"{args.records}: bad record: {exc}") from exc
    handle = write_embedding_store(
        records,
        args.out,
        dimension=args.dimension,
        variant=args.variant,
        label_space=label_space,
        database=args.database,
    )
    log.info("wrote store %s (count=%d, dimension=%d, variant=%s)",
             handle.path, handle.count, handle.dimension, handle.variant)
    return 0


def _load_dimension_table(path: str) -> dict[str, tuple[str, int, int]]:
    """Map detection file names to (image_id, width, height).

    Reads the raw images array (not the annotation parser), so images the
    evaluation protocol would exclude still get their crops planned.
    """
    table: dict[str, tuple[str, int, int]] = {}
    if path.endswith(".csv"):
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = row.get("image_id") or row.get("file_name") or ""
                table[key] = (key, int(row["width"]), int(row["height"]))
        return table
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = doc["images"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise TrapdexError(f"{path}: not a COCO-style dimension source: {exc}") from exc
    for img in entries:
        try:
            image_id = str(img["id"])
            entry = (image_id, int(img.get("width", 0)), int(img.get("height", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise TrapdexError(f"{path}: malformed image entry: {exc}") from exc
        table[str(img.get("file_name", image_id))] = entry
        table.setdefault(image_id, entry)
    return table


def _cmd_crop_plan(args: argparse.Namespace) -> int:
    _check_paths(args.detections, args.images)
    det_file = parse_megadetector_json(Path(args.detections).read_bytes(), args.detections)
    dims = _load_dimension_table(args.images)
    out, close = _open_out(args.out)
    try:
        for file_name, dets, failure in det_file.images:
            if failure is not None:
                log.debug("skipping failed image %s: %s", file_name, failure)
                continue
            primary = select_primary_detection(dets, args.conf_threshold, args.animals_only)
            if primary is None:
                log.debug("no qualifying detection for %s", file_name)
                continue
            if file_name not in dims:
                raise TrapdexError(f"no image dimensions for {file_name!r}")
            image_id, width, height = dims[file_name]
            plan = square_crop_rect(primary.bbox, width, height, args.oversize)
            out.write(json.dumps({
                "image_id": image_id,
                "rect": list(plan.rect),
                "pad": list(plan.pad),
                "side": plan.side,
            }) + "\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    _check_paths(args.db, args.queries)
    if args.k < 1:
        raise UsageError(f"-k must be >= 1, got {args.k}")
    if args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")
    db = read_embedding_store(args.db)
    queries = read_embedding_store(args.queries)
    if queries.dimension != db.dimension:
        raise TrapdexError(
            f"query dimension {queries.dimension} != database dimension {db.dimension}"
        )
    index = build_flat_index(db, args.metric)
    results = search_topk_batch(index, queries.data, args.k, threads=args.threads)
    out, close = _open_out(args.out)
    try:
        for qid, neighbors in zip(queries.ids, results):
            out.write(json.dumps({
                "query_id": qid,
                "neighbors": [
                    {"id": nb.record_id, "label": nb.label, "score": nb.score}
                    for nb in neighbors
                ],
            }) + "\n")
    finally:
        if close:
            out.close()
    return 0


def _cmd_classify(args: argparse.Namespace) -> int:
    _check_paths(args.detections, args.db, args.crop_preds, args.full_preds,
                 args.full_db, args.full_queries, args.truth)
    for store in args.queries or []:
        _check_paths(store)
    strategy = "declare_empty" if args.strategy == "empty" else "second_classifier"
    arrangement = "single_shared" if args.arrangement == "one" else "two_separate"

    has_full_provider = bool(
        args.full_preds or (args.full_db and args.full_queries)
    )
    if strategy == "second_classifier" and arrangement == "two_separate" \
            and not has_full_provider:
        raise UsageError(
            "--strategy second with --arrangement two needs --full-preds "
            "or --full-db/--full-queries"
        )
    if not args.crop_preds and not (args.db and args.queries):
        raise UsageError("classify needs --crop-preds or --db with --queries")

    matching = MatchingConfig(metric=args.metric, mode=args.mode, k=args.k)
    router = RouterConfig(
        empty_strategy=strategy,
        arrangement=arrangement,
        conf_threshold=args.conf_threshold,
        crop_variant=args.crop_variant,
    )

    def retrieval(db_path: str, query_paths: Sequence[str]) -> ScoreProvider:
        matrix = read_embedding_store(db_path)
        db = (
            build_flat_index(matrix, matching.metric)
            if matching.mode == "knn"
            else class_centroids(matrix)
        )
        return ScoreProvider.union(
            *(retrieval_provider(db, read_embedding_store(q), matching)
              for q in query_paths)
        )

    if args.crop_preds:
        crop_provider = ScoreProvider.from_prediction_file(args.crop_preds)
    else:
        crop_provider = retrieval(args.db, args.queries)
    full_provider = None
    if args.full_preds:
        full_provider = ScoreProvider.from_prediction_file(args.full_preds)
    elif args.full_db and args.full_queries:
        full_provider = retrieval(args.full_db, [args.full_queries])

    empty_label = EMPTY_LABEL
    name_to_id: dict[str, str] = {}
    if args.truth:
        annots = parse_coco_cameratraps(Path(args.truth).read_bytes(), args.truth)
        empty_label = annots.label_space.empty_id
        name_to_id = {rec.file_name: rec.image_id for rec in annots.images}

    det_file = parse_megadetector_json(Path(args.detections).read_bytes(), args.detections)
    detections = {}
    for file_name, dets, _failure in det_file.images:
        detections[name_to_id.get(file_name, file_name)] = dets

    predictions = classify_images(detections, crop_provider, full_provider,
                                  router, empty_label)
    out, close = _open_out(args.out)
    try:
        write_predictions(predictions, out, crop_variant=router.crop_variant)
    finally:
        if close:
            out.close()
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    _check_paths(args.preds, args.truth, args.splits)
    annots = parse_coco_cameratraps(Path(args.truth).read_bytes(), args.truth)

    rankings: dict[str, list[int]] = {}
    for row in _read_jsonl(args.preds):
        if args.variant and row.get("variant") != args.variant:
            continue
        image_id = str(row["image_id"])
        if image_id in rankings:
            raise TrapdexError(
                f"{args.preds}: duplicate prediction for image {image_id!r} "
                "(use --variant to disambiguate)"
            )
        rankings[image_id] = [int(item["label"]) for item in row["ranking"]]

    split_roles: dict[str, str] = {}
    if args.splits:
        with open(args.splits, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                split_roles[row["image_id"]] = row["split"]

    ids = sorted(annots.truth)
    missing = [i for i in ids if i not in rankings]
    if missing:
        raise TrapdexError(
            f"{args.preds}: no prediction for {len(missing)} ground-truth "
            f"images (first: {missing[0]!r})"
        )
    preds = [rankings[i] for i in ids]
    gts = [annots.truth[i] for i in ids]

    groups = None
    if args.group_by == "location":
        by_id = {rec.image_id: rec for rec in annots.images}
        groups = [by_id[i].location_id for i in ids]
    elif args.group_by == "split":
        if split_roles:
            groups = [split_roles.get(i) for i in ids]
        else:
            by_id = {rec.image_id: rec for rec in annots.images}
            groups = [by_id[i].split_tag for i in ids]

    report = grouped_report(preds, gts, groups,
                            baseline_top1_percent=args.baseline_top1)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(report.format_table())
    else:
        print(payload)
        print(report.format_table(), file=sys.stderr)
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    _check_paths(args.truth)
    annots = parse_coco_cameratraps(Path(args.truth).read_bytes(), args.truth)
    if args.scheme == "wct":
        cfg = SplitConfig(
            scheme="wct_location",
            test_location_fraction=args.test_fraction,
            dev_train_fraction=args.train_fraction,
            seed=args.seed,
            stratify=args.stratify,
        )
        assignment = make_wct_split(annots.images, cfg)
    else:
        assignment = make_safari_split(annots.images, args.x)
    out, close = _open_out(args.out)
    try:
        out.write(assignment.to_csv())
    finally:
        if close:
            out.close()
    return 0


def _cmd_prompt(args: argparse.Namespace) -> int:
    out, close = _open_out(args.out)
    try:
        if args.list_caption_prompts:
            for prompt in caption_prompt_catalog():
                out.write(json.dumps({"id": prompt.id, "text": prompt.text}) + "\n")
            return 0
        if args.captions is None:
            raise UsageError("prompt: missing required --captions")
        if args.categories:
            categories = [c.strip() for c in args.categories.split(",") if c.strip()]
        elif args.truth:
            _check_paths(args.truth)
            annots = parse_coco_cameratraps(Path(args.truth).read_bytes(), args.truth)
            categories = annots.label_space.names(exclude_empty=True)
        else:
            raise UsageError("prompt: needs --categories or --truth")
        _check_paths(args.captions)
        for row in _read_jsonl(args.captions):
            rendered = build_adjudication_prompt(categories, str(row["caption"]))
            out.write(json.dumps({
                "image_id": str(row["image_id"]),
                "prompt": rendered,
                "prompt_hash": prompt_hash(rendered),
            }) + "\n")
    finally:
        if close:
            out.close()
    return 0


_HANDLERS = {
    "ingest": _cmd_ingest,
    "crop-plan": _cmd_crop_plan,
    "search": _cmd_search,
    "classify": _cmd_classify,
    "evaluate": _cmd_evaluate,
    "split": _cmd_split,
    "prompt": _cmd_prompt,
}


def run(argv: Sequence[str]) -> int:
    """Parse and execute one invocation; returns the process exit status."""
    parser = _build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help and friends
            return int(exc.code or 0)
        if args.command is None:
            raise UsageError("missing subcommand")
        logging.basicConfig(
            level=logging.DEBUG if args.verbose > 1 else
            logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        args = _merge_config(args)
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"trapdex: error: {exc}", file=sys.stderr)
        return 1
    except (TrapdexError, ValueError, OSError) as exc:
        print(f"trapdex: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
