"""Command line pipeline: synth | build-graph | train | evaluate | render | benchmark.

Machine-readable artifacts are files; logs go to standard error. The
FIELDGRAPH_LOG environment variable (error, info, debug) sets verbosity.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import FieldGraphError, FormatError, InvariantError
from .eval_metrics import (
    DEFAULT_PR_POINTS,
    DEFAULT_THRESHOLD,
    evaluate_fields,
    format_report_row,
    pr_curve,
    report_to_dict,
)
from .gcn_core import (
    GcnLayer,
    GcnModel,
    forward_propagated,
    init_params,
    load_checkpoint,
    model_forward,
    renormalize,
    save_checkpoint,
)
from .graph_build import (
    DEFAULT_NODES,
    build_field_graph,
    load_graph,
    save_graph,
    with_targets,
)
from .raster_io import RasterImage, load_image, load_mask, rgb_to_lab, save_image, save_mask
from .slic import (
    default_min_area,
    enforce_connectivity,
    load_superpixels,
    save_superpixels,
    slic_segment,
)
from .synth import SynthConfig, generate_dataset
from .train import TrainConfig, train, write_history_jsonl

log = logging.getLogger("fieldgraph")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("FIELDGRAPH_LOG", "info").strip().lower()
    level = _LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _write_manifest(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2))


def _read_manifest(path: str | Path, kind: str) -> tuple[dict, Path]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if (
        not isinstance(doc, dict)
        or doc.get("schema_version") != 1
        or doc.get("kind") != kind
        or not isinstance(doc.get("fields"), list)
    ):
        raise FormatError(f"{path}: not a schema_version 1 {kind!r} manifest")
    return doc, path.parent


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(
        width=args.width,
        height=args.height,
        zero_dropout=args.zero_dropout,
        seed=args.seed,
    )
    splits = generate_dataset(cfg, args.n_fields, tuple(args.split), args.seed)
    fields = []
    for split_name, samples in (
        ("train", splits.train),
        ("val", splits.val),
        ("test", splits.test),
    ):
        for s in samples:
            image_rel = f"images/{s.field_id}.png"
            mask_rel = f"masks/{s.field_id}.png"
            save_image(s.image, out / image_rel)
            save_mask(s.mask, out / mask_rel)
            fields.append(
                {
                    "id": s.field_id,
                    "image": image_rel,
                    "mask": mask_rel,
                    "split": split_name,
                    "seed": s.seed,
                }
            )
    fields.sort(key=lambda f: f["id"])
    _write_manifest(
        out / "manifest.json",
        {
            "schema_version": 1,
            "kind": "synth",
            "seed": args.seed,
            "width": args.width,
            "height": args.height,
            "fields": fields,
        },
    )
    log.info(
        "wrote %d fields (%d train / %d val / %d test) to %s",
        args.n_fields,
        len(splits.train),
        len(splits.val),
        len(splits.test),
        out,
    )
    return 0


def _build_one(
    field_id: str,
    image_path: str,
    mask_path: str,
    out_dir: str,
    k: int,
    nodes: int,
    compactness: float,
    max_iter: int,
    bins: int,
    task: str,
) -> tuple[str, int]:
    """Segment one field and write its graph and superpixel files."""
    img = load_image(image_path)
    mask = load_mask(mask_path, img.width, img.height)
    lab = rgb_to_lab(img)
    sp = slic_segment(lab, k, compactness, max_iter)
    sp = enforce_connectivity(sp, default_min_area(img.width, img.height, k))
    g = build_field_graph(img, sp, n=nodes, bins=bins, source_id=field_id)
    g = with_targets(g, sp, mask, task)
    out = Path(out_dir)
    save_graph(g, out / "graphs" / f"{field_id}.json")
    save_superpixels(sp, out / "superpixels" / f"{field_id}.png")
    return field_id, sp.n_regions


def cmd_build_graph(args: argparse.Namespace) -> int:
    manifest, base = _read_manifest(args.manifest, "synth")
    out = Path(args.out)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    (out / "superpixels").mkdir(parents=True, exist_ok=True)

    work = [
        (
            f["id"],
            str(base / f["image"]),
            str(base / f["mask"]),
            str(out),
            args.k,
            args.nodes,
            args.compactness,
            args.max_iter,
            args.bins,
            args.task,
        )
        for f in manifest["fields"]
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = dict(pool.map(_build_one_star, work))
    else:
        results = dict(_build_one(*w) for w in work)

    fields = []
    for f in manifest["fields"]:
        n_real = results[f["id"]]
        log.info("field %s: %d regions", f["id"], n_real)
        fields.append(
            {
                "id": f["id"],
                "graph": f"graphs/{f['id']}.json",
                "superpixels": f"superpixels/{f['id']}.png",
                "image": str((base / f["image"]).resolve()),
                "mask": str((base / f["mask"]).resolve()),
                "split": f["split"],
                "n_real": n_real,
            }
        )
    _write_manifest(
        out / "manifest.json",
        {
            "schema_version": 1,
            "kind": "graphs",
            "task": args.task,
            "nodes": args.nodes,
            "fields": fields,
        },
    )
    return 0


def _build_one_star(work: tuple) -> tuple[str, int]:
    return _build_one(*work)


def _load_split_graphs(manifest: dict, base: Path, split: str) -> list:
    graphs = []
    for f in manifest["fields"]:
        if f["split"] == split:
            graphs.append(load_graph(base / f["graph"]))
    return graphs


def cmd_train(args: argparse.Namespace) -> int:
    manifest, base = _read_manifest(args.manifest, "graphs")
    task = args.task or manifest.get("task", "classification")
    cfg = TrainConfig(
        task=task,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr0=args.lr,
        plateau_patience=args.patience,
        plateau_factor=args.factor,
        lr_min=args.lr_min,
        l2_lambda=args.l2,
        seed=args.seed,
    )
    train_graphs = _load_split_graphs(manifest, base, "train")
    val_graphs = _load_split_graphs(manifest, base, "val")
    log.info(
        "training task=%s on %d graphs, validating on %d",
        task,
        len(train_graphs),
        len(val_graphs),
    )
    result = train(train_graphs, val_graphs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "checkpoint_final.json")
    save_checkpoint(result.best_model, out / "checkpoint_best.json")
    write_history_jsonl(result.history, out / "history.jsonl")
    log.info(
        "done: best val_loss %.6f at epoch %d",
        result.history.best_val_loss,
        result.history.best_epoch,
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest, base = _read_manifest(args.manifest, "graphs")
    selected = [f for f in manifest["fields"] if f["split"] == args.split]
    if not selected:
        raise InvariantError(f"manifest has no fields in split {args.split!r}")
    entries = []
    for f in selected:
        g = load_graph(base / f["graph"])
        preds = model_forward(g, model)
        entries.append((f["id"], preds, g.targets, g.valid_mask))
    report = evaluate_fields(entries, args.threshold)
    print(format_report_row(report))

    doc = report_to_dict(report)
    if args.pr_curve is not None:
        pooled_preds = np.concatenate([e[1] for e in entries])
        pooled_targets = np.concatenate([e[2] for e in entries])
        pooled_mask = np.concatenate([e[3] for e in entries])
        curve = pr_curve(pooled_preds, pooled_targets, pooled_mask, args.pr_curve)
        doc["pr_curve"] = {
            "best_threshold": curve.best_threshold,
            "points": [
                {
                    "threshold": pt.threshold,
                    "precision": pt.precision,
                    "recall": pt.recall,
                    "f1": pt.f1,
                }
                for pt in curve.points
            ],
        }
        print(f"best_threshold {curve.best_threshold:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2))
    return 0


def _region_boundaries(labels: np.ndarray) -> np.ndarray:
    edges = np.zeros(labels.shape, dtype=bool)
    edges[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    edges[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return edges


def cmd_render(args: argparse.Namespace) -> int:
    img = load_image(args.image)
    sp = load_superpixels(args.superpixels)
    g = load_graph(args.graph)
    if sp.width != img.width or sp.height != img.height:
        raise InvariantError("superpixel map and image dimensions differ")
    if sp.n_regions != g.n_real:
        raise InvariantError(
            f"superpixel map has {sp.n_regions} regions, graph has {g.n_real}"
        )
    if args.values == "predictions":
        if not args.checkpoint:
            raise ValueError("--checkpoint is required with --values predictions")
        values = model_forward(g, load_checkpoint(args.checkpoint))
    else:
        values = g.targets
    per_region = np.clip(values[: g.n_real], 0.0, 1.0)
    v = per_region[sp.labels][..., None]
    tint = np.asarray(args.tint, dtype=np.float64)
    blended = (1.0 - v) * img.data.astype(np.float64) + v * tint
    blended[_region_boundaries(sp.labels)] = np.asarray(
        args.boundary_color, dtype=np.float64
    )
    out = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    save_image(RasterImage(width=img.width, height=img.height, data=out), args.out)
    log.info("wrote overlay to %s", args.out)
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else init_params(seed=args.seed)
    if args.graph:
        g = load_graph(args.graph)
        p = renormalize(g.adjacency)
        x = g.features
    else:
        n = args.nodes
        upper = np.triu(rng.random((n, n)), k=1)
        p = renormalize(upper + upper.T)
        x = rng.random((n, model.layers[0].weight.shape[0]))

    dtype = np.float32 if args.dtype == "float32" else np.float64
    p = p.astype(dtype)
    x = x.astype(dtype)
    cast = GcnModel(
        layers=[
            GcnLayer(
                weight=layer.weight.astype(dtype),
                bias=layer.bias.astype(dtype),
                activation=layer.activation,
            )
            for layer in model.layers
        ]
    )

    with threadpool_limits(limits=1):
        for _ in range(args.warmup):
            forward_propagated(p, x, cast)
        start = time.perf_counter()
        for _ in range(args.reps):
            forward_propagated(p, x, cast)
        elapsed = time.perf_counter() - start

    per_graph_ms = elapsed / args.reps * 1000.0
    graphs_per_sec = args.reps / elapsed
    print(
        f"reps={args.reps} nodes={x.shape[0]} dtype={args.dtype} "
        f"elapsed_s={elapsed:.3f} per_graph_ms={per_graph_ms:.3f} "
        f"graphs_per_sec={graphs_per_sec:.1f}"
    )
    if args.out:
        Path(args.out).write_text(
            json.dumps(
                {
                    "reps": args.reps,
                    "nodes": int(x.shape[0]),
                    "dtype": args.dtype,
                    "elapsed_s": elapsed,
                    "per_graph_ms": per_graph_ms,
                    "graphs_per_sec": graphs_per_sec,
                }
            )
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldgraph",
        description="Superpixel graph pipeline for nutrient stress mapping",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate synthetic fields with stress masks")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--n-fields", type=int, default=317)
    ps.add_argument("--width", type=int, default=512)
    ps.add_argument("--height", type=int, default=512)
    ps.add_argument(
        "--split", nargs=3, type=float, default=[0.7, 0.15, 0.15],
        metavar=("TRAIN", "VAL", "TEST"),
    )
    ps.add_argument("--zero-dropout", type=float, default=0.1)
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(func=cmd_synth)

    pb = sub.add_parser("build-graph", help="segment fields and emit graph files")
    pb.add_argument("--manifest", required=True, help="synth manifest path")
    pb.add_argument("--out", required=True)
    pb.add_argument("--k", type=int, default=400, help="superpixel count")
    pb.add_argument("--nodes", type=int, default=DEFAULT_NODES, help="padded graph size")
    pb.add_argument("--compactness", type=float, default=30.0)
    pb.add_argument("--max-iter", type=int, default=10)
    pb.add_argument("--bins", type=int, default=8)
    pb.add_argument(
        "--task", choices=("classification", "regression"), default="classification"
    )
    pb.add_argument("--jobs", type=int, default=1)
    pb.set_defaults(func=cmd_build_graph)

    pt = sub.add_parser("train", help="train the graph model")
    pt.add_argument("--manifest", required=True, help="graphs manifest path")
    pt.add_argument("--out", required=True)
    pt.add_argument("--task", choices=("classification", "regression"), default=None)
    pt.add_argument("--batch-size", type=int, default=32)
    pt.add_argument("--epochs", type=int, default=200)
    pt.add_argument("--lr", type=float, default=1e-3)
    pt.add_argument("--patience", type=int, default=10)
    pt.add_argument("--factor", type=float, default=0.1)
    pt.add_argument("--lr-min", type=float, default=1e-6)
    pt.add_argument("--l2", type=float, default=0.01)
    pt.add_argument("--seed", type=int, default=0)
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--manifest", required=True, help="graphs manifest path")
    pe.add_argument("--split", default="test")
    pe.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    pe.add_argument(
        "--pr-curve", type=int, nargs="?", const=DEFAULT_PR_POINTS, default=None,
        help="add a precision-recall sweep with this many thresholds",
    )
    pe.add_argument("--out", default=None, help="report JSON path")
    pe.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("render", help="overlay node values on the source image")
    pr.add_argument("--image", required=True)
    pr.add_argument("--superpixels", required=True, help="label PNG from build-graph")
    pr.add_argument("--graph", required=True)
    pr.add_argument("--values", choices=("targets", "predictions"), default="targets")
    pr.add_argument("--checkpoint", default=None)
    pr.add_argument("--tint", nargs=3, type=int, default=[220, 40, 40])
    pr.add_argument("--boundary-color", nargs=3, type=int, default=[0, 0, 0])
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_render)

    pm = sub.add_parser("benchmark", help="time single-core forward passes")
    pm.add_argument("--checkpoint", default=None)
    pm.add_argument("--graph", default=None)
    pm.add_argument("--nodes", type=int, default=DEFAULT_NODES)
    pm.add_argument("--reps", type=int, default=1000)
    pm.add_argument("--warmup", type=int, default=50)
    pm.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--out", default=None)
    pm.set_defaults(func=cmd_benchmark)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FieldGraphError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
