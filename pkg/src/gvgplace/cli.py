"""Command line interface: ``gvgplace <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .learn import Prediction, TrainConfig
from .pipeline import (
    ExperimentConfig,
    MapSource,
    MetricsReport,
    PipelineError,
    evaluate_map,
    fuse_map,
    load_config,
    render_map,
    run_experiment,
    train_all,
)
from .topo import Hierarchy, build_hierarchy
from .world import FloorplanSpec, generate_floorplan, load_grid, save_grid

log = logging.getLogger("gvgplace")


def _read_json(path):
    return json.loads(Path(path).read_text())


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _named_paths(items) -> dict[str, str]:
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            path = item
            name = Path(item).stem
        out[name] = path
    return out


def load_hierarchy(path) -> Hierarchy:
    return Hierarchy.from_dict(_read_json(path))


def predictions_to_dict(preds) -> dict:
    return {
        name: {str(l): {str(i): {"label": p.label, "p": p.p} for i, p in sorted(per.items())}
               for l, per in sorted(layers.items())}
        for name, layers in sorted(preds.items())
    }


def predictions_from_dict(d) -> dict:
    return {
        name: {int(l): {int(i): Prediction(int(v["label"]), float(v["p"])) for i, v in per.items()}
               for l, per in layers.items()}
        for name, layers in d.items()
    }


def cmd_gen_world(args):
    spec = FloorplanSpec(args.rooms, args.corridor_width, args.extent)
    grid = generate_floorplan(args.seed, spec, args.resolution)
    save_grid(grid, args.out)


def cmd_build_layers(args):
    grid = load_grid(args.grid)
    h = build_hierarchy(grid, args.layers, args.spacing)
    if h.truncated:
        log.warning("hierarchy has %d of %d requested layers", h.L, args.layers)
    _write(args.out, json.dumps(h.to_dict()))


def _train_config(args) -> tuple[TrainConfig, float, float]:
    """Training settings from the ``train``, ``alpha`` and ``beta`` keys of
    an experiment config; its map list is not needed here."""
    d = _read_json(args.config) if args.config else {}
    base = TrainConfig(**d.get("train", {}))
    alpha, beta = d.get("alpha", 2 / 3), d.get("beta", 1 / 3)
    if args.seed is not None:
        base = replace(base, rng_seed=args.seed)
    return base, alpha, beta


def cmd_train(args):
    hierarchies = {n: load_hierarchy(p) for n, p in _named_paths(args.hierarchy).items()}
    base, alpha, beta = _train_config(args)
    layers = max(h.L for h in hierarchies.values())
    cfg = ExperimentConfig(
        [MapSource(n, path=p) for n, p in _named_paths(args.hierarchy).items()],
        args.train_map, layers=layers, alpha=alpha, beta=beta, train=base,
    )
    if args.models:
        Path(args.models).mkdir(parents=True, exist_ok=True)
    preds = train_all(cfg, hierarchies, args.models)
    _write(args.out, json.dumps(predictions_to_dict(preds)))


def cmd_fuse(args):
    h = load_hierarchy(args.hierarchy)
    preds = predictions_from_dict(_read_json(args.predictions))
    name = args.map or Path(args.hierarchy).stem
    labels, trace = fuse_map(h, preds[name])
    _write(args.out, json.dumps({"labels": {str(k): v for k, v in sorted(labels.items())},
                                 "trace": trace}))


def cmd_eval(args):
    hierarchies = {n: load_hierarchy(p) for n, p in _named_paths(args.hierarchy).items()}
    preds = predictions_from_dict(_read_json(args.predictions))
    report = MetricsReport({}, max(h.L for h in hierarchies.values()))
    for name, h in sorted(hierarchies.items()):
        if name == args.train_map:
            continue
        fused, _ = fuse_map(h, preds[name])
        report.maps[name] = evaluate_map(h, preds[name], fused)
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    _write(args.csv, report.to_csv())


def cmd_render(args):
    grid = load_grid(args.grid)
    graph = load_hierarchy(args.hierarchy).layer(1) if args.hierarchy else None
    labels = None
    if args.labels:
        labels = {int(k): int(v) for k, v in _read_json(args.labels)["labels"].items()}
    _write(args.out, render_map(grid, graph, labels))


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train = replace(cfg.train, rng_seed=args.seed)
    out = args.out or cfg.output_dir or "results"
    report = run_experiment(cfg, out)
    sys.stdout.write(report.to_csv())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gvgplace", description="Multi-layer GVG place classification")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-world", help="generate a labeled synthetic floor plan")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rooms", type=int, default=4)
    s.add_argument("--corridor-width", type=float, default=2.0)
    s.add_argument("--extent", type=float, default=30.0)
    s.add_argument("--resolution", type=float, default=0.1)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_gen_world, stage="gen-world")

    s = sub.add_parser("build-layers", help="build the layer hierarchy of a grid")
    s.add_argument("--grid", required=True)
    s.add_argument("--layers", type=int, default=3)
    s.add_argument("--spacing", type=float, default=1.0)
    s.add_argument("-o", "--out", default="-")
    s.set_defaults(func=cmd_build_layers, stage="build-layers")

    s = sub.add_parser("train", help="train per-layer models, write predictions")
    s.add_argument("--hierarchy", nargs="+", required=True, metavar="NAME=PATH")
    s.add_argument("--train-map", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--models", help="directory for model checkpoints")
    s.add_argument("-o", "--out", default="-")
    s.set_defaults(func=cmd_train, stage="train")

    s = sub.add_parser("fuse", help="confidence-tree fusion for one map")
    s.add_argument("--hierarchy", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--map", help="map name in the predictions file (default: file stem)")
    s.add_argument("-o", "--out", default="-")
    s.set_defaults(func=cmd_fuse, stage="fuse")

    s = sub.add_parser("eval", help="accuracy of propagated and fused labels")
    s.add_argument("--hierarchy", nargs="+", required=True, metavar="NAME=PATH")
    s.add_argument("--predictions", required=True)
    s.add_argument("--train-map", required=True)
    s.add_argument("--csv", default="-")
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval, stage="eval")

    s = sub.add_parser("render", help="SVG of a grid and its labeled layer-1 graph")
    s.add_argument("--grid", required=True)
    s.add_argument("--hierarchy")
    s.add_argument("--labels", help="output of the fuse command")
    s.add_argument("-o", "--out", default="-")
    s.set_defaults(func=cmd_render, stage="render")

    s = sub.add_parser("run", help="full leave-many-out experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_run, stage="run")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"gvgplace: {args.stage} failed in stage {exc.stage}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"gvgplace: {args.stage} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
