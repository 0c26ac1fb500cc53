"""Leave-many-out experiment: build hierarchies for every map, train one
semi-supervised model per layer on all maps at once (labels from the
training map only), fuse per test map and score layer-1 nodes."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import fuse as fusion
from .features import node_input
from .learn import (
    N_CLASSES,
    NetworkModel,
    Prediction,
    TrainConfig,
    build_adjacency,
    finetune,
    predict_batch,
    pretrain,
    save_model,
)
from .topo import Hierarchy, LayerGraph, build_hierarchy
from .world import CLASSES, OCCUPIED, FloorplanSpec, OccupancyGrid, generate_floorplan, load_grid

log = logging.getLogger(__name__)

HIDDEN_DIMS = (100, 24)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class MapSource:
    """A map given either by generator seed and spec or by a grid JSON path."""

    name: str
    seed: int | None = None
    spec: dict | None = None
    path: str | None = None

    def load(self, resolution: float) -> OccupancyGrid:
        if self.path is not None:
            return load_grid(self.path)
        if self.seed is None:
            raise ValueError(f"map {self.name!r} needs a seed or a path")
        return generate_floorplan(self.seed, FloorplanSpec.coerce(self.spec or {}), resolution)


@dataclass
class ExperimentConfig:
    maps: list[MapSource]
    train_map: str
    layers: int = 3
    node_spacing_m: float = 1.0
    resolution: float = 0.1
    alpha: float = 2 / 3
    beta: float = 1 / 3
    train: TrainConfig = field(default_factory=TrainConfig)
    layer_train: dict[int, dict] = field(default_factory=dict)
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        names = [m.name for m in self.maps]
        if len(set(names)) != len(names):
            raise ValueError("map names must be unique")
        if names.count(self.train_map) != 1:
            raise ValueError(f"training map {self.train_map!r} is not among the maps")
        if self.layers < 1:
            raise ValueError("layers must be at least 1")

    def train_config(self, layer: int) -> TrainConfig:
        """Per-layer training settings; seeds are offset by the layer index."""
        cfg = replace(self.train, **self.layer_train.get(layer, {}))
        return replace(cfg, rng_seed=cfg.rng_seed + layer)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["maps"] = [MapSource(**m) for m in d["maps"]]
        d["train"] = TrainConfig(**d.get("train", {}))
        d["layer_train"] = {int(k): v for k, v in d.get("layer_train", {}).items()}
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["layer_train"] = {str(k): v for k, v in self.layer_train.items()}
        return out


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# metrics


def evaluate(pred_labels, true_labels) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix ``C[t-1, p-1]`` = count(true t, predicted p)."""
    pred = np.asarray(pred_labels, dtype=int)
    true = np.asarray(true_labels, dtype=int)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    if not (np.isin(pred, CLASSES).all() and np.isin(true, CLASSES).all()):
        raise ValueError("labels must be in {1, 2, 3}")
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(conf, (true - 1, pred - 1), 1)
    acc = float((pred == true).mean()) if pred.size else 0.0
    return acc, conf


@dataclass
class MapMetrics:
    layer_accuracy: dict[int, float]
    fused_accuracy: float
    layer_confusion: dict[int, list[list[int]]]
    fused_confusion: list[list[int]]
    n_nodes: int


@dataclass
class MetricsReport:
    maps: dict[str, MapMetrics]
    layers: int

    def average(self) -> dict[str, float]:
        out = {}
        for l in range(1, self.layers + 1):
            vals = [m.layer_accuracy[l] for m in self.maps.values() if l in m.layer_accuracy]
            if vals:
                out[f"L{l}"] = float(np.mean(vals))
        if self.maps:
            out["fused"] = float(np.mean([m.fused_accuracy for m in self.maps.values()]))
        return out

    def rows(self) -> list[tuple[str, str, float]]:
        rows = []
        for name in sorted(self.maps):
            m = self.maps[name]
            for l in sorted(m.layer_accuracy):
                rows.append((name, str(l), m.layer_accuracy[l]))
            rows.append((name, "fused", m.fused_accuracy))
        for key, val in self.average().items():
            rows.append(("average", key.removeprefix("L"), val))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["map", "layer", "accuracy"])
        for name, layer, acc in self.rows():
            w.writerow([name, layer, f"{acc:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "maps": {
                name: {
                    "layer_accuracy": {str(k): v for k, v in m.layer_accuracy.items()},
                    "fused_accuracy": m.fused_accuracy,
                    "layer_confusion": {str(k): v for k, v in m.layer_confusion.items()},
                    "fused_confusion": m.fused_confusion,
                    "n_nodes": m.n_nodes,
                }
                for name, m in sorted(self.maps.items())
            },
            "average": self.average(),
        }


# ---------------------------------------------------------------------------
# stages


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:
                raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_stage("build-layers")
def build_all(cfg: ExperimentConfig) -> tuple[dict[str, OccupancyGrid], dict[str, Hierarchy]]:
    grids, hierarchies = {}, {}
    for src in cfg.maps:
        grids[src.name] = src.load(cfg.resolution)
        hierarchies[src.name] = build_hierarchy(grids[src.name], cfg.layers, cfg.node_spacing_m)
        log.info("map %s: layer sizes %s", src.name,
                 [len(g.nodes) for g in hierarchies[src.name].layers])
    return grids, hierarchies


def layer_inputs(graphs: list[LayerGraph]) -> np.ndarray:
    """Column-per-node input matrix, graphs in order, nodes by ascending id."""
    cols = [node_input(g.nodes[i]) for g in graphs for i in g.node_ids]
    return np.stack(cols, axis=1)


def train_layer(l: int, hierarchies: dict[str, Hierarchy], train_map: str,
                cfg: TrainConfig, alpha: float, beta: float, model_path=None):
    """Train the layer-``l`` model on every map holding layer ``l`` and
    predict all of their nodes. Only ``train_map`` contributes labels."""
    names = [n for n in hierarchies if hierarchies[n].L >= l]
    if train_map not in names:
        raise PipelineError("train", f"training map has no layer {l}")
    graphs = [hierarchies[n].layer(l) for n in names]
    X = layer_inputs(graphs)
    offsets = np.cumsum([0] + [len(g.nodes) for g in graphs])
    t = names.index(train_map)
    g_train = graphs[t]
    labeled = np.arange(offsets[t], offsets[t + 1])
    y = np.array([g_train.nodes[i].true_label for i in g_train.node_ids])

    adjacency = build_adjacency(graphs, X, alpha, beta, cfg.eps_clamp)
    net = NetworkModel.initialize((X.shape[0], *HIDDEN_DIMS, N_CLASSES), cfg.rng_seed)
    net.config = asdict(cfg)
    net = pretrain(net, X, cfg)
    net = finetune(net, X, labeled, y, adjacency, cfg)
    if model_path is not None:
        save_model(net, model_path)

    labels, probs = predict_batch(net, X)
    preds: dict[str, dict[int, Prediction]] = {}
    for k, name in enumerate(names):
        ids = graphs[k].node_ids
        sl = slice(offsets[k], offsets[k + 1])
        preds[name] = {i: Prediction(int(a), float(p)) for i, a, p in zip(ids, labels[sl], probs[sl])}
    return preds


@_stage("train")
def train_all(cfg: ExperimentConfig, hierarchies: dict[str, Hierarchy], model_dir=None):
    """Per-map, per-layer predictions ``{map: {layer: {node: Prediction}}}``."""
    layers = range(1, cfg.layers + 1)

    def job(l):
        path = None if model_dir is None else Path(model_dir) / f"layer{l}.json"
        return l, train_layer(l, hierarchies, cfg.train_map, cfg.train_config(l),
                              cfg.alpha, cfg.beta, path)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(job, layers))
    else:
        results = [job(l) for l in layers]
    out: dict[str, dict[int, dict[int, Prediction]]] = {n: {} for n in hierarchies}
    for l, per_map in results:
        for name, preds in per_map.items():
            out[name][l] = preds
    return out


@_stage("fuse")
def fuse_map(hierarchy: Hierarchy, predictions):
    forest = fusion.build_trees(hierarchy, predictions)
    labels = fusion.decide(forest)
    return labels, fusion.decision_trace(forest)


@_stage("eval")
def evaluate_map(hierarchy: Hierarchy, predictions, fused: dict[int, int]) -> MapMetrics:
    leaves = hierarchy.layer(1).node_ids
    truth = [hierarchy.layer(1).nodes[i].true_label for i in leaves]
    accs, confs = {}, {}
    for l in range(1, hierarchy.L + 1):
        prop = fusion.propagate_layer_labels(hierarchy, predictions, l)
        acc, conf = evaluate([prop[i] for i in leaves], truth)
        accs[l], confs[l] = acc, conf.tolist()
    acc, conf = evaluate([fused[i] for i in leaves], truth)
    return MapMetrics(accs, acc, confs, conf.tolist(), len(leaves))


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> MetricsReport:
    """Full pipeline; writes metrics, report and SVGs when an output
    directory is given (argument or ``cfg.output_dir``)."""
    output_dir = output_dir or cfg.output_dir
    out = Path(output_dir) if output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    grids, hierarchies = build_all(cfg)
    predictions = train_all(cfg, hierarchies, None if out is None else out)
    report = MetricsReport({}, cfg.layers)
    for name in sorted(hierarchies):
        if name == cfg.train_map:
            continue
        h = hierarchies[name]
        fused, trace = fuse_map(h, predictions[name])
        report.maps[name] = evaluate_map(h, predictions[name], fused)
        if out is not None:
            (out / f"{name}_trace.json").write_text(json.dumps(trace))
            (out / f"{name}.svg").write_text(render_map(grids[name], h.layer(1), fused))
    if out is not None:
        (out / "metrics.csv").write_text(report.to_csv())
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return report


# ---------------------------------------------------------------------------
# rendering

CLASS_COLORS = {1: "#1f77b4", 2: "#2ca02c", 3: "#d62728"}
CLASS_NAMES = {1: "small room", 2: "large room", 3: "corridor"}


@_stage("render")
def render_map(grid: OccupancyGrid, graph: LayerGraph | None = None,
               labels: dict[int, int] | None = None, scale: float = 2.0) -> str:
    """SVG of the occupancy grid with graph edges and label-colored nodes.

    Without ``labels`` nodes are colored by their ground-truth label.
    """
    W, H = grid.width, grid.height
    res = grid.resolution

    def sx(x):
        return f"{(x - grid.origin[0]) / res:.2f}"

    def sy(y):
        return f"{H - (y - grid.origin[1]) / res:.2f}"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W * scale:.0f}" height="{H * scale + 40:.0f}" '
        f'viewBox="0 0 {W} {H + 20 / scale * 2}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
        '<g id="occupancy" fill="#404040">',
    ]
    occ = grid.cells == OCCUPIED
    for iy in range(H):
        row = occ[iy]
        if not row.any():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate([[0], row.astype(np.int8), [0]])))
        y = H - iy - 1
        for x0, x1 in zip(edges[::2], edges[1::2]):
            parts.append(f'<rect x="{x0}" y="{y}" width="{x1 - x0}" height="1"/>')
    parts.append("</g>")

    if graph is not None:
        for i in graph.node_ids:
            n = graph.nodes[i]
            ix, iy = grid.cell_of(n.pose.x, n.pose.y)
            if not grid.in_bounds(ix, iy):
                raise ValueError(f"node {i} lies outside the grid")
        parts.append('<g id="edges" stroke="#888888" stroke-width="0.6">')
        for (a, b) in sorted(graph.edges):
            pa, pb = graph.nodes[a].pose, graph.nodes[b].pose
            parts.append(f'<line x1="{sx(pa.x)}" y1="{sy(pa.y)}" x2="{sx(pb.x)}" y2="{sy(pb.y)}"/>')
        parts.append("</g>")
        parts.append('<g id="nodes">')
        for i in graph.node_ids:
            n = graph.nodes[i]
            label = labels[i] if labels is not None else n.true_label
            color = CLASS_COLORS.get(label, "#000000")
            parts.append(
                f'<circle cx="{sx(n.pose.x)}" cy="{sy(n.pose.y)}" r="2.5" fill="{color}">'
                f"<title>{i}: {escape(CLASS_NAMES.get(label, str(label)))}</title></circle>"
            )
        parts.append("</g>")

    parts.append(f'<g id="legend" font-size="{8 / scale * 2:.1f}" font-family="sans-serif">')
    for k, (cls, color) in enumerate(sorted(CLASS_COLORS.items())):
        x = 5 + k * W / 3
        parts.append(f'<rect x="{x:.1f}" y="{H + 4}" width="8" height="8" stroke="{color}" fill="none"/>')
        parts.append(f'<text x="{x + 11:.1f}" y="{H + 11}">{cls}: {CLASS_NAMES[cls]}</text>')
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
