"""Place classification on hierarchical topological graphs built from
simulated 2D laser scans."""

from .features import preprocess
from .fuse import build_trees, confidence, decide, propagate_layer_labels
from .learn import NetworkModel, TrainConfig, finetune, predict, pretrain
from .pipeline import ExperimentConfig, MetricsReport, evaluate, render_map, run_experiment
from .topo import Hierarchy, build_gvg, build_hierarchy, build_next_layer, fuse_virtual_scan, interpolate_scan
from .world import OccupancyGrid, Pose, Scan, cast_scan, generate_floorplan, label_at

__version__ = "0.1.0"

__all__ = [
    "OccupancyGrid", "Pose", "Scan", "cast_scan", "generate_floorplan", "label_at",
    "Hierarchy", "build_gvg", "build_hierarchy", "build_next_layer", "fuse_virtual_scan",
    "interpolate_scan", "preprocess", "NetworkModel", "TrainConfig", "pretrain", "finetune",
    "predict", "build_trees", "confidence", "decide", "propagate_layer_labels",
    "ExperimentConfig", "MetricsReport", "evaluate", "render_map", "run_experiment",
]
