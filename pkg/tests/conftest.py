import math

import numpy as np
import pytest

from gvgplace.topo import GraphNode, Hierarchy, LayerGraph, build_hierarchy
from gvgplace.world import OccupancyGrid, Pose, Scan, beam_angles, cast_scan, generate_floorplan

RES = 0.1

# worlds used by the desk-scale trend check
DESK_SPEC = {"room_count": 10, "corridor_width_m": 2.0, "extent_m": 40.0}
DESK_SEEDS = (0, 1, 2, 3, 4)


def walled_box(width_m, height_m, res=RES, label=1, wall_cells=1):
    """Rectangle of FREE cells surrounded by a solid wall."""
    w, h = int(round(width_m / res)), int(round(height_m / res))
    cells = np.ones((h, w), dtype=np.int8)
    cells[wall_cells:-wall_cells, wall_cells:-wall_cells] = 0
    labels = np.where(cells == 0, label, 0)
    return OccupancyGrid(w, h, res, (0.0, 0.0), cells, labels)


def open_grid(width_m, height_m, res=RES):
    w, h = int(round(width_m / res)), int(round(height_m / res))
    cells = np.zeros((h, w), dtype=np.int8)
    return OccupancyGrid(w, h, res, (0.0, 0.0), cells, np.full((h, w), 3))


def scanned_node(grid, i, x, y, heading, layer=1):
    pose = Pose(x, y, heading)
    return GraphNode(i, layer, pose, cast_scan(grid, pose), true_label=1)


def dummy_scan():
    return Scan(np.full(180, 5.0), beam_angles(180), np.ones(180, dtype=bool))


def abstract_graph(n_nodes, edges, start=1):
    """Layer-1 graph with placeholder scans; node i sits at (i, i^2 mod 7)."""
    g = LayerGraph(1)
    for i in range(start, start + n_nodes):
        g.nodes[i] = GraphNode(i, 1, Pose(float(i), float(i * i % 7), 0.0), dummy_scan(), true_label=1)
    for a, b in edges:
        g.add_edge(a, b, 1.0)
    return g


def abstract_hierarchy(n_nodes, edges):
    return Hierarchy([abstract_graph(n_nodes, edges)], {})


# node ids 1..8 stand for v_1 .. v_8
BRANCHED_EDGES = [(1, 2), (1, 5), (1, 6), (2, 3), (2, 4), (6, 7), (7, 8)]


@pytest.fixture(scope="session")
def desk_hierarchies():
    out = {}
    for s in DESK_SEEDS:
        grid = generate_floorplan(s, DESK_SPEC)
        out[f"w{s}"] = build_hierarchy(grid, 3, 1.0)
    return out


@pytest.fixture(scope="session")
def small_world():
    grid = generate_floorplan(7, {"room_count": 4, "corridor_width_m": 2.0, "extent_m": 30.0})
    return grid, build_hierarchy(grid, 3, 1.0)


def wall_distance(x, y, angle, x0, y0, x1, y1):
    """Distance from (x, y) inside [x0, x1] x [y0, y1] to the box boundary along ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    ts = []
    if c > 1e-12:
        ts.append((x1 - x) / c)
    elif c < -1e-12:
        ts.append((x0 - x) / c)
    if s > 1e-12:
        ts.append((y1 - y) / s)
    elif s < -1e-12:
        ts.append((y0 - y) / s)
    return min(ts)
