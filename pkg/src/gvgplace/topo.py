"""Hierarchical topological graphs over free space.

Layer 1 is a generalized Voronoi graph approximated by the medial skeleton
of the free space. Each higher layer keeps the nodes that have more than one
neighbour, drops the end-nodes, and gives every kept node a 360 degree
virtual scan fused from its own and its neighbours' scans.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import medial_axis, skeletonize

from .raycast import FREE, HIT_OCCUPIED, OCCUPIED, UNKNOWN, march, traversed_cells
from .world import (
    MAX_RANGE,
    OccupancyGrid,
    Pose,
    Scan,
    WorldError,
    cast_scans,
    label_at,
)

log = logging.getLogger(__name__)

VIRTUAL_BEAMS = 360
LAYER1_COMPLETENESS = 180 / 360


class TopologyError(ValueError):
    pass


class LayerTruncated(TopologyError):
    """Raised when a layer would contain no node with more than one neighbour."""


@dataclass(eq=False)
class GraphNode:
    id: int
    layer: int
    pose: Pose
    scan: Scan
    interpolated: np.ndarray | None = None
    completeness: float = LAYER1_COMPLETENESS
    true_label: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "layer": self.layer,
            "pose": [self.pose.x, self.pose.y, self.pose.heading],
            "scan": self.scan.to_dict(),
            "interpolated": None if self.interpolated is None else self.interpolated.tolist(),
            "completeness": self.completeness,
            "label": self.true_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphNode":
        interp = d.get("interpolated")
        return cls(
            id=int(d["id"]),
            layer=int(d["layer"]),
            pose=Pose(*d["pose"]),
            scan=Scan.from_dict(d["scan"]),
            interpolated=None if interp is None else np.asarray(interp, dtype=float),
            completeness=float(d["completeness"]),
            true_label=d.get("label"),
        )


@dataclass(eq=False)
class LayerGraph:
    """One layer G^(l): nodes keyed by id and undirected weighted edges.

    Node ids are stable across layers: a preserved node keeps its layer-1 id.
    """

    layer: int
    nodes: dict[int, GraphNode] = field(default_factory=dict)
    edges: dict[tuple[int, int], float] = field(default_factory=dict)

    def add_edge(self, i: int, j: int, distance: float | None = None) -> None:
        if i == j:
            raise TopologyError(f"self-loop on node {i}")
        if i not in self.nodes or j not in self.nodes:
            raise TopologyError(f"edge ({i}, {j}) references an unknown node")
        if distance is None:
            distance = self.nodes[i].pose.distance_to(self.nodes[j].pose)
        if not distance > 0:
            raise TopologyError(f"edge ({i}, {j}) has non-positive length")
        self.edges[(min(i, j), max(i, j))] = float(distance)

    def neighbors(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {i: [] for i in self.nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return {i: sorted(v) for i, v in adj.items()}

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "nodes": [self.nodes[i].to_dict() for i in self.node_ids],
            "edges": [[a, b, d] for (a, b), d in sorted(self.edges.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerGraph":
        g = cls(int(d["layer"]))
        for nd in d["nodes"]:
            node = GraphNode.from_dict(nd)
            g.nodes[node.id] = node
        for a, b, dist in d["edges"]:
            g.add_edge(int(a), int(b), float(dist))
        return g


@dataclass(eq=False)
class Hierarchy:
    """Layers G^(1)..G^(L) and, for every layer l >= 2, parent -> children."""

    layers: list[LayerGraph] = field(default_factory=list)
    child_map: dict[int, dict[int, list[int]]] = field(default_factory=dict)
    requested_layers: int | None = None

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def truncated(self) -> bool:
        return self.requested_layers is not None and self.L < self.requested_layers

    def layer(self, l: int) -> LayerGraph:
        return self.layers[l - 1]

    def children(self, l: int, node_id: int) -> list[int]:
        """Children at layer l-1 of node ``node_id`` at layer l."""
        return self.child_map[l][node_id]

    def leaves_of(self, l: int, node_id: int) -> list[int]:
        """Layer-1 descendants of a layer-l node."""
        frontier = [node_id]
        for k in range(l, 1, -1):
            frontier = [c for p in frontier for c in self.child_map[k][p]]
        return sorted(frontier)

    def to_dict(self) -> dict:
        return {
            "requested_layers": self.requested_layers,
            "layers": [g.to_dict() for g in self.layers],
            "child_map": {
                str(l): {str(p): list(cs) for p, cs in sorted(m.items())}
                for l, m in sorted(self.child_map.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hierarchy":
        return cls(
            layers=[LayerGraph.from_dict(g) for g in d["layers"]],
            child_map={
                int(l): {int(p): [int(c) for c in cs] for p, cs in m.items()}
                for l, m in d["child_map"].items()
            },
            requested_layers=d.get("requested_layers"),
        )


# ---------------------------------------------------------------------------
# layer 1: skeleton graph

_EIGHT = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _largest(skel: np.ndarray) -> np.ndarray:
    lab, count = ndimage.label(skel, structure=np.ones((3, 3)))
    if count > 1:
        sizes = ndimage.sum(skel, lab, index=np.arange(1, count + 1))
        skel = lab == (int(np.argmax(sizes)) + 1)
    return skel


def _pixel_degree(skel):
    k = np.ones((3, 3), dtype=int)
    k[1, 1] = 0
    return ndimage.convolve(skel.astype(int), k, mode="constant") * skel


def _trace_branches(skel: np.ndarray):
    """Split a skeleton into key clusters and the pixel paths joining them.

    Returns ``(cluster_of, clusters, branches)`` where ``cluster_of`` maps a
    key pixel to its cluster index, ``clusters`` lists pixel sets and each
    branch is ``(cluster_a, cluster_b, [pixels...])``.
    """
    deg = _pixel_degree(skel)
    key = skel & (deg != 2)
    if skel.any() and not key.any():
        # closed ring without junctions
        r, c = np.argwhere(skel)[0]
        key[r, c] = True
    lab, nclust = ndimage.label(key, structure=np.ones((3, 3)))
    cluster_of = {}
    clusters = [[] for _ in range(nclust)]
    for r, c in np.argwhere(key):
        cluster_of[(r, c)] = lab[r, c] - 1
        clusters[lab[r, c] - 1].append((int(r), int(c)))

    h, w = skel.shape

    def nbrs(p):
        r, c = p
        for dr, dc in _EIGHT:
            q = (r + dr, c + dc)
            if 0 <= q[0] < h and 0 <= q[1] < w and skel[q]:
                yield q

    visited = set()
    seen_direct = set()
    branches = []
    for ci, pixels in enumerate(clusters):
        for p in sorted(pixels):
            for q in nbrs(p):
                if q in cluster_of:
                    cj = cluster_of[q]
                    pair = tuple(sorted((p, q)))
                    if cj != ci and pair not in seen_direct:
                        seen_direct.add(pair)
                        branches.append((ci, cj, [p, q]))
                    continue
                if q in visited:
                    continue
                path = [p, q]
                visited.add(q)
                prev, cur = p, q
                while cur not in cluster_of:
                    nxt = [x for x in nbrs(cur) if x != prev and x not in visited or x in cluster_of]
                    nxt = [x for x in nxt if x != prev]
                    if not nxt:
                        break
                    # prefer stepping onto a key pixel when one is adjacent
                    nxt.sort(key=lambda x: (x not in cluster_of, x))
                    prev, cur = cur, nxt[0]
                    path.append(cur)
                    if cur not in cluster_of:
                        visited.add(cur)
                if cur in cluster_of:
                    branches.append((ci, cluster_of[cur], path))
    return cluster_of, clusters, branches


def _path_length(path) -> float:
    steps = np.diff(np.asarray(path, dtype=float), axis=0)
    return float(np.hypot(steps[:, 0], steps[:, 1]).sum())


def _prune_spurs(skel: np.ndarray, max_len_px: float, rounds: int = 3) -> np.ndarray:
    skel = skel.copy()
    for _ in range(rounds):
        deg = _pixel_degree(skel)
        _, clusters, branches = _trace_branches(skel)
        removed = False
        for ca, cb, path in branches:
            ends = [ca, cb]
            tips = [c for c in ends if len(clusters[c]) == 1 and deg[clusters[c][0]] == 1]
            if len(tips) == 1 and ca != cb and _path_length(path) < max_len_px:
                tip = tips[0]
                # keep the junction end, drop the spur pixels and the tip
                drop = path[1:] if tip == cb else path[:-1]
                for px in drop:
                    if px not in clusters[ca if tip == cb else cb]:
                        skel[px] = False
                removed = True
        if not removed:
            break
        skel = _largest(skeletonize(skel))
    return skel


def _cluster_pixel(pixels):
    arr = np.asarray(pixels, dtype=float)
    centroid = arr.mean(axis=0)
    best = min(pixels, key=lambda p: ((p[0] - centroid[0]) ** 2 + (p[1] - centroid[1]) ** 2, p))
    return best


def build_gvg(
    grid: OccupancyGrid,
    node_spacing_m: float = 1.0,
    spur_length_m: float | None = None,
    max_range_m: float = MAX_RANGE,
) -> LayerGraph:
    """Layer-1 graph: skeleton junctions and end points plus nodes sampled
    every ``node_spacing_m`` along skeleton branches. Each node gets a
    180 degree scan facing along the graph and its ground-truth label."""
    if node_spacing_m < 2 * grid.resolution:
        raise TopologyError("node spacing must be at least two cells")
    free = grid.free_mask
    if not free.any():
        raise TopologyError("grid has no FREE cells")
    spacing_px = node_spacing_m / grid.resolution
    spur_px = (0.5 * node_spacing_m if spur_length_m is None else spur_length_m) / grid.resolution

    # medial axis keeps the corner branches a thinning skeleton drops; its
    # tie-breaking is random, so pin the generator
    skel = _largest(skeletonize(medial_axis(free, rng=0)))
    skel = _prune_spurs(skel, spur_px)
    cluster_of, clusters, branches = _trace_branches(skel)

    # pixel positions of graph vertices; branch-sampled vertices follow keys
    vertex_px: list[tuple[int, int]] = [_cluster_pixel(c) for c in clusters]
    raw_edges: set[tuple[int, int]] = set()
    for ca, cb, path in branches:
        length = _path_length(path)
        nseg = max(1, int(round(length / spacing_px)))
        if ca == cb and nseg < 3:
            continue
        cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(np.asarray(path, float), axis=0).T))])
        chain = [ca]
        for k in range(1, nseg):
            j = int(np.argmin(np.abs(cum - k * length / nseg)))
            vertex_px.append(path[j])
            chain.append(len(vertex_px) - 1)
        chain.append(cb)
        for a, b in zip(chain[:-1], chain[1:]):
            if a != b and vertex_px[a] != vertex_px[b]:
                raw_edges.add((min(a, b), max(a, b)))

    # merge vertices that landed on the same pixel
    canon = {}
    remap = {}
    for v, px in enumerate(vertex_px):
        remap[v] = canon.setdefault(px, v)
    edges = {(min(remap[a], remap[b]), max(remap[a], remap[b])) for a, b in raw_edges}
    edges = {e for e in edges if e[0] != e[1]}
    verts = sorted(set(remap.values()), key=lambda v: vertex_px[v])

    # largest connected component, ids ordered by (row, col)
    adj = {v: set() for v in verts}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    best: list[int] = []
    seen: set[int] = set()
    for v in verts:
        if v in seen:
            continue
        comp, stack = [], [v]
        seen.add(v)
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(comp) > len(best):
            best = comp
    order = sorted(best, key=lambda v: vertex_px[v])
    new_id = {v: i for i, v in enumerate(order)}
    positions = [grid.cell_center(vertex_px[v][1], vertex_px[v][0]) for v in order]
    id_edges = sorted(
        (min(new_id[a], new_id[b]), max(new_id[a], new_id[b]))
        for a, b in edges if a in new_id and b in new_id
    )
    headings = _traversal_headings(positions, id_edges)
    poses = [Pose(x, y, hd) for (x, y), hd in zip(positions, headings)]
    scans = cast_scans(grid, poses, fov_deg=180, max_range_m=max_range_m)

    g = LayerGraph(1)
    for i, (pose, scan) in enumerate(zip(poses, scans)):
        g.nodes[i] = GraphNode(i, 1, pose, scan, None, LAYER1_COMPLETENESS, label_at(grid, pose))
    for a, b in id_edges:
        g.add_edge(a, b)
    return g


def _traversal_headings(positions, edges) -> list[float]:
    """Heading of each node toward its first child in a BFS from node 0;
    nodes without children keep the direction they were reached from."""
    n = len(positions)
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parent = [-1] * n
    children = [[] for _ in range(n)]
    seen = [False] * n
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for w in sorted(adj[u]):
                if not seen[w]:
                    seen[w] = True
                    parent[w] = u
                    children[u].append(w)
                    queue.append(w)

    def toward(a, b):
        return math.atan2(positions[b][1] - positions[a][1], positions[b][0] - positions[a][0])

    headings = []
    for i in range(n):
        if children[i]:
            headings.append(toward(i, children[i][0]))
        elif parent[i] >= 0:
            headings.append(toward(parent[i], i))
        else:
            headings.append(0.0)
    return headings


# ---------------------------------------------------------------------------
# higher layers


def _world_endpoints(node: GraphNode):
    s = node.scan
    keep = s.measured
    ang = node.pose.heading + s.angles[keep]
    r = s.ranges[keep]
    return ang, r, r < s.max_range


def _snap(v: float) -> float:
    return round(v * 2.0**16) / 2.0**16


def fuse_virtual_scan(
    center: GraphNode,
    neighbors: list[GraphNode],
    resolution: float = 0.1,
    max_range_m: float = MAX_RANGE,
) -> Scan:
    """Ray-cast a 360 degree scan from ``center`` in a local occupancy map
    carved from the scans of ``center`` and ``neighbors``.

    Beam end points are OCCUPIED, cells along beams FREE, all else UNKNOWN.
    Only rays whose first non-FREE cell is OCCUPIED produce a beam.
    """
    sources = [center, *neighbors]
    cx, cy = center.pose.x, center.pose.y
    rays = []
    for node in sources:
        ang, r, hit = _world_endpoints(node)
        sx, sy = _snap((node.pose.x - cx) / resolution), _snap((node.pose.y - cy) / resolution)
        rays.append((sx, sy, ang, r / resolution, hit))
    # local map in cell units with the center on a cell center; offsets are
    # snapped to a dyadic grid so traversals do not depend on the map extent
    xs = [0.0] + [v for sx, _, ang, t, _ in rays for v in (sx, *(sx + t * np.cos(ang)))]
    ys = [0.0] + [v for _, sy, ang, t, _ in rays for v in (sy, *(sy + t * np.sin(ang)))]
    pad = 2
    kx0 = int(math.floor(min(xs) - 0.5)) - pad
    ky0 = int(math.floor(min(ys) - 0.5)) - pad
    kx1 = int(math.ceil(max(xs) - 0.5)) + pad
    ky1 = int(math.ceil(max(ys) - 0.5)) + pad
    offx, offy = 0.5 - kx0, 0.5 - ky0
    w, h = kx1 - kx0 + 1, ky1 - ky0 + 1
    local = np.full((h, w), UNKNOWN, dtype=np.int8)

    occ_x, occ_y = [], []
    for sx, sy, ang, t, hit in rays:
        px, py = sx + offx, sy + offy
        fx, fy = traversed_cells(px, py, ang, t)
        ok = (fx >= 0) & (fx < w) & (fy >= 0) & (fy < h)
        local[fy[ok], fx[ok]] = FREE
        tip = (t + 1e-6)[hit]
        occ_x.append(np.floor(px + tip * np.cos(ang[hit])).astype(int))
        occ_y.append(np.floor(py + tip * np.sin(ang[hit])).astype(int))
    if occ_x:
        ex, ey = np.concatenate(occ_x), np.concatenate(occ_y)
        ok = (ex >= 0) & (ex < w) & (ey >= 0) & (ey < h)
        local[ey[ok], ex[ok]] = OCCUPIED

    pcx, pcy = offx, offy
    if not (0 <= pcx < w and 0 <= pcy < h):
        raise TopologyError("center pose lies outside its local map")
    rel = np.radians(np.arange(VIRTUAL_BEAMS, dtype=float))
    t, status = march(local, pcx, pcy, center.pose.heading + rel, max_range_m / resolution)
    keep = status == HIT_OCCUPIED
    ranges = np.clip(t[keep] * resolution, 1e-9, max_range_m)
    return Scan(ranges, rel[keep], np.ones(int(keep.sum()), dtype=bool), max_range_m)


def interpolate_scan(r: Scan) -> tuple[np.ndarray, float]:
    """Fill a 360-slot range profile by circular linear interpolation.

    Returns ``(r_hat, q)`` with ``q = len(r) / 360``. Use
    :func:`measured_slots` for the per-slot measured flags.
    """
    deg = np.round(np.degrees(r.angles[r.measured])).astype(int) % VIRTUAL_BEAMS
    vals = r.ranges[r.measured]
    deg, first = np.unique(deg, return_index=True)
    if deg.size < 2:
        raise TopologyError(f"need at least two measured beams to interpolate, got {deg.size}")
    slots = np.arange(VIRTUAL_BEAMS, dtype=float)
    r_hat = np.interp(slots, deg.astype(float), vals[first], period=VIRTUAL_BEAMS)
    r_hat[deg] = vals[first]
    return r_hat, len(r) / VIRTUAL_BEAMS


def measured_slots(r: Scan) -> np.ndarray:
    mask = np.zeros(VIRTUAL_BEAMS, dtype=bool)
    deg = np.round(np.degrees(r.angles[r.measured])).astype(int) % VIRTUAL_BEAMS
    mask[deg] = True
    return mask


def end_nodes(graph: LayerGraph) -> set[int]:
    return {i for i, nb in graph.adjacency().items() if len(nb) == 1}


def build_next_layer(
    hierarchy: Hierarchy,
    l: int,
    resolution: float = 0.1,
    max_range_m: float = MAX_RANGE,
    fuse=True,
) -> tuple[LayerGraph, dict[int, list[int]]]:
    """Build G^(l+1) from G^(l).

    Nodes with more than one neighbour survive with a fused scan; end-nodes
    and their edges are dropped and become children of their neighbour.
    ``fuse=False`` skips scan fusion (graph structure only).

    Raises :class:`LayerTruncated` when no node survives.
    """
    if not 1 <= l <= hierarchy.L:
        raise TopologyError(f"layer {l} does not exist")
    g = hierarchy.layer(l)
    adj = g.adjacency()
    kept = [i for i in g.node_ids if len(adj[i]) > 1]
    if not kept:
        raise LayerTruncated(f"layer {l + 1} would be empty")
    ends = {i for i in g.node_ids if len(adj[i]) == 1}

    nxt = LayerGraph(l + 1)
    children: dict[int, list[int]] = {}
    for i in kept:
        node = g.nodes[i]
        if fuse:
            scan = fuse_virtual_scan(node, [g.nodes[j] for j in adj[i]], resolution, max_range_m)
            r_hat, q = interpolate_scan(scan)
        else:
            scan, r_hat, q = node.scan, node.interpolated, node.completeness
        nxt.nodes[i] = GraphNode(i, l + 1, node.pose, scan, r_hat, q, node.true_label)
        children[i] = [i] + [j for j in adj[i] if j in ends]
    for (a, b), d in g.edges.items():
        if a in nxt.nodes and b in nxt.nodes:
            nxt.edges[(a, b)] = d
    return nxt, children


def build_hierarchy(
    grid: OccupancyGrid,
    layers: int = 3,
    node_spacing_m: float = 1.0,
    max_range_m: float = MAX_RANGE,
) -> Hierarchy:
    """Layer-1 GVG plus ``layers - 1`` applications of :func:`build_next_layer`.

    If a layer comes out empty the hierarchy stops early; the shortfall is
    logged and visible through :attr:`Hierarchy.truncated`.
    """
    if layers < 1:
        raise TopologyError("need at least one layer")
    h = Hierarchy([build_gvg(grid, node_spacing_m, max_range_m=max_range_m)], {}, layers)
    extend_hierarchy(h, layers, grid.resolution, max_range_m)
    return h


def extend_hierarchy(h: Hierarchy, layers: int, resolution=0.1, max_range_m=MAX_RANGE, fuse=True):
    h.requested_layers = layers
    while h.L < layers:
        try:
            g, children = build_next_layer(h, h.L, resolution, max_range_m, fuse=fuse)
        except LayerTruncated as exc:
            log.warning("hierarchy truncated at L=%d of %d requested: %s", h.L, layers, exc)
            break
        h.layers.append(g)
        h.child_map[g.layer] = children
    return h


__all__ = [
    "GraphNode", "LayerGraph", "Hierarchy", "TopologyError", "LayerTruncated",
    "build_gvg", "build_next_layer", "build_hierarchy", "extend_hierarchy",
    "fuse_virtual_scan", "interpolate_scan", "measured_slots", "end_nodes",
    "LAYER1_COMPLETENESS", "VIRTUAL_BEAMS", "WorldError",
]
