import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvgplace.raycast import FREE
from gvgplace.topo import (
    LAYER1_COMPLETENESS,
    Hierarchy,
    LayerGraph,
    LayerTruncated,
    TopologyError,
    build_gvg,
    build_next_layer,
    end_nodes,
    extend_hierarchy,
    fuse_virtual_scan,
    interpolate_scan,
    measured_slots,
)
from gvgplace.world import OccupancyGrid, Scan

from conftest import BRANCHED_EDGES, RES, abstract_hierarchy, scanned_node, walled_box, wall_distance


def degrees(g: LayerGraph):
    return {i: len(nb) for i, nb in g.adjacency().items()}


def virtual(angles_deg, ranges):
    a = np.radians(np.asarray(angles_deg, dtype=float))
    return Scan(np.asarray(ranges, dtype=float), a, np.ones(a.size, dtype=bool))


# ---------------------------------------------------------------------------
# layer-1 skeleton graph


def corridor_section(length_m, width_m):
    """Corridor walled on its long sides, open where it leaves the grid."""
    w, h = int(round(length_m / RES)), int(round(width_m / RES)) + 2
    cells = np.ones((h, w), dtype=np.int8)
    cells[1:-1, :] = FREE
    return OccupancyGrid(w, h, RES, (0.0, 0.0), cells, np.where(cells == FREE, 3, 0))


@pytest.mark.parametrize("width", [2.0, 2.1])
def test_straight_corridor_is_a_chain(width):
    grid = corridor_section(10.0, width)
    g = build_gvg(grid, 1.0)
    deg = degrees(g)
    assert len(g.nodes) >= 9
    assert max(deg.values()) <= 2
    assert sum(d == 1 for d in deg.values()) == 2
    assert len(g.edges) == len(g.nodes) - 1
    # nodes on the centerline
    ys = [n.pose.y for n in g.nodes.values()]
    assert np.allclose(ys, 0.1 + width / 2, atol=RES)


def test_closed_corridor_forks_only_at_its_ends():
    # a closed rectangle's medial axis branches into the four corners
    grid = walled_box(10.2, 2.2, label=3)
    g = build_gvg(grid, 1.0)
    forks = [g.nodes[i].pose.x for i, d in degrees(g).items() if d >= 3]
    assert len(forks) == 2
    assert min(forks) < 1.6 and max(forks) > 10.2 - 1.6


def test_gvg_is_deterministic():
    grid = corridor_section(10.0, 2.0)
    a, b = build_gvg(grid), build_gvg(grid)
    assert a.edges == b.edges
    assert [n.pose for n in a.nodes.values()] == [n.pose for n in b.nodes.values()]


def test_plus_crossing_has_junction():
    n = 120
    cells = np.ones((n, n), dtype=np.int8)
    cells[50:70, 1:-1] = FREE
    cells[1:-1, 50:70] = FREE
    grid = OccupancyGrid(n, n, RES, (0.0, 0.0), cells, np.where(cells == FREE, 3, 0))
    g = build_gvg(grid, 1.0)
    deg = degrees(g)
    hubs = [g.nodes[i].pose for i, d in deg.items() if d >= 3]
    # the crossing's center is the ridge maximum of the distance transform
    assert any(abs(p.x - 6.0) < 0.5 and abs(p.y - 6.0) < 0.5 for p in hubs)


def test_fully_occupied_grid_rejected():
    grid = OccupancyGrid(20, 20, RES, (0.0, 0.0), np.ones((20, 20)), np.zeros((20, 20)))
    with pytest.raises(TopologyError):
        build_gvg(grid)


def test_spacing_below_two_cells_rejected():
    with pytest.raises(TopologyError):
        build_gvg(walled_box(5.0, 5.0), node_spacing_m=0.1)


def test_layer1_nodes(small_world):
    grid, h = small_world
    g = h.layer(1)
    assert 30 <= len(g.nodes) <= 400
    assert g.node_ids == list(range(len(g.nodes)))
    for node in g.nodes.values():
        ix, iy = grid.cell_of(node.pose.x, node.pose.y)
        assert grid.cells[iy, ix] == FREE
        assert node.true_label == grid.labels[iy, ix]
        assert node.completeness == LAYER1_COMPLETENESS
        assert len(node.scan) == 180 and node.interpolated is None
    for (a, b), d in g.edges.items():
        assert a < b and d > 0
        assert d == pytest.approx(g.nodes[a].pose.distance_to(g.nodes[b].pose))
    # one connected graph
    seen, stack = {0}, [0]
    adj = g.adjacency()
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    assert len(seen) == len(g.nodes)


def test_edge_validation():
    h = abstract_hierarchy(3, [(1, 2)])
    g = h.layer(1)
    with pytest.raises(TopologyError):
        g.add_edge(1, 1)
    with pytest.raises(TopologyError):
        g.add_edge(1, 99)
    with pytest.raises(TopologyError):
        g.add_edge(2, 3, 0.0)


# ---------------------------------------------------------------------------
# layering on abstract graphs (structure only)


def test_path_abc_collapses_to_b():
    h = abstract_hierarchy(3, [(1, 2), (2, 3)])  # a=1, b=2, c=3
    g2, children = build_next_layer(h, 1, fuse=False)
    assert g2.node_ids == [2]
    assert sorted(children[2]) == [1, 2, 3]
    assert children[2][0] == 2  # the preserved node comes first
    assert g2.edges == {}


def test_single_edge_truncates():
    h = abstract_hierarchy(2, [(1, 2)])
    with pytest.raises(LayerTruncated):
        build_next_layer(h, 1, fuse=False)
    extend_hierarchy(h, 3, fuse=False)
    assert h.L == 1 and h.truncated


def test_truncation_is_logged(caplog):
    h = abstract_hierarchy(2, [(1, 2)])
    with caplog.at_level("WARNING"):
        extend_hierarchy(h, 2, fuse=False)
    assert "truncated" in caplog.text


def test_branched_layers():
    h = abstract_hierarchy(8, BRANCHED_EDGES)
    extend_hierarchy(h, 3, fuse=False)
    assert h.L == 3 and not h.truncated
    assert h.layer(2).node_ids == [1, 2, 6, 7]
    assert h.child_map[2] == {1: [1, 5], 2: [2, 3, 4], 6: [6], 7: [7, 8]}
    assert sorted(h.layer(2).edges) == [(1, 2), (1, 6), (6, 7)]
    assert h.layer(3).node_ids == [1, 6]
    assert h.child_map[3] == {1: [1, 2], 6: [6, 7]}
    assert h.leaves_of(3, 1) == [1, 2, 3, 4, 5]
    assert h.leaves_of(3, 6) == [6, 7, 8]
    # a fourth layer would be empty
    extend_hierarchy(h, 4, fuse=False)
    assert h.L == 3 and h.truncated


def test_hierarchy_json_roundtrip(small_world):
    _, h = small_world
    back = Hierarchy.from_dict(h.to_dict())
    assert back.L == h.L and back.child_map == h.child_map
    for l in range(1, h.L + 1):
        a, b = h.layer(l), back.layer(l)
        assert a.node_ids == b.node_ids and a.edges == b.edges
        for i in a.node_ids:
            assert a.nodes[i].scan == b.nodes[i].scan
            assert a.nodes[i].completeness == b.nodes[i].completeness
            assert a.nodes[i].true_label == b.nodes[i].true_label
            if a.nodes[i].interpolated is not None:
                assert np.array_equal(a.nodes[i].interpolated, b.nodes[i].interpolated)


@st.composite
def trees(draw):
    n = draw(st.integers(2, 30))
    parents = [draw(st.integers(1, k - 1)) for k in range(2, n + 1)]
    return n, [(p, k) for p, k in zip(parents, range(2, n + 1))]


@settings(max_examples=60, deadline=None)
@given(trees())
def test_layer_invariants_on_random_trees(tree):
    n, edges = tree
    h = abstract_hierarchy(n, edges)
    extend_hierarchy(h, 6, fuse=False)
    for l in range(1, h.L):
        g, nxt = h.layer(l), h.layer(l + 1)
        deg = degrees(g)
        assert nxt.node_ids == sorted(i for i in g.node_ids if deg[i] > 1)
        assert len(nxt.nodes) <= len(g.nodes)
        # every node of layer l sits in exactly one child set
        members = sorted(c for cs in h.child_map[l + 1].values() for c in cs)
        assert members == g.node_ids
        eliminated = set(g.node_ids) - set(nxt.node_ids)
        ends = end_nodes(g)
        assert eliminated == ends or (eliminated <= ends and len(g.nodes) == 2)
        for p, cs in h.child_map[l + 1].items():
            assert cs[0] == p and set(cs[1:]) <= ends
    if h.truncated:
        assert all(d <= 1 for d in degrees(h.layer(h.L)).values())


def test_real_hierarchy_invariants(small_world):
    _, h = small_world
    assert h.L == 3
    for l in range(1, h.L):
        g, nxt = h.layer(l), h.layer(l + 1)
        deg = degrees(g)
        assert len(nxt.nodes) == sum(d > 1 for d in deg.values())
        members = sorted(c for cs in h.child_map[l + 1].values() for c in cs)
        assert members == g.node_ids
        for i, node in nxt.nodes.items():
            assert node.pose == g.nodes[i].pose
            assert node.interpolated.shape == (360,)
            assert node.completeness == pytest.approx(len(node.scan) / 360)
            assert 0 < node.completeness <= 1


# ---------------------------------------------------------------------------
# virtual scans


@pytest.mark.parametrize("gap", [0.5, 1.0])
def test_enclosed_room_gives_complete_scan(gap):
    grid = walled_box(4.2, 4.2)
    c = scanned_node(grid, 0, 2.1, 2.1, 0.0)
    behind = scanned_node(grid, 1, 2.1 - gap, 2.1, 0.0)
    ahead = scanned_node(grid, 2, 2.1 + gap, 2.1, math.pi)
    scan = fuse_virtual_scan(c, [behind, ahead])
    assert len(scan) == 360
    r_hat, q = interpolate_scan(scan)
    assert q == 1.0
    expect = [wall_distance(2.1, 2.1, a, 0.1, 0.1, 4.1, 4.1) for a in scan.angles]
    assert np.allclose(scan.ranges, expect, atol=RES * math.sqrt(2))


def test_fusion_through_build_next_layer_matches_direct_call():
    grid = walled_box(8.2, 2.2, label=3)
    a = scanned_node(grid, 0, 1.5, 1.1, 0.0)
    b = scanned_node(grid, 1, 3.0, 1.1, 0.0)
    c = scanned_node(grid, 2, 4.5, 1.1, math.pi)
    g = LayerGraph(1, {0: a, 1: b, 2: c})
    g.add_edge(0, 1)
    g.add_edge(1, 2)
    g2, children = build_next_layer(Hierarchy([g], {}), 1, RES)
    assert g2.node_ids == [1] and sorted(children[1]) == [0, 1, 2]
    node = g2.nodes[1]
    assert node.scan == fuse_virtual_scan(b, [a, c], RES)
    r_hat, q = interpolate_scan(node.scan)
    assert np.array_equal(node.interpolated, r_hat) and node.completeness == q


def test_sector_union_bounds_coverage():
    grid = walled_box(12.2, 6.2)
    c = scanned_node(grid, 0, 6.0, 3.1, 0.0)
    nb = scanned_node(grid, 1, 5.0, 3.1, 0.0)  # collinear, behind, same facing
    scan = fuse_virtual_scan(c, [nb])
    assert 0 < len(scan) < 360
    hx = c.pose.x + scan.ranges * np.cos(scan.angles)
    # every measured end point must lie in a half plane some sensor looked at
    seen = (hx >= c.pose.x - RES) | (hx >= nb.pose.x - RES)
    assert seen.all()
    # nothing is measured straight backwards past the rear sensor
    back = np.abs(np.degrees(scan.angles) - 180) < 60
    assert not back.any()


def test_adding_neighbors_never_loses_beams(small_world):
    _, h = small_world
    g = h.layer(1)
    adj = g.adjacency()
    checked = 0
    for i in g.node_ids:
        if len(adj[i]) < 2:
            continue
        center = g.nodes[i]
        nbs = [g.nodes[j] for j in adj[i]]
        one = fuse_virtual_scan(center, nbs[:1], RES)
        both = fuse_virtual_scan(center, nbs, RES)
        assert set(np.round(np.degrees(one.angles)).astype(int)) <= set(
            np.round(np.degrees(both.angles)).astype(int)
        )
        checked += 1
        if checked == 15:
            break
    assert checked == 15


def test_virtual_scan_beam_order():
    grid = walled_box(4.2, 4.2)
    c = scanned_node(grid, 0, 2.1, 2.1, 0.7)
    scan = fuse_virtual_scan(c, [scanned_node(grid, 1, 2.1, 2.6, 3.5)])
    assert np.all(np.diff(scan.angles) > 0)
    assert scan.measured.all()


# ---------------------------------------------------------------------------
# interpolation and completeness


def test_interpolate_two_beams():
    r_hat, q = interpolate_scan(virtual([0, 180], [1.0, 3.0]))
    assert r_hat[90] == pytest.approx(2.0)
    assert r_hat[0] == 1.0 and r_hat[180] == 3.0
    # circular: 270 lies between 180 (3.0) and 360 == 0 (1.0)
    assert r_hat[270] == pytest.approx(2.0)
    assert q == pytest.approx(2 / 360)


def test_interpolate_wraps_across_zero():
    r_hat, _ = interpolate_scan(virtual([350, 10, 100], [2.0, 4.0, 4.0]))
    assert r_hat[0] == pytest.approx(3.0)
    assert r_hat[355] == pytest.approx(2.5)


def test_interpolate_complete_is_identity_and_idempotent():
    rng = np.random.default_rng(3)
    ranges = rng.uniform(0.5, 29.0, 360)
    scan = virtual(np.arange(360), ranges)
    r_hat, q = interpolate_scan(scan)
    assert q == 1.0 and np.array_equal(r_hat, ranges)
    again, q2 = interpolate_scan(virtual(np.arange(360), r_hat))
    assert q2 == 1.0 and np.array_equal(again, r_hat)


def test_completeness_332_of_360():
    rng = np.random.default_rng(0)
    keep = np.sort(rng.choice(360, 332, replace=False))
    scan = virtual(keep, rng.uniform(1, 10, 332))
    r_hat, q = interpolate_scan(scan)
    assert q == pytest.approx(0.9222, abs=1e-4)
    assert measured_slots(scan).sum() == 332
    assert np.array_equal(r_hat[keep], scan.ranges)


def test_interpolate_needs_two_beams():
    with pytest.raises(TopologyError):
        interpolate_scan(virtual([45], [2.0]))


@settings(max_examples=40, deadline=None)
@given(st.sets(st.integers(0, 359), min_size=2, max_size=360), st.integers(0, 2**31))
def test_interpolation_stays_within_neighbours(slots, seed):
    slots = np.array(sorted(slots))
    vals = np.random.default_rng(seed).uniform(0.2, 30.0, slots.size)
    r_hat, q = interpolate_scan(virtual(slots, vals))
    assert q == pytest.approx(slots.size / 360)
    assert np.array_equal(r_hat[slots], vals)
    assert r_hat.min() >= vals.min() - 1e-12 and r_hat.max() <= vals.max() + 1e-12
