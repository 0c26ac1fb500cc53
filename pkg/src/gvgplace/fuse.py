"""Confidence trees over the layer hierarchy and the bottom-up decision pass
that fuses per-layer predictions into one label per layer-1 node."""

from __future__ import annotations

from dataclasses import dataclass, field

from .learn import Prediction
from .topo import Hierarchy


class FusionError(ValueError):
    pass


def confidence(p: float, q: float) -> float:
    """Classifier probability times input completeness."""
    if not (0 < p <= 1) or not (0 < q <= 1):
        raise FusionError(f"p and q must lie in (0, 1], got p={p}, q={q}")
    return p * q


@dataclass(eq=False)
class ConfidenceTreeNode:
    layer: int
    id: int
    label: int
    p: float
    q: float
    children: list["ConfidenceTreeNode"] = field(default_factory=list)
    c_opt: float | None = None
    label_opt: int | None = None
    parent_won: bool | None = None

    @property
    def c(self) -> float:
        return confidence(self.p, self.q)

    @property
    def n_children(self) -> int:
        return len(self.children)

    def leaves(self) -> list["ConfidenceTreeNode"]:
        if not self.children:
            return [self]
        return [leaf for ch in self.children for leaf in ch.leaves()]

    def walk(self):
        yield self
        for ch in self.children:
            yield from ch.walk()


def build_trees(hierarchy: Hierarchy, predictions) -> list[ConfidenceTreeNode]:
    """One tree per node of the top layer; children follow the hierarchy's
    child map (the node itself plus its absorbed end-nodes).

    ``predictions[l][node_id]`` is a :class:`Prediction` for every node of
    every layer.
    """

    def make(l: int, i: int) -> ConfidenceTreeNode:
        try:
            pred: Prediction = predictions[l][i]
        except KeyError:
            raise FusionError(f"missing prediction for node {i} at layer {l}") from None
        node = hierarchy.layer(l).nodes[i]
        t = ConfidenceTreeNode(l, i, int(pred.label), float(pred.p), float(node.completeness))
        if l > 1:
            t.children = [make(l - 1, j) for j in hierarchy.children(l, i)]
        return t

    top = hierarchy.L
    forest = [make(top, i) for i in hierarchy.layer(top).node_ids]
    leaf_ids = [leaf.id for tree in forest for leaf in tree.leaves()]
    if sorted(leaf_ids) != hierarchy.layer(1).node_ids:
        raise FusionError("confidence trees do not partition the layer-1 nodes")
    return forest


def _by_layer(tree: ConfidenceTreeNode) -> dict[int, list[ConfidenceTreeNode]]:
    out: dict[int, list[ConfidenceTreeNode]] = {}
    for node in tree.walk():
        out.setdefault(node.layer, []).append(node)
    return out


def decide(forest: list[ConfidenceTreeNode]) -> dict[int, int]:
    """Bottom-up decision over each tree; returns ``{leaf id: label}``.

    A parent whose confidence is at least the mean optimized confidence of
    its children wins and stamps its label on every descendant leaf; higher
    layers are processed later and so have the last word. Otherwise the
    children's mean is carried up. Optimized values are stored on the nodes.
    """
    labels: dict[int, int] = {}
    for tree in forest:
        layers = _by_layer(tree)
        for leaf in layers.get(1, []):
            leaf.c_opt = leaf.c
            leaf.label_opt = leaf.label
            leaf.parent_won = None
        for l in sorted(k for k in layers if k > 1):
            for node in layers[l]:
                mean = sum(ch.c_opt for ch in node.children) / node.n_children
                if mean > node.c:
                    node.c_opt = mean
                    node.parent_won = False
                else:
                    node.c_opt = node.c
                    node.parent_won = True
                    for leaf in node.leaves():
                        leaf.label_opt = node.label
                node.label_opt = node.label if node.parent_won else None
        for leaf in tree.leaves():
            labels[leaf.id] = leaf.label_opt
    return labels


def decision_trace(forest: list[ConfidenceTreeNode]) -> list[dict]:
    """JSON-ready audit of a decided forest, one entry per tree."""
    trees = []
    for tree in forest:
        nodes = [
            {
                "layer": n.layer,
                "id": n.id,
                "label": n.label,
                "c": n.c,
                "c_opt": n.c_opt,
                "winner": None if n.layer == 1 else ("parent" if n.parent_won else "children"),
            }
            for n in sorted(tree.walk(), key=lambda n: (-n.layer, n.id))
        ]
        trees.append({"root": tree.id, "nodes": nodes})
    return trees


def propagate_layer_labels(hierarchy: Hierarchy, predictions, l: int) -> dict[int, int]:
    """Label every layer-1 node with its layer-``l`` ancestor's prediction."""
    if not 1 <= l <= hierarchy.L:
        raise FusionError(f"layer {l} not in hierarchy of {hierarchy.L} layers")
    out: dict[int, int] = {}
    for i in hierarchy.layer(l).node_ids:
        label = int(predictions[l][i].label)
        for leaf in hierarchy.leaves_of(l, i):
            out[leaf] = label
    return out
