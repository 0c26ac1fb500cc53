"""Graph-regularized stacked autoencoder classifier.

Column-per-sample convention throughout: a batch ``X`` has shape
``(input_dim, n)``. The network is ``input -> 100 -> 24`` sigmoid encoders
with tied-weight decoders used only for pre-training, and a bias-free
softmax head over the last hidden layer.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

log = logging.getLogger(__name__)

N_CLASSES = 3


class TrainingError(RuntimeError):
    pass


def sigmoid(x):
    """Logistic function, evaluated without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softmax_probs(h, weights) -> np.ndarray:
    """Class probabilities ``exp(w_k . h) / sum_j exp(w_j . h)``.

    ``weights`` has one row per class; ``h`` may be a single feature vector
    or a column-per-sample matrix.
    """
    logits = np.asarray(weights) @ np.asarray(h, dtype=float)
    return _softmax_logits(logits)


def _softmax_logits(logits):
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


@dataclass
class Autoencoder:
    W: np.ndarray  # (hidden, visible)
    b: np.ndarray  # (hidden,)
    c: np.ndarray  # (visible,) decoder bias


def encode_decode(H_prev, layer: Autoencoder):
    """Hidden code and tied-weight reconstruction of ``H_prev``."""
    H_prev = np.asarray(H_prev, dtype=float)
    if H_prev.shape[0] != layer.W.shape[1]:
        raise ValueError(
            f"input has {H_prev.shape[0]} rows, encoder expects {layer.W.shape[1]}"
        )
    H = sigmoid(layer.W @ H_prev + layer.b[:, None])
    H_rec = sigmoid(layer.W.T @ H + layer.c[:, None])
    return H, H_rec


@dataclass
class TrainConfig:
    lam: float = 1.0
    pretrain_epochs: int = 100
    finetune_epochs: int = 500
    step_size_pretrain: float = 0.1
    step_size_finetune: float = 0.05
    rng_seed: int = 0
    eps_clamp: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.step_size_pretrain <= 0 or self.step_size_finetune <= 0:
            raise ValueError("step sizes must be positive")
        if self.eps_clamp <= 0:
            raise ValueError("eps_clamp must be positive")


@dataclass
class NetworkModel:
    layer_dims: tuple[int, ...]
    encoders: list[Autoencoder]
    softmax: np.ndarray  # (classes, feature_dim)
    seed: int | None = None
    config: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, layer_dims, seed: int = 0) -> "NetworkModel":
        """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)),
        zero biases."""
        dims = tuple(int(d) for d in layer_dims)
        rng = np.random.default_rng(seed)

        def uniform(rows, cols):
            r = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-r, r, size=(rows, cols))

        encoders = [
            Autoencoder(uniform(dims[k + 1], dims[k]), np.zeros(dims[k + 1]), np.zeros(dims[k]))
            for k in range(len(dims) - 2)
        ]
        return cls(dims, encoders, uniform(dims[-1], dims[-2]), seed)

    @classmethod
    def zeros(cls, layer_dims) -> "NetworkModel":
        dims = tuple(int(d) for d in layer_dims)
        encoders = [
            Autoencoder(np.zeros((dims[k + 1], dims[k])), np.zeros(dims[k + 1]), np.zeros(dims[k]))
            for k in range(len(dims) - 2)
        ]
        return cls(dims, encoders, np.zeros((dims[-1], dims[-2])))

    def copy(self) -> "NetworkModel":
        return copy.deepcopy(self)

    def hidden(self, X) -> list[np.ndarray]:
        """Activations ``[X, H_1, ..., H_k]``."""
        H = [np.asarray(X, dtype=float)]
        for ae in self.encoders:
            H.append(sigmoid(ae.W @ H[-1] + ae.b[:, None]))
        return H

    def features(self, X) -> np.ndarray:
        return self.hidden(X)[-1]

    def probabilities(self, X) -> np.ndarray:
        return softmax_probs(self.features(X), self.softmax)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for k, ae in enumerate(self.encoders, 1):
            params[f"W{k}"] = ae.W
            params[f"b{k}"] = ae.b
        params["softmax"] = self.softmax
        return params

    def is_finite(self) -> bool:
        arrays = [self.softmax] + [a for ae in self.encoders for a in (ae.W, ae.b, ae.c)]
        return all(np.isfinite(a).all() for a in arrays)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "encoders": [
                {"W": ae.W.tolist(), "b": ae.b.tolist(), "c": ae.c.tolist()} for ae in self.encoders
            ],
            "softmax": self.softmax.tolist(),
            "seed": self.seed,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkModel":
        encoders = [
            Autoencoder(np.asarray(e["W"], float), np.asarray(e["b"], float), np.asarray(e["c"], float))
            for e in d["encoders"]
        ]
        return cls(tuple(d["layer_dims"]), encoders, np.asarray(d["softmax"], float),
                   d.get("seed"), d.get("config", {}))


def save_model(net: NetworkModel, path) -> None:
    Path(path).write_text(json.dumps(net.to_dict()))


def load_model(path) -> NetworkModel:
    return NetworkModel.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# unsupervised pre-training


def reconstruction_cost(H_prev, layer: Autoencoder) -> float:
    """Squared reconstruction error summed over dimensions, averaged over samples."""
    _, R = encode_decode(H_prev, layer)
    return float(((H_prev - R) ** 2).sum() / H_prev.shape[1])


def _reconstruction_grad(H_prev, layer: Autoencoder):
    n = H_prev.shape[1]
    H, R = encode_decode(H_prev, layer)
    diff = R - H_prev
    cost = float((diff ** 2).sum() / n)
    dZ2 = (2.0 / n) * diff * R * (1.0 - R)
    dW = H @ dZ2.T
    dc = dZ2.sum(axis=1)
    dZ1 = (layer.W @ dZ2) * H * (1.0 - H)
    dW += dZ1 @ H_prev.T
    db = dZ1.sum(axis=1)
    return cost, dW, db, dc


def pretrain(net: NetworkModel, X_all, cfg: TrainConfig, history: list | None = None) -> NetworkModel:
    """Greedy layer-wise autoencoder training by full-batch gradient descent.

    Each encoder learns to reconstruct the output of the one below it; the
    decoders play no further role. Returns a new model. Per-encoder cost
    traces are appended to ``history`` when given.
    """
    net = net.copy()
    H = np.asarray(X_all, dtype=float)
    for k, ae in enumerate(net.encoders, 1):
        trace = []
        for epoch in range(cfg.pretrain_epochs):
            cost, dW, db, dc = _reconstruction_grad(H, ae)
            if not np.isfinite(cost):
                raise TrainingError(f"pre-training encoder {k}: non-finite cost at epoch {epoch}")
            trace.append(cost)
            ae.W -= cfg.step_size_pretrain * dW
            ae.b -= cfg.step_size_pretrain * db
            ae.c -= cfg.step_size_pretrain * dc
        final = reconstruction_cost(H, ae)
        if not np.isfinite(final):
            raise TrainingError(f"pre-training encoder {k}: non-finite final cost")
        trace.append(final)
        log.debug("encoder %d reconstruction cost %.4g -> %.4g", k, trace[0], final)
        if history is not None:
            history.append(trace)
        H = sigmoid(ae.W @ H + ae.b[:, None])
    return net


# ---------------------------------------------------------------------------
# graph adjacency


@dataclass
class AdjacencyGraph:
    """Symmetric edge weights over the columns of a layer's input matrix."""

    S: sparse.csr_matrix
    alpha: float
    beta: float
    index: list[tuple[int, int]]  # column -> (map index, node id)

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def laplacian(self) -> sparse.csr_matrix:
        deg = np.asarray(self.S.sum(axis=1)).ravel()
        return (sparse.diags(deg) - self.S).tocsr()


def edge_weight(d_ij: float, sq_dist: float, alpha: float, beta: float, eps: float) -> float:
    return alpha / max(d_ij, eps) + beta / max(sq_dist, eps)


def build_adjacency(layer_graphs, X_all, alpha=2 / 3, beta=1 / 3, eps_clamp=1e-6) -> AdjacencyGraph:
    """Weights ``alpha/d_ij + beta/||x_i - x_j||^2`` on graph edges, zero elsewhere.

    Columns of ``X_all`` must follow the graphs in order, each graph's nodes
    in ascending id order. Edges never cross graphs.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    X_all = np.asarray(X_all, dtype=float)
    index = [(m, i) for m, g in enumerate(layer_graphs) for i in g.node_ids]
    if X_all.shape[1] != len(index):
        raise ValueError(f"X has {X_all.shape[1]} columns but the graphs hold {len(index)} nodes")
    col = {key: k for k, key in enumerate(index)}
    rows, cols, vals = [], [], []
    for m, g in enumerate(layer_graphs):
        for (a, b), d in sorted(g.edges.items()):
            if (m, a) not in col or (m, b) not in col:
                raise KeyError(f"edge ({a}, {b}) of graph {m} references an unknown node")
            i, j = col[(m, a)], col[(m, b)]
            diff = X_all[:, i] - X_all[:, j]
            s = edge_weight(d, float(diff @ diff), alpha, beta, eps_clamp)
            rows += [i, j]
            cols += [j, i]
            vals += [s, s]
    n = len(index)
    S = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return AdjacencyGraph(S, alpha, beta, index)


# ---------------------------------------------------------------------------
# supervised fine-tuning


def graph_penalty(H, S) -> float:
    """``sum_i sum_j s_ij ||h_i - h_j||^2`` over ordered pairs."""
    S = sparse.csr_matrix(S)
    coo = S.tocoo()
    diff = H[:, coo.row] - H[:, coo.col]
    return float((coo.data * (diff ** 2).sum(axis=0)).sum())


def finetune_cost_and_grad(net: NetworkModel, X, labeled, y, S, lam: float):
    """Fine-tuning objective and its gradient with respect to every
    encoder weight/bias and the softmax weights.

    ``labeled`` indexes the columns of ``X`` whose labels ``y`` (1-based
    classes) are known. The graph term only touches the encoders.
    """
    X = np.asarray(X, dtype=float)
    labeled = np.asarray(labeled, dtype=int)
    y = np.asarray(y, dtype=int) - 1
    n, n_l = X.shape[1], labeled.size
    H = net.hidden(X)
    h = H[-1]
    logits = net.softmax @ h[:, labeled]
    logp = logits - logsumexp(logits, axis=0, keepdims=True)
    j_label = -float(logp[y, np.arange(n_l)].sum()) / n_l

    d_logits = np.exp(logp)
    d_logits[y, np.arange(n_l)] -= 1.0
    d_logits /= n_l
    grads = {"softmax": d_logits @ h[:, labeled].T}
    dH = np.zeros_like(h)
    dH[:, labeled] = net.softmax.T @ d_logits

    j_graph = 0.0
    if lam and S is not None:
        S = sparse.csr_matrix(S)
        j_graph = lam / n * graph_penalty(h, S)
        deg = np.asarray(S.sum(axis=1)).ravel()
        L = sparse.diags(deg) - S
        dH += (4.0 * lam / n) * (L @ h.T).T

    for k in range(len(net.encoders), 0, -1):
        ae = net.encoders[k - 1]
        dZ = dH * H[k] * (1.0 - H[k])
        grads[f"W{k}"] = dZ @ H[k - 1].T
        grads[f"b{k}"] = dZ.sum(axis=1)
        dH = ae.W.T @ dZ
    return j_label + j_graph, grads, (j_label, j_graph)


def finetune(net: NetworkModel, X_all, labeled, y, S, cfg: TrainConfig,
             history: list | None = None) -> NetworkModel:
    """Full-batch gradient descent on label NLL plus the graph penalty."""
    net = net.copy()
    S = None if S is None else (S.S if isinstance(S, AdjacencyGraph) else S)
    params = net.parameters()
    for epoch in range(cfg.finetune_epochs):
        cost, grads, parts = finetune_cost_and_grad(net, X_all, labeled, y, S, cfg.lam)
        if not np.isfinite(cost):
            raise TrainingError(
                f"fine-tuning diverged at epoch {epoch}: label={parts[0]:.4g} graph={parts[1]:.4g}"
            )
        if history is not None:
            history.append(cost)
        for name, g in grads.items():
            params[name] -= cfg.step_size_finetune * g
    if not net.is_finite():
        raise TrainingError("fine-tuning produced non-finite parameters")
    return net


# ---------------------------------------------------------------------------
# prediction and gradient verification


@dataclass(frozen=True)
class Prediction:
    label: int
    p: float


def predict_from_probs(probs) -> Prediction:
    probs = np.asarray(probs, dtype=float)
    k = int(np.argmax(probs))  # first maximum wins ties
    return Prediction(k + 1, float(probs[k]))


def predict(net: NetworkModel, x) -> Prediction:
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    return predict_from_probs(net.probabilities(x)[:, 0])


def predict_batch(net: NetworkModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels (1-based) and predicted-class probabilities for every column."""
    P = net.probabilities(X)
    k = np.argmax(P, axis=0)
    return k + 1, P[k, np.arange(P.shape[1])]


def numerical_gradient(f, param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + step
        up = f()
        param[idx] = orig - step
        down = f()
        param[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def gradient_check(net: NetworkModel, X, labeled, y, S, lam: float, step: float = 1e-5) -> dict[str, float]:
    """Relative error ``|a - n| / (|a| + |n|)`` per parameter tensor between
    the analytic fine-tuning gradient and central differences."""
    net = net.copy()
    _, grads, _ = finetune_cost_and_grad(net, X, labeled, y, S, lam)
    params = net.parameters()

    def cost():
        return finetune_cost_and_grad(net, X, labeled, y, S, lam)[0]

    return {name: relative_error(grads[name], numerical_gradient(cost, params[name], step))
            for name in params}


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
