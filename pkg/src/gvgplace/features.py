"""Fixed preprocessing layer: normalized ranges plus consecutive beam
differences, each sorted so the result ignores sensor rotation."""

import numpy as np

from .world import MAX_RANGE


class FeatureError(ValueError):
    pass


def preprocess(scan_vector, circular: bool, max_range: float = MAX_RANGE) -> np.ndarray:
    """Map an m-beam range vector to the 2m-dimensional network input.

    Differences are taken in raw beam order, ``d[k] = v[k+1] - v[k]``. The
    last slot wraps around (``v[0] - v[m-1]``) when ``circular``, otherwise
    it is zero. Both halves are sorted ascending.

    >>> preprocess([1.0, 3.0, 2.0], circular=True) * 30
    array([ 1.,  2.,  3., -1., -1.,  2.])
    """
    v = np.asarray(scan_vector, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise FeatureError("scan vector must be one-dimensional with at least two beams")
    if not np.isfinite(v).all() or (v <= 0).any():
        raise FeatureError("ranges must be positive and finite")
    if (v > max_range).any():
        raise FeatureError(f"ranges must not exceed max_range={max_range}")
    v = v / max_range
    d = np.empty_like(v)
    d[:-1] = v[1:] - v[:-1]
    d[-1] = v[0] - v[-1] if circular else 0.0
    return np.concatenate([np.sort(v), np.sort(d)])


def node_input(node) -> np.ndarray:
    """Network input for a graph node: its physical scan at layer 1, the
    interpolated 360-slot profile above."""
    if node.interpolated is None:
        return preprocess(node.scan.ranges, circular=False, max_range=node.scan.max_range)
    return preprocess(node.interpolated, circular=True, max_range=node.scan.max_range)
