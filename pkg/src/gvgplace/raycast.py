"""Vectorized grid traversal (Amanatides & Woo) shared by the sensor
simulator and the local-map virtual scanner.

All quantities here are in cell units: a ray starting at ``(px, py)`` lies
in cell ``(floor(px), floor(py))`` and ``t`` measures distance in cells.
"""

import numpy as np

FREE = 0
OCCUPIED = 1
UNKNOWN = -1

# status codes returned by march()
HIT_OCCUPIED = 0
HIT_UNKNOWN = 1
NO_HIT = 2


def _init(px, py, angles):
    dx = np.cos(angles)
    dy = np.sin(angles)
    ix = np.floor(px).astype(np.int64)
    iy = np.floor(py).astype(np.int64)
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta_x = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        delta_y = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
        tmax_x = np.where(dx != 0, (ix + (dx > 0) - px) / dx, np.inf)
        tmax_y = np.where(dy != 0, (iy + (dy > 0) - py) / dy, np.inf)
    return ix, iy, step_x, step_y, delta_x, delta_y, tmax_x, tmax_y


def march(cells, px, py, angles, max_t):
    """Cast rays until each meets a non-FREE cell, leaves the grid or
    exceeds ``max_t``.

    The starting cell is never tested. ``cells`` is indexed ``[iy, ix]``.

    Returns
    -------
    t : ndarray
        Entry distance (cells) into the stopping cell; ``max_t`` for NO_HIT.
    status : ndarray of int
        HIT_OCCUPIED, HIT_UNKNOWN or NO_HIT per ray.
    """
    angles = np.asarray(angles, dtype=float)
    n = angles.size
    px = np.broadcast_to(np.asarray(px, dtype=float), (n,))
    py = np.broadcast_to(np.asarray(py, dtype=float), (n,))
    h, w = cells.shape
    ix, iy, sx, sy, ddx, ddy, tx, ty = _init(px, py, angles)

    t_out = np.full(n, float(max_t))
    status = np.full(n, NO_HIT, dtype=np.int64)
    idx = np.arange(n)
    while idx.size:
        along_x = tx <= ty
        t = np.where(along_x, tx, ty)
        ix = np.where(along_x, ix + sx, ix)
        iy = np.where(along_x, iy, iy + sy)
        tx = np.where(along_x, tx + ddx, tx)
        ty = np.where(along_x, ty, ty + ddy)

        inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h) & (t <= max_t)
        val = np.full(idx.size, FREE, dtype=np.int64)
        val[inside] = cells[iy[inside], ix[inside]]
        stop_occ = inside & (val == OCCUPIED)
        stop_unk = inside & (val == UNKNOWN)
        t_out[idx[stop_occ]] = t[stop_occ]
        status[idx[stop_occ]] = HIT_OCCUPIED
        t_out[idx[stop_unk]] = t[stop_unk]
        status[idx[stop_unk]] = HIT_UNKNOWN

        keep = inside & ~stop_occ & ~stop_unk
        if not keep.all():
            idx = idx[keep]
            ix, iy, sx, sy = ix[keep], iy[keep], sx[keep], sy[keep]
            ddx, ddy, tx, ty = ddx[keep], ddy[keep], tx[keep], ty[keep]
    return t_out, status


def traversed_cells(px, py, angles, lengths):
    """Cells crossed by each ray before it reaches its length.

    The start cell is included. Returns flat ``(ix, iy)`` index arrays; the
    caller clips them to its grid.
    """
    angles = np.asarray(angles, dtype=float)
    n = angles.size
    px = np.broadcast_to(np.asarray(px, dtype=float), (n,))
    py = np.broadcast_to(np.asarray(py, dtype=float), (n,))
    lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (n,))
    ix, iy, sx, sy, ddx, ddy, tx, ty = _init(px, py, angles)
    out_x = [ix.copy()]
    out_y = [iy.copy()]
    keep = np.ones(n, dtype=bool)
    while keep.any():
        along_x = tx <= ty
        t = np.where(along_x, tx, ty)
        keep = t < lengths
        ix = np.where(along_x, ix + sx, ix)[keep]
        iy = np.where(along_x, iy, iy + sy)[keep]
        tx = np.where(along_x, tx + ddx, tx)[keep]
        ty = np.where(along_x, ty, ty + ddy)[keep]
        sx, sy, ddx, ddy, lengths = sx[keep], sy[keep], ddx[keep], ddy[keep], lengths[keep]
        out_x.append(ix)
        out_y.append(iy)
    return np.concatenate(out_x), np.concatenate(out_y)
