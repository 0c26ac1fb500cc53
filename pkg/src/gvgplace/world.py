"""Synthetic labeled indoor worlds and a 2D laser range finder simulator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .raycast import FREE, HIT_OCCUPIED, OCCUPIED, UNKNOWN, march

NO_LABEL = 0
SMALL_ROOM, LARGE_ROOM, CORRIDOR = 1, 2, 3
CLASSES = (SMALL_ROOM, LARGE_ROOM, CORRIDOR)

MAX_RANGE = 30.0
DEFAULT_RESOLUTION = 0.1

WALL_M = 0.2
DOOR_M = 1.0
SMALL_ROOM_M = (3.0, 5.0)
LARGE_ROOM_M = (7.0, 10.0)


class WorldError(ValueError):
    """Invalid grid, pose or sensor request."""


class FloorplanError(WorldError):
    """The requested floor plan cannot be generated."""


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Cell map with per-cell ground-truth place labels.

    ``cells`` and ``labels`` are indexed ``[row, col]`` = ``[iy, ix]``; cell
    ``(0, 0)`` has its lower-left corner at ``origin``.
    """

    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise WorldError(f"resolution must be positive, got {self.resolution}")
        if self.width < 1 or self.height < 1:
            raise WorldError("grid must have at least one cell")
        cells = np.asarray(self.cells, dtype=np.int8).reshape(self.height, self.width)
        labels = np.asarray(self.labels, dtype=np.int8).reshape(self.height, self.width)
        if not np.isin(cells, (FREE, OCCUPIED, UNKNOWN)).all():
            raise WorldError("cell states must be FREE, OCCUPIED or UNKNOWN")
        free = cells == FREE
        if not np.isin(labels[free], CLASSES).all():
            raise WorldError("every FREE cell needs a class label in {1, 2, 3}")
        if (labels[cells == OCCUPIED] != NO_LABEL).any():
            raise WorldError("OCCUPIED cells must carry no label")
        cells.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            (self.width, self.height, self.resolution, self.origin)
            == (other.width, other.height, other.resolution, other.origin)
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def free_mask(self):
        return self.cells == FREE

    def to_cell(self, x, y):
        """Continuous cell coordinates of a metric point."""
        return (x - self.origin[0]) / self.resolution, (y - self.origin[1]) / self.resolution

    def cell_of(self, x, y) -> tuple[int, int]:
        cx, cy = self.to_cell(x, y)
        return int(math.floor(cx)), int(math.floor(cy))

    def cell_center(self, ix, iy) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix, iy) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "resolution": self.resolution,
            "origin": list(self.origin),
            "cells": self.cells.ravel().tolist(),
            "labels": self.labels.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OccupancyGrid":
        try:
            return cls(
                width=int(d["width"]),
                height=int(d["height"]),
                resolution=float(d["resolution"]),
                origin=tuple(d["origin"]),
                cells=np.asarray(d["cells"], dtype=np.int8),
                labels=np.asarray(d["labels"], dtype=np.int8),
            )
        except (KeyError, TypeError) as exc:
            raise WorldError(f"malformed grid document: {exc}") from exc


def save_grid(grid: OccupancyGrid, path) -> None:
    Path(path).write_text(json.dumps(grid.to_dict()))


def load_grid(path) -> OccupancyGrid:
    return OccupancyGrid.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise WorldError("pose must be finite")
        object.__setattr__(self, "heading", float(self.heading) % (2 * math.pi))

    def distance_to(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True, eq=False)
class Scan:
    """Range beams with their bearings relative to the sensor heading.

    Physical scans hold every beam of the field of view. Virtual scans built
    from local maps keep only the measured beams, so their length varies.
    """

    ranges: np.ndarray
    angles: np.ndarray
    measured: np.ndarray
    max_range: float = MAX_RANGE

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=float)
        angles = np.asarray(self.angles, dtype=float)
        measured = np.asarray(self.measured, dtype=bool)
        if not (ranges.shape == angles.shape == measured.shape) or ranges.ndim != 1:
            raise WorldError("ranges, angles and measured must be equal-length vectors")
        if ranges.size and not ((ranges > 0) & (ranges <= self.max_range)).all():
            raise WorldError("beam ranges must lie in (0, max_range]")
        for name, arr in (("ranges", ranges), ("angles", angles), ("measured", measured)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.ranges.size

    def __eq__(self, other):
        if not isinstance(other, Scan):
            return NotImplemented
        return (
            self.max_range == other.max_range
            and np.array_equal(self.ranges, other.ranges)
            and np.array_equal(self.angles, other.angles)
            and np.array_equal(self.measured, other.measured)
        )

    @property
    def start_angle(self) -> float:
        return float(self.angles[0]) if self.angles.size else 0.0

    @property
    def angular_resolution(self) -> float:
        """Beam spacing in degrees."""
        return 1.0

    @property
    def measured_count(self) -> int:
        return int(self.measured.sum())

    def to_dict(self) -> dict:
        return {
            "ranges": self.ranges.tolist(),
            "angles": self.angles.tolist(),
            "measured": self.measured.tolist(),
            "max_range": self.max_range,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scan":
        return cls(d["ranges"], d["angles"], d["measured"], d.get("max_range", MAX_RANGE))


def beam_angles(fov_deg: float, angular_resolution_deg: float = 1.0) -> np.ndarray:
    """Beam bearings (radians, relative to heading) across a field of view.

    A 180 degree sensor spans [-90, 89] degrees; a 360 degree one [0, 359].
    """
    count = int(round(fov_deg / angular_resolution_deg))
    start = 0.0 if fov_deg >= 360 else -fov_deg / 2.0
    return np.radians(start + angular_resolution_deg * np.arange(count))


def _check_free_pose(grid: OccupancyGrid, pose: Pose) -> tuple[int, int]:
    ix, iy = grid.cell_of(pose.x, pose.y)
    if not grid.in_bounds(ix, iy):
        raise WorldError(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies outside the grid")
    if grid.cells[iy, ix] != FREE:
        raise WorldError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is not in a FREE cell")
    return ix, iy


def cast_scan(
    grid: OccupancyGrid,
    pose: Pose,
    fov_deg: float = 180,
    angular_resolution_deg: float = 1,
    max_range_m: float = MAX_RANGE,
) -> Scan:
    """Simulate a laser scan by ray casting on the grid.

    A 180 degree scan models the physical sensor: beams that see nothing
    report ``max_range_m`` and still count as measured. For 360 degree
    (virtual) scans such beams are flagged unmeasured.
    """
    if fov_deg not in (180, 360):
        raise WorldError(f"fov_deg must be 180 or 360, got {fov_deg}")
    if angular_resolution_deg != 1:
        raise WorldError("only 1 degree angular resolution is supported")
    _check_free_pose(grid, pose)
    rel = beam_angles(fov_deg, angular_resolution_deg)
    px, py = grid.to_cell(pose.x, pose.y)
    t, status = march(grid.cells, px, py, pose.heading + rel, max_range_m / grid.resolution)
    hit = status == HIT_OCCUPIED
    ranges = np.where(hit, t * grid.resolution, max_range_m)
    ranges = np.clip(ranges, 1e-9, max_range_m)
    measured = np.ones_like(hit) if fov_deg == 180 else hit
    return Scan(ranges, rel, measured, max_range_m)


def cast_scans(grid: OccupancyGrid, poses, fov_deg=180, max_range_m=MAX_RANGE) -> list[Scan]:
    """Batch version of :func:`cast_scan` (one traversal for all poses)."""
    poses = list(poses)
    if not poses:
        return []
    if fov_deg not in (180, 360):
        raise WorldError(f"fov_deg must be 180 or 360, got {fov_deg}")
    for pose in poses:
        _check_free_pose(grid, pose)
    rel = beam_angles(fov_deg)
    k = rel.size
    xy = np.array([grid.to_cell(p.x, p.y) for p in poses])
    headings = np.array([p.heading for p in poses])
    angles = (headings[:, None] + rel[None, :]).ravel()
    t, status = march(
        grid.cells, np.repeat(xy[:, 0], k), np.repeat(xy[:, 1], k), angles,
        max_range_m / grid.resolution,
    )
    hit = (status == HIT_OCCUPIED).reshape(len(poses), k)
    ranges = np.clip(np.where(hit, t.reshape(len(poses), k) * grid.resolution, max_range_m),
                     1e-9, max_range_m)
    scans = []
    for i in range(len(poses)):
        measured = np.ones(k, dtype=bool) if fov_deg == 180 else hit[i]
        scans.append(Scan(ranges[i], rel, measured, max_range_m))
    return scans


def label_at(grid: OccupancyGrid, pose: Pose) -> int:
    ix, iy = _check_free_pose(grid, pose)
    return int(grid.labels[iy, ix])


# ---------------------------------------------------------------------------
# floor plan generation


@dataclass(frozen=True)
class FloorplanSpec:
    room_count: int = 4
    corridor_width_m: float = 2.0
    extent_m: float = 30.0

    @classmethod
    def coerce(cls, spec) -> "FloorplanSpec":
        if isinstance(spec, cls):
            return spec
        return cls(**dict(spec))


def _rect_free(reserved, x0, y0, x1, y1):
    h, w = reserved.shape
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        return False
    return not reserved[y0:y1, x0:x1].any()


def generate_floorplan(seed: int, spec, resolution: float = DEFAULT_RESOLUTION) -> OccupancyGrid:
    """Generate a labeled office-like floor.

    A horizontal corridor crosses the building, sometimes joined by a
    vertical one. Rooms are packed against the corridor walls, each with a
    single door. Small rooms are class 1, large rooms class 2, corridors
    class 3; everything outside corridors and rooms is solid.
    """
    spec = FloorplanSpec.coerce(spec)
    if spec.room_count < 1:
        raise FloorplanError("room_count must be at least 1")
    if spec.corridor_width_m < 3 * resolution:
        raise FloorplanError("corridor must be at least three cells wide")
    n = int(round(spec.extent_m / resolution))
    wall = max(1, int(round(WALL_M / resolution)))
    cw = int(round(spec.corridor_width_m / resolution))
    door = max(3, int(round(DOOR_M / resolution)))
    if n < 2 * wall + cw + 3:
        raise FloorplanError(f"extent {spec.extent_m} m cannot hold a corridor")

    rng = np.random.default_rng(seed)
    cells = np.full((n, n), OCCUPIED, dtype=np.int8)
    labels = np.zeros((n, n), dtype=np.int8)
    # cells that may not be claimed by a new room (free space plus its walls)
    reserved = np.zeros((n, n), dtype=bool)
    reserved[:wall, :] = reserved[-wall:, :] = True
    reserved[:, :wall] = reserved[:, -wall:] = True

    def carve(x0, y0, x1, y1, label):
        cells[y0:y1, x0:x1] = FREE
        labels[y0:y1, x0:x1] = label
        reserved[max(0, y0 - wall):y1 + wall, max(0, x0 - wall):x1 + wall] = True

    lo, hi = wall, n - wall
    cy = int(rng.integers(int(0.3 * n), int(0.7 * n) - cw + 1))
    corridors = [(lo, cy, hi, cy + cw)]
    if rng.random() < 0.5 or spec.room_count > 6:
        cx = int(rng.integers(int(0.3 * n), int(0.7 * n) - cw + 1))
        corridors.append((cx, lo, cx + cw, hi))
    for x0, y0, x1, y1 in corridors:
        carve(x0, y0, x1, y1, CORRIDOR)

    kinds = [SMALL_ROOM, LARGE_ROOM] if spec.room_count >= 2 else [int(rng.choice([SMALL_ROOM, LARGE_ROOM]))]
    while len(kinds) < spec.room_count:
        kinds.append(LARGE_ROOM if rng.random() < 0.4 else SMALL_ROOM)
    # place large rooms first, they are the hardest to fit
    kinds.sort(reverse=True)

    # corridor sides: (corridor index, side) with side in {south, north, west, east}
    sides = [(k, s) for k in range(len(corridors)) for s in (("S", "N") if k == 0 else ("W", "E"))]
    for number, kind in enumerate(kinds):
        lo_m, hi_m = LARGE_ROOM_M if kind == LARGE_ROOM else SMALL_ROOM_M
        rw = int(round(rng.uniform(lo_m, hi_m) / resolution))
        rd = int(round(rng.uniform(lo_m, hi_m) / resolution))
        order = rng.permutation(len(sides))
        placed = False
        for si in order:
            k, side = sides[si]
            x0c, y0c, x1c, y1c = corridors[k]
            along = (x0c, x1c) if side in "SN" else (y0c, y1c)
            span = along[1] - along[0] - rw
            if span < 0:
                continue
            offset = int(rng.integers(0, span + 1))
            for step in range(0, span + 1, 2):
                a = along[0] + (offset + step) % (span + 1)
                if side == "N":
                    rect = (a, y1c + wall, a + rw, y1c + wall + rd)
                elif side == "S":
                    rect = (a, y0c - wall - rd, a + rw, y0c - wall)
                elif side == "E":
                    rect = (x1c + wall, a, x1c + wall + rd, a + rw)
                else:
                    rect = (x0c - wall - rd, a, x0c - wall, a + rw)
                # reserved = free space grown by one wall; disjoint means a legal wall
                x0, y0, x1, y1 = rect
                if not _rect_free(reserved, x0, y0, x1, y1):
                    continue
                # doorway must open onto the corridor itself
                d0 = int(rng.integers(1, rw - door))
                if side == "N":
                    dr = (x0 + d0, y1c, x0 + d0 + door, y0)
                elif side == "S":
                    dr = (x0 + d0, y1, x0 + d0 + door, y0c)
                elif side == "E":
                    dr = (x1c, y0 + d0, x0, y0 + d0 + door)
                else:
                    dr = (x1, y0 + d0, x0c, y0 + d0 + door)
                if side in "SN" and not (x0c <= dr[0] and dr[2] <= x1c):
                    continue
                if side in "WE" and not (y0c <= dr[1] and dr[3] <= y1c):
                    continue
                carve(x0, y0, x1, y1, kind)
                cells[dr[1]:dr[3], dr[0]:dr[2]] = FREE
                labels[dr[1]:dr[3], dr[0]:dr[2]] = kind
                placed = True
                break
            if placed:
                break
        if not placed:
            raise FloorplanError(
                f"room {number + 1} of {spec.room_count} does not fit in a {spec.extent_m} m world"
            )

    grid = OccupancyGrid(n, n, resolution, (0.0, 0.0), cells, labels)
    if free_components(grid) != 1:
        raise FloorplanError("generated free space is not connected")
    return grid


def free_components(grid: OccupancyGrid) -> int:
    """Number of 4-connected FREE components."""
    _, count = ndimage.label(grid.free_mask)
    return int(count)
