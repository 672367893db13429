"""Raster and geometry primitives shared by every other module.

Conventions used throughout the package:

* Grid cells are addressed as ``(col, row)``; ``col`` follows world x and
  ``row`` follows world y. The cell array is indexed ``cells[row, col]``.
* The world frame is y-up. ``origin`` is the world position of the
  corner of cell ``(0, 0)``; row indices grow with y.
* Connectivity is 8-connected everywhere.
* Unknown cells block line of sight and are non-walkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, NamedTuple

import numpy as np
from scipy import ndimage

from .errors import EmptyInput, NoFreeSpace, OutOfBounds

EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int8)


class CellState(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


class GridPoint(NamedTuple):
    col: int
    row: int


class WorldPoint(NamedTuple):
    x: float
    y: float


def normalize_angle(theta: float) -> float:
    """Wrap an angle to the canonical interval [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose2D:
    position: WorldPoint
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))


class OccupancyGrid:
    """Immutable 2D raster of free/occupied/unknown cells with georeferencing.

    ``cells`` has shape ``(height, width)`` and dtype uint8 holding
    :class:`CellState` values. The instance never mutates after
    construction, so it is safe to share across workers.
    """

    def __init__(self, cells: np.ndarray, resolution: float, origin: WorldPoint):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        cells = np.ascontiguousarray(cells, dtype=np.uint8)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError("cells must be a non-empty 2D array")
        cells.setflags(write=False)
        self._cells = cells
        self._resolution = float(resolution)
        self._origin = WorldPoint(float(origin[0]), float(origin[1]))

    @property
    def cells(self) -> np.ndarray:
        return self._cells

    @property
    def width(self) -> int:
        return self._cells.shape[1]

    @property
    def height(self) -> int:
        return self._cells.shape[0]

    @property
    def resolution(self) -> float:
        return self._resolution

    @property
    def origin(self) -> WorldPoint:
        return self._origin

    def in_bounds(self, cell: GridPoint) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def state_at(self, cell: GridPoint) -> CellState:
        return CellState(self._cells[cell[1], cell[0]])

    def is_free(self, cell: GridPoint) -> bool:
        return self._cells[cell[1], cell[0]] == CellState.FREE

    def world_to_grid(self, p: WorldPoint) -> GridPoint:
        """Floor-based binning of a world point into its containing cell."""
        col = math.floor((p[0] - self._origin.x) / self._resolution)
        row = math.floor((p[1] - self._origin.y) / self._resolution)
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise OutOfBounds(f"world point {tuple(p)} outside grid extent")
        return GridPoint(col, row)

    def grid_to_world(self, cell: GridPoint) -> WorldPoint:
        """World coordinates of the cell center."""
        x = self._origin.x + (float(cell[0]) + 0.5) * self._resolution
        y = self._origin.y + (float(cell[1]) + 0.5) * self._resolution
        return WorldPoint(x, y)

    def contains_world(self, p: WorldPoint) -> bool:
        col = math.floor((p[0] - self._origin.x) / self._resolution)
        row = math.floor((p[1] - self._origin.y) / self._resolution)
        return 0 <= col < self.width and 0 <= row < self.height

    def mask(self, state: CellState) -> np.ndarray:
        return self._cells == state

    def free_cell_count(self) -> int:
        return int(np.count_nonzero(self._cells == CellState.FREE))

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self._resolution == other._resolution
            and self._origin == other._origin
            and np.array_equal(self._cells, other._cells)
        )


def bresenham_line(a: GridPoint, b: GridPoint) -> list[GridPoint]:
    """All cells on the discrete line from ``a`` to ``b``, endpoints included.

    Classic integer error-accumulator variant. The traced direction is
    canonicalized so that swapping the endpoints yields the same cell set.
    """
    if a == b:
        return [GridPoint(*a)]
    swapped = (b[0], b[1]) < (a[0], a[1])
    if swapped:
        a, b = b, a
    x, y = a[0], a[1]
    x1, y1 = b[0], b[1]
    dx = abs(x1 - x)
    dy = -abs(y1 - y)
    sx = 1 if x < x1 else -1
    sy = 1 if y < y1 else -1
    err = dx + dy
    cells = []
    while True:
        cells.append(GridPoint(x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    if swapped:
        cells.reverse()
    return cells


def line_of_sight(grid: OccupancyGrid, a: GridPoint, b: GridPoint) -> bool:
    """True iff no cell strictly between ``a`` and ``b`` blocks.

    Endpoints are excluded so that shelf-adjacent targets sitting on an
    occupied face still count as visible. Unknown cells block.
    """
    cells = grid.cells
    for col, row in bresenham_line(a, b)[1:-1]:
        if cells[row, col] != CellState.FREE:
            return False
    return True


def _order_components(labels: np.ndarray, count: int) -> list[np.ndarray]:
    """Label-image components as row/col index arrays, ordered by size
    descending then smallest (row, col) member."""
    if count == 0:
        return []
    rows, cols = np.nonzero(labels)
    comp = labels[rows, cols]
    order = np.lexsort((cols, rows, comp))
    rows, cols, comp = rows[order], cols[order], comp[order]
    starts = np.searchsorted(comp, np.arange(1, count + 2))
    groups = []
    for i in range(count):
        lo, hi = starts[i], starts[i + 1]
        groups.append(np.stack([rows[lo:hi], cols[lo:hi]], axis=1))
    # each group is (row, col)-sorted; first row is its smallest member
    groups.sort(key=lambda g: (-len(g), int(g[0, 0]), int(g[0, 1])))
    return groups


def label_components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components of a boolean mask as (n, 2) row/col arrays,
    size-descending then smallest (row, col) member."""
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    return _order_components(labels, count)


def connected_components(grid: OccupancyGrid, state: CellState) -> list[set[GridPoint]]:
    """Partition of all cells in ``state`` into 8-connected components."""
    groups = label_components(grid.cells == state)
    return [{GridPoint(int(c), int(r)) for r, c in g} for g in groups]


def spatial_median(points: Iterable[GridPoint]) -> GridPoint:
    """Component-wise lower median snapped to the nearest member point.

    Snapping keeps the result inside the cluster even when the raw median
    falls into a hole; member ties break on smallest (row, col).
    """
    pts = list(points)
    if not pts:
        raise EmptyInput("spatial_median needs at least one point")
    cols = sorted(p[0] for p in pts)
    rows = sorted(p[1] for p in pts)
    mid = (len(pts) - 1) // 2
    mc, mr = cols[mid], rows[mid]
    best = min(pts, key=lambda p: ((p[0] - mc) ** 2 + (p[1] - mr) ** 2, p[1], p[0]))
    return GridPoint(*best)


def grid_from_rows(rows: list[str], resolution: float = 1.0,
                   origin: WorldPoint = WorldPoint(0.0, 0.0)) -> OccupancyGrid:
    """Build a grid from ASCII art rows ('.'=free, '#'=occupied, '?'=unknown).

    The first string is the top row (highest y), matching how fixtures are
    written in source.
    """
    lut = {".": CellState.FREE, "#": CellState.OCCUPIED, "?": CellState.UNKNOWN}
    arr = np.array(
        [[lut[ch] for ch in line] for line in reversed(rows)], dtype=np.uint8
    )
    return OccupancyGrid(arr, resolution, origin)


def require_free_space(grid: OccupancyGrid) -> None:
    if grid.free_cell_count() == 0:
        raise NoFreeSpace("grid has no free cells")
