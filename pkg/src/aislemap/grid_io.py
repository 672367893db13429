"""Occupancy grid persistence: binary PGM (P5) plus a JSON sidecar.

Gray levels follow the common grid-map interchange convention:
0 = occupied, 205 = unknown, 254 = free. The PGM stores rows top-down
(image row 0 is the highest-y grid row); the sidecar carries
``{resolution, origin_x, origin_y}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import BundleError
from .geometry import CellState, OccupancyGrid, WorldPoint

GRAY_OCCUPIED = 0
GRAY_UNKNOWN = 205
GRAY_FREE = 254

_STATE_TO_GRAY = {
    CellState.OCCUPIED: GRAY_OCCUPIED,
    CellState.UNKNOWN: GRAY_UNKNOWN,
    CellState.FREE: GRAY_FREE,
}


def grid_to_gray(grid: OccupancyGrid) -> np.ndarray:
    """Top-down gray image of the grid (row 0 = highest y)."""
    gray = np.full(grid.cells.shape, GRAY_UNKNOWN, dtype=np.uint8)
    for state, value in _STATE_TO_GRAY.items():
        gray[grid.cells == state] = value
    return gray[::-1]


def save_pgm(grid: OccupancyGrid, pgm_path: Path, meta_path: Path | None = None) -> None:
    pgm_path = Path(pgm_path)
    gray = grid_to_gray(grid)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    pgm_path.write_bytes(header + gray.tobytes())
    if meta_path is None:
        meta_path = pgm_path.with_suffix(".json")
    meta = {
        "resolution": grid.resolution,
        "origin_x": grid.origin.x,
        "origin_y": grid.origin.y,
    }
    Path(meta_path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _parse_pgm(data: bytes) -> tuple[int, int, int, bytes]:
    # P5 header: magic, width, height, maxval; '#' comments allowed
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i : i + 1].isspace():
            i += 1
            continue
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise BundleError("not a binary PGM (P5) file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return width, height, maxval, data[i + 1 :]


def load_pgm(pgm_path: Path, meta_path: Path | None = None) -> OccupancyGrid:
    pgm_path = Path(pgm_path)
    width, height, maxval, raw = _parse_pgm(pgm_path.read_bytes())
    if maxval != 255:
        raise BundleError(f"unsupported PGM maxval {maxval}")
    if len(raw) < width * height:
        raise BundleError("PGM payload shorter than header dimensions")
    gray = np.frombuffer(raw[: width * height], dtype=np.uint8).reshape(height, width)

    cells = np.full((height, width), CellState.UNKNOWN, dtype=np.uint8)
    cells[gray >= 250] = CellState.FREE
    cells[gray <= 50] = CellState.OCCUPIED
    cells = cells[::-1]

    if meta_path is None:
        meta_path = pgm_path.with_suffix(".json")
    meta = json.loads(Path(meta_path).read_text())
    origin = WorldPoint(float(meta["origin_x"]), float(meta["origin_y"]))
    return OccupancyGrid(cells, float(meta["resolution"]), origin)
