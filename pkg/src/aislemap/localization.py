"""Pose fingerprinting over a discrete pose grid, answered in one query.

Every (free cell, orientation bin) pose gets a semantic signature: the
deduplicated, alphabetically sorted labels visible from it under FOV
raycasting. Signatures embed into L2-normalized vectors; localization is
a cosine scan of the query signature against the cached map.

Rays are traced cell-relative from the pose cell's center, so a pose map
built in bulk and a single raycast query agree cell-for-cell.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .errors import (
    EmptyQuery,
    NoFreeSpace,
    OutOfBounds,
    PoseInObstacle,
    ProviderMismatch,
    UnlocalizableMap,
)
from .geometry import (
    CellState,
    GridPoint,
    OccupancyGrid,
    Pose2D,
    WorldPoint,
    bresenham_line,
    normalize_angle,
)
from .ingest import ProductLabel, ProductRecord

DEFAULT_CELL_SIZE_M = 0.5
DEFAULT_ORIENTATION_BINS = 8
DEFAULT_FOV_DEG = 60.0
DEFAULT_RANGE_M = 6.0
DEFAULT_RAYS = 20
DEFAULT_EMBEDDING_DIM = 256

_MAGIC = b"PMAP"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PoseGridSpec:
    cell_size: float = DEFAULT_CELL_SIZE_M
    orientation_bins: int = DEFAULT_ORIENTATION_BINS
    fov_deg: float = DEFAULT_FOV_DEG
    range_m: float = DEFAULT_RANGE_M
    rays: int = DEFAULT_RAYS

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.orientation_bins < 1:
            raise ValueError("orientation_bins must be >= 1")
        if not 0 < self.fov_deg <= 360:
            raise ValueError("fov must be in (0, 360]")
        if self.range_m <= 0:
            raise ValueError("range must be positive")
        if self.rays < 1:
            raise ValueError("rays must be >= 1")

    def bin_heading(self, bin_index: int) -> float:
        # bin 0 faces +x; bins advance counterclockwise
        return bin_index * (2.0 * math.pi / self.orientation_bins)

    def ray_angles(self, heading: float) -> list[float]:
        half = math.radians(self.fov_deg) / 2.0
        if self.rays == 1:
            return [heading]
        step = math.radians(self.fov_deg) / (self.rays - 1)
        return [heading - half + i * step for i in range(self.rays)]


@dataclass(frozen=True)
class SemanticSignature:
    entries: tuple[str, ...]
    text: str

    @property
    def empty(self) -> bool:
        return not self.entries


@dataclass(frozen=True)
class PoseHypothesis:
    pose: Pose2D
    score: float
    rank: int


@dataclass(frozen=True)
class PoseEntry:
    row: int  # pose-grid indices, not occupancy cells
    col: int
    bin: int
    pose: Pose2D


@dataclass
class PoseMap:
    spec: PoseGridSpec
    poses: list[PoseEntry]
    embeddings: np.ndarray  # (n_poses, dim) float32, unit rows or zero
    provider_id: str

    def __post_init__(self):
        if len(self.poses) != len(self.embeddings):
            raise ValueError("one embedding per pose required")

    @property
    def dimension(self) -> int:
        return int(self.embeddings.shape[1])

    def sentinel_mask(self) -> np.ndarray:
        return ~self.embeddings.any(axis=1)


# ---------------------------------------------------------------------------
# Signatures and embeddings


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def _render_label(label: ProductLabel) -> str:
    text = f"{label.brand} {label.category}".lower()
    return " ".join(text.split())


def build_signature(labels: Iterable[ProductLabel]) -> SemanticSignature:
    """Canonical signature: unique "brand category" strings, sorted."""
    entries = tuple(sorted({_render_label(l) for l in labels} - {""}))
    return SemanticSignature(entries=entries, text=" | ".join(entries))


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed_text(self, text: str) -> np.ndarray: ...


class HashedTokenProvider:
    """Deterministic bag-of-tokens embedding.

    Tokens hash into a fixed number of buckets (seeded blake2b, stable
    across runs and platforms); bucket counts are L2-normalized. Shared
    vocabulary raises cosine similarity; an empty text maps to the
    all-zero sentinel.
    """

    def __init__(self, dimension: int = DEFAULT_EMBEDDING_DIM):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.provider_id = f"hashed-tokens-v1-d{dimension}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in _TOKEN_SPLIT.split(text.lower()):
            if token:
                vec[self._bucket(token)] += 1.0
        norm = math.sqrt(float(np.dot(vec, vec)))
        if norm == 0.0:
            return np.zeros(self.dimension, dtype=np.float32)
        return (vec / norm).astype(np.float32)


def embed(signature: SemanticSignature, provider: EmbeddingProvider) -> np.ndarray:
    """Embed a signature; the empty signature becomes the zero sentinel."""
    if signature.empty:
        return np.zeros(provider.dimension, dtype=np.float32)
    return np.asarray(provider.embed_text(signature.text), dtype=np.float32)


# ---------------------------------------------------------------------------
# Raycasting


def _ray_cell_offsets(angle: float, range_m: float, resolution: float) -> list[tuple[int, int]]:
    """(drow, dcol) cells crossed by a ray from a cell center, in order.

    Offsets depend only on the angle, so one trace serves every pose via
    translation.
    """
    reach = range_m / resolution
    end_col = math.floor(0.5 + reach * math.cos(angle))
    end_row = math.floor(0.5 + reach * math.sin(angle))
    cells = bresenham_line(GridPoint(0, 0), GridPoint(end_col, end_row))
    return [(r, c) for c, r in cells]


def _product_cells(
    grid: OccupancyGrid, products: list[ProductRecord]
) -> dict[tuple[int, int], list[str]]:
    """Cells that count as a hit on each product: the product's own cell
    plus any occupied 8-neighbors (the shelf face it sits against)."""
    by_cell: dict[tuple[int, int], list[str]] = {}
    cells = grid.cells
    h, w = cells.shape
    ordered = sorted(products, key=lambda p: (p.world_x, p.world_y, p.product_id))
    for p in ordered:
        if not grid.contains_world(p.position):
            continue
        cell = grid.world_to_grid(p.position)
        hits = [(cell.row, cell.col)]
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r, c = cell.row + dr, cell.col + dc
                if (dr or dc) and 0 <= r < h and 0 <= c < w:
                    if cells[r, c] == CellState.OCCUPIED:
                        hits.append((r, c))
        for key in hits:
            bucket = by_cell.setdefault(key, [])
            if p.product_id not in bucket:
                bucket.append(p.product_id)
    return by_cell


def raycast_visible(
    grid: OccupancyGrid,
    products: list[ProductRecord],
    pose: Pose2D,
    spec: PoseGridSpec,
) -> list[str]:
    """Product ids visible from a pose under FOV raycasting.

    Rays span the FOV inclusive of both edges and march cell by cell. A
    ray collects products on every Free cell it crosses plus the first
    Occupied cell it strikes (the shelf face), then stops; Unknown cells
    and the grid edge stop it cold.
    """
    try:
        start = grid.world_to_grid(pose.position)
    except OutOfBounds as exc:
        raise PoseInObstacle(f"pose {tuple(pose.position)} outside the map") from exc
    if not grid.is_free(start):
        raise PoseInObstacle(f"pose cell {tuple(start)} is not free")

    by_cell = _product_cells(grid, products)
    cells = grid.cells
    h, w = cells.shape
    seen: dict[str, None] = {}
    for angle in spec.ray_angles(pose.heading):
        for drow, dcol in _ray_cell_offsets(angle, spec.range_m, grid.resolution):
            r, c = start.row + drow, start.col + dcol
            if not (0 <= r < h and 0 <= c < w):
                break
            state = cells[r, c]
            if state == CellState.FREE:
                for pid in by_cell.get((r, c), ()):
                    seen.setdefault(pid)
                continue
            if state == CellState.OCCUPIED:
                for pid in by_cell.get((r, c), ()):
                    seen.setdefault(pid)
            break
    return list(seen)


# ---------------------------------------------------------------------------
# Pose-map construction


def _pose_candidates(
    grid: OccupancyGrid, spec: PoseGridSpec
) -> list[tuple[int, int, GridPoint]]:
    """Free pose-grid cells as (pose_row, pose_col, occupancy cell).

    Pose positions snap to the center of the occupancy cell containing
    the nominal pose-grid center, keeping ray traces cell-exact.
    """
    width_m = grid.width * grid.resolution
    height_m = grid.height * grid.resolution
    n_cols = max(1, math.ceil(width_m / spec.cell_size))
    n_rows = max(1, math.ceil(height_m / spec.cell_size))
    out = []
    for prow in range(n_rows):
        cy = grid.origin.y + (prow + 0.5) * spec.cell_size
        for pcol in range(n_cols):
            cx = grid.origin.x + (pcol + 0.5) * spec.cell_size
            nominal = WorldPoint(cx, cy)
            if not grid.contains_world(nominal):
                continue
            cell = grid.world_to_grid(nominal)
            if grid.is_free(cell):
                out.append((prow, pcol, cell))
    return out


def _visibility_sets(
    grid: OccupancyGrid,
    products: list[ProductRecord],
    spec: PoseGridSpec,
    candidates: list[tuple[int, int, GridPoint]],
) -> list[list[dict[str, None]]]:
    """visible[i][b] = ids seen from candidate i at orientation bin b.

    Equivalent to running raycast_visible per pose; the per-(bin, ray)
    cell offsets are shared across poses, so the whole pose grid
    raycasts as vectorized array lookups.
    """
    by_cell = _product_cells(grid, products)
    cells = grid.cells
    h, w = cells.shape
    occ_rows = np.array([c.row for _, _, c in candidates])
    occ_cols = np.array([c.col for _, _, c in candidates])
    n = len(candidates)

    product_mask = np.zeros((h, w), dtype=bool)
    for (r, c) in by_cell:
        product_mask[r, c] = True

    visible: list[list[dict[str, None]]] = [
        [dict() for _ in range(spec.orientation_bins)] for _ in range(n)
    ]
    for b in range(spec.orientation_bins):
        heading = spec.bin_heading(b)
        for angle in spec.ray_angles(heading):
            offsets = _ray_cell_offsets(angle, spec.range_m, grid.resolution)
            dr = np.array([o[0] for o in offsets])
            dc = np.array([o[1] for o in offsets])
            L = len(offsets)
            rr = occ_rows[:, None] + dr[None, :]
            cc = occ_cols[:, None] + dc[None, :]
            oob = (rr < 0) | (rr >= h) | (cc < 0) | (cc >= w)
            states = cells[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
            states = np.where(oob, int(CellState.UNKNOWN), states)
            blocked = states != int(CellState.FREE)
            any_block = blocked.any(axis=1)
            first = np.where(any_block, blocked.argmax(axis=1), L)
            occ_at_first = np.zeros(n, dtype=bool)
            idx = np.nonzero(any_block)[0]
            occ_at_first[idx] = (
                states[idx, np.minimum(first[idx], L - 1)] == int(CellState.OCCUPIED)
            )
            cols_idx = np.arange(L)[None, :]
            hit = cols_idx < first[:, None]
            hit |= (cols_idx == first[:, None]) & occ_at_first[:, None]
            hit &= ~oob
            hit &= product_mask[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
            for i, j in zip(*np.nonzero(hit)):
                cell_key = (int(rr[i, j]), int(cc[i, j]))
                for pid in by_cell[cell_key]:
                    visible[i][b].setdefault(pid)
    return visible


def visibility_by_pose(
    grid: OccupancyGrid,
    products: list[ProductRecord],
    spec: PoseGridSpec = PoseGridSpec(),
) -> dict[tuple[int, int, int], tuple[str, ...]]:
    """Visible product ids for every free (pose row, pose col, bin).

    Batch counterpart of raycast_visible over the whole pose grid.
    """
    candidates = _pose_candidates(grid, spec)
    visible = _visibility_sets(grid, products, spec, candidates)
    out = {}
    for i, (prow, pcol, _) in enumerate(candidates):
        for b in range(spec.orientation_bins):
            out[(prow, pcol, b)] = tuple(visible[i][b])
    return out


def build_pose_map(
    grid: OccupancyGrid,
    products: list[ProductRecord],
    spec: PoseGridSpec = PoseGridSpec(),
    provider: EmbeddingProvider | None = None,
) -> PoseMap:
    """Raycast, sign, and embed every free pose in (row, col, bin) order."""
    provider = provider or HashedTokenProvider()
    candidates = _pose_candidates(grid, spec)
    if not candidates:
        raise NoFreeSpace("no free pose cells in the grid")

    labels_by_id = {p.product_id: p.label for p in products}
    visible = _visibility_sets(grid, products, spec, candidates)

    poses: list[PoseEntry] = []
    vectors: list[np.ndarray] = []
    for i, (prow, pcol, cell) in enumerate(candidates):
        position = grid.grid_to_world(cell)
        for b in range(spec.orientation_bins):
            labels = [labels_by_id[pid] for pid in visible[i][b]]
            sig = build_signature(labels)
            vec = embed(sig, provider)
            poses.append(
                PoseEntry(prow, pcol, b, Pose2D(position, spec.bin_heading(b)))
            )
            vectors.append(vec)
    order = sorted(range(len(poses)), key=lambda t: (poses[t].row, poses[t].col, poses[t].bin))
    poses = [poses[t] for t in order]
    matrix = np.stack([vectors[t] for t in order]).astype(np.float32)
    return PoseMap(spec=spec, poses=poses, embeddings=matrix, provider_id=provider.provider_id)


# ---------------------------------------------------------------------------
# Queries


def localize(
    query_labels: list[ProductLabel],
    pose_map: PoseMap,
    k: int = 5,
    provider: EmbeddingProvider | None = None,
) -> list[PoseHypothesis]:
    """Top-k poses by cosine similarity of the query signature.

    Ties resolve by pose build order (cell row, col, bin). Sentinel
    (no-visibility) poses never outrank a scoring pose.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not query_labels:
        raise EmptyQuery("localization query needs at least one label")
    if not len(pose_map.poses):
        raise UnlocalizableMap("pose map is empty")
    provider = provider or HashedTokenProvider(pose_map.dimension)
    if provider.provider_id != pose_map.provider_id:
        raise ProviderMismatch(
            f"map built with {pose_map.provider_id!r}, query uses {provider.provider_id!r}"
        )
    sentinels = pose_map.sentinel_mask()
    if sentinels.all():
        raise UnlocalizableMap("every pose in the map has an empty signature")

    sig = build_signature(query_labels)
    # quantize the query exactly like stored rows so a pose queried with
    # its own signature scores an exact dot product of identical vectors
    q = embed(sig, provider).astype(np.float32).astype(np.float64)
    scores = pose_map.embeddings.astype(np.float64) @ q
    scores[sentinels] = -np.inf
    if not sig.entries:
        scores[:] = -np.inf
    order = np.argsort(-scores, kind="stable")[: min(k, len(scores))]
    out = []
    for rank, idx in enumerate(order, start=1):
        out.append(
            PoseHypothesis(
                pose=pose_map.poses[int(idx)].pose,
                score=float(scores[int(idx)]),
                rank=rank,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Persistence
#
# posemap.bin layout (all integers little-endian):
#   bytes 0-3   magic "PMAP"
#   u32         format version (1)
#   u16         provider id length P, then P bytes utf-8
#   u32         embedding dimension D
#   f32         pose cell size (m)
#   u32         orientation bins
#   f32         fov (degrees)
#   f32         range (m)
#   u32         rays
#   u32         pose count N
#   N records:  u32 row, u32 col, u32 bin, f32 x, f32 y, f32 heading,
#               D * f32 embedding


def _storable_heading(theta: float) -> float:
    # f32 rounding can push a heading at the -pi boundary just outside
    # [-pi, pi); wrap once more so load's normalization is a no-op and
    # save(load(x)) stays byte-identical
    h = float(np.float32(normalize_angle(theta)))
    if not -math.pi <= h < math.pi:
        h = float(np.float32(normalize_angle(h)))
    return h


def save_pose_map(pose_map: PoseMap, path: Path) -> None:
    buf = io.BytesIO()
    pid = pose_map.provider_id.encode("utf-8")
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _FORMAT_VERSION))
    buf.write(struct.pack("<H", len(pid)))
    buf.write(pid)
    s = pose_map.spec
    buf.write(struct.pack("<IfIffI", pose_map.dimension, s.cell_size,
                          s.orientation_bins, s.fov_deg, s.range_m, s.rays))
    buf.write(struct.pack("<I", len(pose_map.poses)))
    for entry, vec in zip(pose_map.poses, pose_map.embeddings):
        buf.write(
            struct.pack(
                "<IIIfff",
                entry.row,
                entry.col,
                entry.bin,
                entry.pose.position.x,
                entry.pose.position.y,
                _storable_heading(entry.pose.heading),
            )
        )
        buf.write(np.asarray(vec, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_pose_map(path: Path) -> PoseMap:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError("not a pose-map file")
    off = 4
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported pose-map version {version}")
    (plen,) = struct.unpack_from("<H", data, off)
    off += 2
    provider_id = data[off : off + plen].decode("utf-8")
    off += plen
    dim, cell_size, bins, fov, range_m, rays = struct.unpack_from("<IfIffI", data, off)
    off += struct.calcsize("<IfIffI")
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    spec = PoseGridSpec(cell_size, bins, fov, range_m, rays)
    poses = []
    vectors = np.empty((count, dim), dtype=np.float32)
    rec = struct.Struct("<IIIfff")
    for i in range(count):
        row, col, b, x, y, theta = rec.unpack_from(data, off)
        off += rec.size
        vectors[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
        off += 4 * dim
        poses.append(PoseEntry(row, col, b, Pose2D(WorldPoint(x, y), theta)))
    return PoseMap(spec=spec, poses=poses, embeddings=vectors, provider_id=provider_id)


def pose_map_debug_json(pose_map: PoseMap) -> dict:
    sentinels = pose_map.sentinel_mask()
    return {
        "schema_version": 1,
        "provider_id": pose_map.provider_id,
        "dimension": pose_map.dimension,
        "spec": {
            "cell_size": pose_map.spec.cell_size,
            "orientation_bins": pose_map.spec.orientation_bins,
            "fov_deg": pose_map.spec.fov_deg,
            "range_m": pose_map.spec.range_m,
            "rays": pose_map.spec.rays,
        },
        "poses": [
            {
                "row": e.row,
                "col": e.col,
                "bin": e.bin,
                "x": e.pose.position.x,
                "y": e.pose.position.y,
                "heading": e.pose.heading,
                "sentinel": bool(sentinels[i]),
            }
            for i, e in enumerate(pose_map.poses)
        ],
    }


def save_pose_map_debug(pose_map: PoseMap, path: Path) -> None:
    Path(path).write_text(json.dumps(pose_map_debug_json(pose_map), indent=2) + "\n")
