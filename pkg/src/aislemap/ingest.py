"""Scan-manifest ingestion.

Parses the frames manifest (JSON Lines) and point cloud, builds the
occupancy grid via a height slice, selects visually distinct keyframes
with a sequential cosine filter, unprojects labeled detections to world
coordinates, and snaps them to shelf-adjacent free cells by walking the
camera ray.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import (
    DimensionMismatch,
    EmptyCloud,
    EmptyInput,
    OutOfBounds,
    SingularIntrinsics,
)
from .geometry import (
    CellState,
    GridPoint,
    OccupancyGrid,
    WorldPoint,
    bresenham_line,
)

# Height-slice band and hit threshold used when the config does not
# override them; chosen to capture shelving while rejecting floor and
# ceiling returns.
DEFAULT_Z_MIN = 0.1
DEFAULT_Z_MAX = 1.6
DEFAULT_MIN_HITS = 3
DEFAULT_RESOLUTION = 0.05
DEFAULT_KEYFRAME_THRESHOLD = 0.85
DEFAULT_MAX_PUSH_M = 1.0

SHARP = "sharp"
BLURRY = "blurry"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class FramePose:
    """World-from-camera rotation and translation."""

    rotation: np.ndarray
    translation: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-6):
            raise ValueError("rotation determinant is not +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def camera_xy(self) -> WorldPoint:
        return WorldPoint(float(self.translation[0]), float(self.translation[1]))


@dataclass(frozen=True)
class ProductLabel:
    name: str
    brand: str = ""
    packaging_type: str = ""
    category: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("product name must be non-empty")


@dataclass(frozen=True)
class Detection:
    frame_id: str
    pixel_u: float
    pixel_v: float
    median_depth: float
    label: ProductLabel
    sharpness: str = SHARP

    def __post_init__(self):
        if self.median_depth <= 0:
            raise ValueError("median depth must be positive")
        if not (math.isfinite(self.pixel_u) and math.isfinite(self.pixel_v)):
            raise ValueError("pixel coordinates must be finite")
        if self.sharpness not in (SHARP, BLURRY):
            raise ValueError(f"unknown sharpness verdict {self.sharpness!r}")


@dataclass
class Frame:
    frame_id: str
    timestamp: float
    intrinsics: CameraIntrinsics
    pose: FramePose
    embedding: np.ndarray | None = None
    detections: list[Detection] = field(default_factory=list)


@dataclass(frozen=True)
class ProductRecord:
    """A labeled, world-positioned item anchored to the map."""

    product_id: str
    label: ProductLabel
    world_x: float
    world_y: float
    refined: bool
    frame_id: str
    sharpness: str = SHARP

    @property
    def position(self) -> WorldPoint:
        return WorldPoint(self.world_x, self.world_y)


class RefinedPosition(NamedTuple):
    position: WorldPoint
    refined: bool


# ---------------------------------------------------------------------------
# Manifest / cloud parsing


def parse_frame(record: dict) -> Frame:
    intr = record["intrinsics"]
    pose = record["pose"]
    frame_id = str(record["frame_id"])
    detections = []
    for d in record.get("detections", []):
        lab = d["label"]
        detections.append(
            Detection(
                frame_id=frame_id,
                pixel_u=float(d["u"]),
                pixel_v=float(d["v"]),
                median_depth=float(d["median_depth"]),
                label=ProductLabel(
                    name=str(lab["name"]),
                    brand=str(lab.get("brand", "")),
                    packaging_type=str(lab.get("packaging_type", "")),
                    category=str(lab.get("category", "")),
                ),
                sharpness=str(d.get("sharpness", SHARP)),
            )
        )
    embedding = record.get("embedding")
    return Frame(
        frame_id=frame_id,
        timestamp=float(record["timestamp"]),
        intrinsics=CameraIntrinsics(
            fx=float(intr["fx"]), fy=float(intr["fy"]),
            cx=float(intr["cx"]), cy=float(intr["cy"]),
        ),
        pose=FramePose(
            rotation=np.array(pose["R"], dtype=float).reshape(3, 3),
            translation=np.array(pose["t"], dtype=float),
            timestamp=float(record["timestamp"]),
        ),
        embedding=None if embedding is None else np.asarray(embedding, dtype=float),
        detections=detections,
    )


def load_frames(path: Path) -> list[Frame]:
    """Read a frames.jsonl manifest (one frame record per line)."""
    frames = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                frames.append(parse_frame(json.loads(line)))
    return frames


def load_cloud(path: Path) -> np.ndarray:
    """Read a whitespace-separated x y z point cloud, meters."""
    pts = np.loadtxt(path, dtype=float, ndmin=2)
    if pts.size == 0:
        raise EmptyCloud(f"point cloud {path} has no points")
    if pts.shape[1] != 3:
        raise EmptyCloud(f"point cloud {path} is not Nx3")
    return pts


# ---------------------------------------------------------------------------
# Occupancy build


def _convex_interior_mask(width: int, height: int, resolution: float,
                          origin: WorldPoint, traversal: np.ndarray) -> np.ndarray:
    """Cells whose centers lie inside the convex hull of the traversal."""
    mask = np.zeros((height, width), dtype=bool)
    # cells the trajectory actually passed through are free regardless of
    # hull degeneracy
    def clip_cell(p):
        c = math.floor((p[0] - origin.x) / resolution)
        r = math.floor((p[1] - origin.y) / resolution)
        return GridPoint(min(max(c, 0), width - 1), min(max(r, 0), height - 1))

    prev = None
    for p in traversal:
        cell = clip_cell(p)
        if prev is not None:
            for cc, rr in bresenham_line(prev, cell):
                mask[rr, cc] = True
        else:
            mask[cell.row, cell.col] = True
        prev = cell

    if len(traversal) >= 3:
        try:
            tri = Delaunay(traversal[:, :2])
        except QhullError:
            return mask
        xs = origin.x + (np.arange(width) + 0.5) * resolution
        ys = origin.y + (np.arange(height) + 0.5) * resolution
        gx, gy = np.meshgrid(xs, ys)
        centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
        inside = tri.find_simplex(centers) >= 0
        mask |= inside.reshape(height, width)
    return mask


def build_occupancy(
    cloud: np.ndarray,
    resolution: float = DEFAULT_RESOLUTION,
    z_min: float = DEFAULT_Z_MIN,
    z_max: float = DEFAULT_Z_MAX,
    min_hits: int = DEFAULT_MIN_HITS,
    traversal: Sequence[tuple[float, float]] | np.ndarray | None = None,
    origin: WorldPoint | None = None,
    width: int | None = None,
    height: int | None = None,
) -> OccupancyGrid:
    """Project a height slice of the cloud into an occupancy grid.

    A cell is Occupied when at least ``min_hits`` sliced points fall into
    it. Cells inside the convex hull of the traversal (the camera path)
    without hits are Free; everything else stays Unknown. Without a
    traversal no cell is ever marked Free.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if z_min >= z_max:
        raise ValueError("z_min must be below z_max")
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    traversal_arr = (
        np.asarray(traversal, dtype=float).reshape(-1, 2)
        if traversal is not None and len(traversal) > 0
        else np.empty((0, 2))
    )

    sliced = cloud[(cloud[:, 2] >= z_min) & (cloud[:, 2] <= z_max)] if len(cloud) else cloud

    if origin is None or width is None or height is None:
        anchors = [sliced[:, :2]] if len(sliced) else []
        if len(traversal_arr):
            anchors.append(traversal_arr)
        if not anchors:
            # nothing to size the grid from: minimal all-Unknown extent
            o = origin or WorldPoint(0.0, 0.0)
            cells = np.full((height or 1, width or 1), CellState.UNKNOWN, dtype=np.uint8)
            return OccupancyGrid(cells, resolution, o)
        pts = np.vstack(anchors)
        lo = np.floor(pts.min(axis=0) / resolution) * resolution - resolution
        hi = pts.max(axis=0) + resolution
        if origin is None:
            origin = WorldPoint(float(lo[0]), float(lo[1]))
        if width is None:
            width = int(math.ceil((hi[0] - origin.x) / resolution)) + 1
        if height is None:
            height = int(math.ceil((hi[1] - origin.y) / resolution)) + 1

    cells = np.full((height, width), CellState.UNKNOWN, dtype=np.uint8)

    if len(traversal_arr):
        interior = _convex_interior_mask(width, height, resolution, origin, traversal_arr)
        cells[interior] = CellState.FREE

    if len(sliced):
        cols = np.floor((sliced[:, 0] - origin.x) / resolution).astype(int)
        rows = np.floor((sliced[:, 1] - origin.y) / resolution).astype(int)
        keep = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
        hits = np.zeros((height, width), dtype=np.int64)
        np.add.at(hits, (rows[keep], cols[keep]), 1)
        cells[hits >= min_hits] = CellState.OCCUPIED

    return OccupancyGrid(cells, resolution, WorldPoint(*origin))


# ---------------------------------------------------------------------------
# Keyframe selection


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def select_keyframes(embeddings: Sequence[np.ndarray], threshold: float) -> list[int]:
    """Sequential cosine filter.

    Frame 0 is always retained; a later frame is retained only when its
    cosine similarity to the previously *accepted* keyframe drops below
    the threshold. Returns strictly increasing indices.
    """
    if len(embeddings) == 0:
        raise EmptyInput("no embeddings to filter")
    dim = len(embeddings[0])
    for i, e in enumerate(embeddings):
        if len(e) != dim:
            raise DimensionMismatch(f"embedding {i} has dimension {len(e)} != {dim}")
    kept = [0]
    anchor = np.asarray(embeddings[0], dtype=float)
    for i in range(1, len(embeddings)):
        e = np.asarray(embeddings[i], dtype=float)
        if cosine_similarity(e, anchor) < threshold:
            kept.append(i)
            anchor = e
    return kept


# ---------------------------------------------------------------------------
# Unprojection (pixel + depth -> world) and its inverse


def unproject(det: Detection, intr: CameraIntrinsics, pose: FramePose) -> np.ndarray:
    """World position of a detection: t + Z * R @ K^-1 @ [u, v, 1]."""
    if intr.fx == 0 or intr.fy == 0:
        raise SingularIntrinsics("fx and fy must be nonzero")
    ray_cam = np.array(
        [
            (det.pixel_u - intr.cx) / intr.fx,
            (det.pixel_v - intr.cy) / intr.fy,
            1.0,
        ]
    )
    return pose.translation + det.median_depth * (pose.rotation @ ray_cam)


def project(point_w: np.ndarray, intr: CameraIntrinsics, pose: FramePose) -> tuple[float, float, float]:
    """Inverse of :func:`unproject`: world point -> (u, v, depth)."""
    p_cam = pose.rotation.T @ (np.asarray(point_w, dtype=float) - pose.translation)
    z = float(p_cam[2])
    if z == 0.0:
        raise ValueError("point lies in the camera plane")
    u = intr.fx * float(p_cam[0]) / z + intr.cx
    v = intr.fy * float(p_cam[1]) / z + intr.cy
    return u, v, z


# ---------------------------------------------------------------------------
# Ray-based position refinement


def refine_position(
    grid: OccupancyGrid,
    camera_xy: WorldPoint,
    raw_xy: WorldPoint,
    max_push_m: float = DEFAULT_MAX_PUSH_M,
) -> RefinedPosition:
    """Snap a raw product position to a shelf-adjacent free cell.

    Walks the camera ray through the raw point. A point inside an
    obstacle is pulled back to the last free cell before the wall; a
    point in free space is pushed forward to the cell touching the first
    wall ahead, capped at ``max_push_m``. With no obstacle on the ray (or
    the ray leaving the grid) the raw point is returned unrefined.
    """
    if not grid.contains_world(camera_xy):
        raise OutOfBounds("camera position outside grid extent")
    if not grid.contains_world(raw_xy):
        return RefinedPosition(raw_xy, False)

    cam_cell = grid.world_to_grid(camera_xy)
    raw_cell = grid.world_to_grid(raw_xy)

    dx = raw_xy.x - camera_xy.x
    dy = raw_xy.y - camera_xy.y
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        return RefinedPosition(raw_xy, False)
    far = WorldPoint(
        raw_xy.x + dx / norm * max_push_m, raw_xy.y + dy / norm * max_push_m
    )
    far_cell_unclipped = (
        math.floor((far.x - grid.origin.x) / grid.resolution),
        math.floor((far.y - grid.origin.y) / grid.resolution),
    )
    far_cell = GridPoint(
        min(max(far_cell_unclipped[0], 0), grid.width - 1),
        min(max(far_cell_unclipped[1], 0), grid.height - 1),
    )

    # concatenate so the walk passes exactly through the raw cell
    walk = bresenham_line(cam_cell, raw_cell)
    tail = bresenham_line(raw_cell, far_cell)
    walk = walk + tail[1:]
    raw_index = len(bresenham_line(cam_cell, raw_cell)) - 1

    occ_index = None
    for i, cell in enumerate(walk):
        if grid.state_at(cell) == CellState.OCCUPIED:
            occ_index = i
            break
    if occ_index is None:
        return RefinedPosition(raw_xy, False)

    if occ_index > raw_index:
        # push forward to the shelf face, unless the cap is exceeded
        face = walk[occ_index - 1]
        face_xy = grid.grid_to_world(face)
        if math.hypot(face_xy.x - raw_xy.x, face_xy.y - raw_xy.y) > max_push_m + 1e-9:
            return RefinedPosition(raw_xy, False)
        if grid.is_free(face):
            return RefinedPosition(face_xy, True)
        return RefinedPosition(raw_xy, False)

    # raw cell at or behind the wall: pull back to the last free cell
    for cell in reversed(walk[:occ_index]):
        if grid.is_free(cell):
            return RefinedPosition(grid.grid_to_world(cell), True)
    return RefinedPosition(raw_xy, False)


# ---------------------------------------------------------------------------
# Product extraction over a whole manifest


def extract_products(
    frames: Sequence[Frame],
    grid: OccupancyGrid,
    max_push_m: float = DEFAULT_MAX_PUSH_M,
) -> list[ProductRecord]:
    """Unproject every detection and refine its map position.

    Product ids are assigned in manifest order so repeated runs over the
    same inputs yield identical records.
    """
    records = []
    counter = 0
    for frame in frames:
        cam_xy = frame.pose.camera_xy
        for det in frame.detections:
            world = unproject(det, frame.intrinsics, frame.pose)
            raw_xy = WorldPoint(float(world[0]), float(world[1]))
            if grid.contains_world(cam_xy):
                refined = refine_position(grid, cam_xy, raw_xy, max_push_m)
            else:
                refined = RefinedPosition(raw_xy, False)
            records.append(
                ProductRecord(
                    product_id=f"p{counter:04d}",
                    label=det.label,
                    world_x=refined.position.x,
                    world_y=refined.position.y,
                    refined=refined.refined,
                    frame_id=frame.frame_id,
                    sharpness=det.sharpness,
                )
            )
            counter += 1
    return records


def products_to_json(products: Sequence[ProductRecord]) -> list[dict]:
    return [
        {
            "product_id": p.product_id,
            "label": {
                "name": p.label.name,
                "brand": p.label.brand,
                "packaging_type": p.label.packaging_type,
                "category": p.label.category,
            },
            "world_x": p.world_x,
            "world_y": p.world_y,
            "refined": p.refined,
            "frame_id": p.frame_id,
            "sharpness": p.sharpness,
        }
        for p in products
    ]


def products_from_json(data: list[dict]) -> list[ProductRecord]:
    return [
        ProductRecord(
            product_id=d["product_id"],
            label=ProductLabel(
                name=d["label"]["name"],
                brand=d["label"].get("brand", ""),
                packaging_type=d["label"].get("packaging_type", ""),
                category=d["label"].get("category", ""),
            ),
            world_x=float(d["world_x"]),
            world_y=float(d["world_y"]),
            refined=bool(d["refined"]),
            frame_id=d["frame_id"],
            sharpness=d.get("sharpness", SHARP),
        )
        for d in data
    ]
