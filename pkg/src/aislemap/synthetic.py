"""Deterministic synthetic store generator.

Builds a rectangular grocery store with horizontal shelf rows split into
two banks by a central cross corridor, walks a serpentine camera
trajectory through every corridor, and emits the two raw inputs the
pipeline consumes: a scan manifest (frames.jsonl) and a height-sliced
point cloud (cloud.xyz). A truth.json sidecar records ground-truth
product positions and layout geometry for debugging and tests.

Everything is seeded. Independent RNG streams per concern keep output
stable even if one stage changes how much randomness it draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

RESOLUTION = 0.05
WALL_THICKNESS = 0.2
CORRIDOR_WIDTH = 1.5
SHELF_DEPTH = 1.0
CROSS_HALF_WIDTH = 1.25
STORE_WIDTH = 20.0
BANK_X0 = 2.25
BANK_X1 = STORE_WIDTH - 2.25
FACE_MARGIN = 0.1
CAP_SLOTS_MAX = 8
CAP_BUDGET_SHARE = 0.2
CAP_MARGIN = 0.05
SLOT_JITTER_M = 0.025
CAMERA_HEIGHT = 1.2
PRODUCT_HEIGHT = 1.0
FOV_HALF_DEG = 25.0
DETECT_MIN_M = 0.8
DETECT_MAX_M = 4.0
WAYPOINT_STEP_M = 0.25
TRAJECTORY_MARGIN = 0.75
EMBED_DIM = 16
EMBED_DRIFT = 0.12
EMBED_JUMP_EVERY = 37
EMBED_JUMP_SCALE = 1.5
PIXEL_NOISE_PX = 1.0
DEPTH_NOISE_BASE = 0.01
DEPTH_NOISE_RATE = 0.005
FACE_INSET_M = 0.02
LOS_CLEARANCE_M = 0.12

FX = 500.0
FY = 500.0
CX = 320.0
CY = 240.0

# name, brand, packaging, category. Cycled over shelf slots in realistic
# mode; categories are chosen so the default zone keyword rules hit most
# of them.
LABEL_TABLE: tuple[tuple[str, str, str, str], ...] = (
    ("Basmati Rice 5kg", "Royal Harvest", "bag", "basmati rice"),
    ("Toor Dal", "Desi Pantry", "bag", "lentils"),
    ("Chana Masala Mix", "SpiceRoute", "box", "spice blend"),
    ("Sunflower Oil 1L", "GoldenDrop", "bottle", "cooking oil"),
    ("Pure Ghee 500ml", "Gokul", "jar", "ghee"),
    ("Garlic Paste", "SpiceRoute", "jar", "cooking paste"),
    ("Biryani Masala", "SpiceRoute", "box", "biryani spices"),
    ("Whole Wheat Atta", "Annapurna", "bag", "flour"),
    ("Green Tea 100ct", "MorningLeaf", "box", "tea"),
    ("Instant Coffee", "DawnBrew", "jar", "coffee"),
    ("Mango Pickle", "Desi Pantry", "jar", "condiment"),
    ("Paneer 400g", "Gokul", "box", "dairy"),
    ("Plain Yogurt 2lb", "Gokul", "tub", "dairy"),
    ("Frozen Samosas", "QuickBite", "box", "frozen snacks"),
    ("Mango Juice 1L", "SunGrove", "bottle", "beverage"),
    ("Sparkling Water", "ClearSpring", "bottle", "beverage"),
    ("Masala Chips", "CrunchTime", "bag", "snacks"),
    ("Chocolate Cookies", "CrunchTime", "box", "cookies"),
    ("Dish Soap", "HomePure", "bottle", "cleaning"),
    ("Shampoo 400ml", "CareWell", "bottle", "personal care"),
    ("Toothpaste", "CareWell", "box", "personal care"),
    ("Red Kidney Beans", "Desi Pantry", "bag", "rajma beans"),
    ("Moong Dal", "Desi Pantry", "bag", "dal"),
    ("Turmeric Powder", "SpiceRoute", "box", "ground spice"),
    ("Cumin Seeds", "SpiceRoute", "bag", "whole spice"),
    ("Egg Noodles", "WokStar", "bag", "noodles"),
    ("Penne Pasta", "BellaCucina", "box", "pasta"),
    ("Corn Flakes", "MorningLeaf", "box", "breakfast cereal"),
    ("Rolled Oats 1kg", "MorningLeaf", "bag", "breakfast oats"),
    ("Canned Chickpeas", "PantryPro", "can", "canned beans"),
    ("Tomato Sauce", "BellaCucina", "jar", "pasta sauce"),
    ("Soy Sauce", "WokStar", "bottle", "sauce"),
    ("Fresh Bananas", "FarmStand", "loose", "produce"),
    ("Roma Tomatoes", "FarmStand", "loose", "produce"),
    ("Sourdough Loaf", "DailyCrust", "bag", "bakery bread"),
    ("Sesame Bagels", "DailyCrust", "bag", "bakery"),
    ("Vanilla Ice Cream", "SnowPeak", "tub", "frozen dessert"),
    ("Paper Towels", "HomePure", "pack", "household paper"),
    ("Laundry Detergent", "HomePure", "bottle", "laundry"),
    ("Idli Rice 10lb", "Royal Harvest", "bag", "rice"),
)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in world meters, [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass(frozen=True)
class TruthProduct:
    """Ground truth for one shelf slot."""

    name: str
    brand: str
    packaging_type: str
    category: str
    face_x: float
    face_y: float
    # unit normal pointing from the face into the corridor
    normal_x: float
    normal_y: float
    shelf_row: int


@dataclass(frozen=True)
class StoreLayout:
    aisles: int
    width_m: float
    height_m: float
    shelf_rects: tuple[Rect, ...]
    wall_rects: tuple[Rect, ...]
    corridor_ys: tuple[float, ...]

    @property
    def blockers(self) -> tuple[Rect, ...]:
        return self.shelf_rects + self.wall_rects


@dataclass
class SyntheticStore:
    layout: StoreLayout
    frames: list[dict]
    cloud: np.ndarray
    products: list[TruthProduct]
    waypoints: list[tuple[float, float, float]]
    seed: int
    unique_labels: bool


def make_layout(aisles: int) -> StoreLayout:
    if aisles < 1:
        raise ValueError("need at least one shelf row")
    height = CORRIDOR_WIDTH + aisles * SHELF_DEPTH + (aisles - 1) * CORRIDOR_WIDTH + CORRIDOR_WIDTH
    cross_x0 = STORE_WIDTH / 2 - CROSS_HALF_WIDTH
    cross_x1 = STORE_WIDTH / 2 + CROSS_HALF_WIDTH
    shelves = []
    for i in range(aisles):
        y0 = CORRIDOR_WIDTH + i * (SHELF_DEPTH + CORRIDOR_WIDTH)
        y1 = y0 + SHELF_DEPTH
        shelves.append(Rect(BANK_X0, y0, cross_x0, y1))
        shelves.append(Rect(cross_x1, y0, BANK_X1, y1))
    t = WALL_THICKNESS
    w, h = STORE_WIDTH, height
    walls = (
        Rect(-t, -t, w + t, 0.0),
        Rect(-t, h, w + t, h + t),
        Rect(-t, 0.0, 0.0, h),
        Rect(w, 0.0, w + t, h),
    )
    corridor_ys = [CORRIDOR_WIDTH / 2]
    for i in range(aisles - 1):
        top_of_row = CORRIDOR_WIDTH + i * (SHELF_DEPTH + CORRIDOR_WIDTH) + SHELF_DEPTH
        corridor_ys.append(top_of_row + CORRIDOR_WIDTH / 2)
    corridor_ys.append(height - CORRIDOR_WIDTH / 2)
    return StoreLayout(
        aisles=aisles,
        width_m=STORE_WIDTH,
        height_m=height,
        shelf_rects=tuple(shelves),
        wall_rects=walls,
        corridor_ys=tuple(corridor_ys),
    )


# ---------------------------------------------------------------------------
# Trajectory


def _walk(a: tuple[float, float], b: tuple[float, float]) -> list[tuple[float, float, float]]:
    """Waypoints from a to b (exclusive of b) with heading along the segment."""
    ax, ay = a
    bx, by = b
    length = math.hypot(bx - ax, by - ay)
    heading = math.atan2(by - ay, bx - ax)
    n = max(1, int(length / WAYPOINT_STEP_M))
    out = []
    for i in range(n):
        f = i / n
        out.append((ax + (bx - ax) * f, ay + (by - ay) * f, heading))
    return out


def make_trajectory(layout: StoreLayout) -> list[tuple[float, float, float]]:
    """Serpentine sweep walking every horizontal corridor out and back
    (so shelf slots near both ends get seen head-on), climbing the west
    side corridor between passes, then out-and-back down the central
    cross corridor and down the east side corridor. The vertical runs
    hug the shelf banks so end-cap slots land in the detection cone."""
    left = TRAJECTORY_MARGIN
    right = layout.width_m - TRAJECTORY_MARGIN
    climb_w = BANK_X0 - 0.4
    climb_e = BANK_X1 + 0.4
    corners: list[tuple[float, float]] = []
    for i, y in enumerate(layout.corridor_ys):
        corners.extend([(left, y), (right, y), (left, y)])
        if i + 1 < len(layout.corridor_ys):
            corners.extend([(climb_w, y), (climb_w, layout.corridor_ys[i + 1])])
    cx = layout.width_m / 2
    first_y = layout.corridor_ys[0]
    last_y = layout.corridor_ys[-1]
    corners.extend(
        [
            (cx, last_y),
            (cx, first_y),
            (cx, last_y),
            (climb_e, last_y),
            (climb_e, first_y),
        ]
    )
    pts: list[tuple[float, float, float]] = []
    for a, b in zip(corners, corners[1:]):
        pts.extend(_walk(a, b))
    fx, fy = corners[-1]
    pts.append((fx, fy, pts[-1][2]))
    return pts


# ---------------------------------------------------------------------------
# Products


def _long_faces(layout: StoreLayout) -> list[tuple[Rect, float, float, int]]:
    """(rect, face_y, normal_y, shelf_row) for both long faces of every bank."""
    segs = []
    for idx, rect in enumerate(layout.shelf_rects):
        row = idx // 2
        segs.append((rect, rect.y0, -1.0, row))
        segs.append((rect, rect.y1, 1.0, row))
    return segs


def _cap_faces(layout: StoreLayout) -> list[tuple[Rect, float, float, int]]:
    """(rect, face_x, normal_x, shelf_row) for both end caps of every bank."""
    segs = []
    for idx, rect in enumerate(layout.shelf_rects):
        row = idx // 2
        segs.append((rect, rect.x0, -1.0, row))
        segs.append((rect, rect.x1, 1.0, row))
    return segs


def make_products(
    layout: StoreLayout,
    count: int,
    unique_labels: bool,
    rng: np.random.Generator | None = None,
) -> list[TruthProduct]:
    """Shelf slots: end-cap displays first, then long faces split the rest.

    The count covers everything; it must at least cover the caps. Slots
    get a small tangential jitter so facing positions are irregular the
    way restocked shelves are.
    """
    rng = rng or np.random.default_rng(0)
    caps = _cap_faces(layout)
    longs = _long_faces(layout)
    cap_slots = int(min(CAP_SLOTS_MAX, max(1, round(CAP_BUDGET_SHARE * count / len(caps)))))
    remaining = count - cap_slots * len(caps)
    if remaining < len(longs):
        raise ValueError(
            f"need at least {cap_slots * len(caps) + len(longs)} products for this layout"
        )

    slots: list[tuple[float, float, float, float, int]] = []  # x, y, nx, ny, row
    for rect, face_x, nx, row in caps:
        if cap_slots == 1:
            ys = np.array([(rect.y0 + rect.y1) / 2])
        else:
            ys = np.linspace(rect.y0 + CAP_MARGIN, rect.y1 - CAP_MARGIN, cap_slots)
        for y in ys:
            y += float(rng.uniform(-SLOT_JITTER_M, SLOT_JITTER_M))
            slots.append((float(face_x), float(y), float(nx), 0.0, row))
    base, rem = divmod(remaining, len(longs))
    for si, (rect, face_y, ny, row) in enumerate(longs):
        n = base + (1 if si < rem else 0)
        if n == 1:
            xs = np.array([(rect.x0 + rect.x1) / 2])
        else:
            xs = np.linspace(rect.x0 + FACE_MARGIN, rect.x1 - FACE_MARGIN, n)
        for x in xs:
            x += float(rng.uniform(-SLOT_JITTER_M, SLOT_JITTER_M))
            slots.append((float(x), float(face_y), 0.0, float(ny), row))

    out: list[TruthProduct] = []
    for serial, (x, y, nx, ny, row) in enumerate(slots):
        if unique_labels:
            name = f"Aisle item {serial:03d}"
            brand = f"brand-{serial:03d}"
            packaging = "box"
            category = f"category {serial:03d}"
        else:
            name, brand, packaging, category = LABEL_TABLE[serial % len(LABEL_TABLE)]
        out.append(
            TruthProduct(
                name=name,
                brand=brand,
                packaging_type=packaging,
                category=category,
                face_x=x,
                face_y=y,
                normal_x=nx,
                normal_y=ny,
                shelf_row=row,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Visibility


def _segment_hits_rect(p: tuple[float, float], q: tuple[float, float], rect: Rect) -> bool:
    """Slab test: does the open segment p-q pass through the rectangle."""
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    t0, t1 = 0.0, 1.0
    for delta, lo, hi, start in (
        (dx, rect.x0, rect.x1, p[0]),
        (dy, rect.y0, rect.y1, p[1]),
    ):
        if delta == 0.0:
            if start < lo or start > hi:
                return False
            continue
        ta = (lo - start) / delta
        tb = (hi - start) / delta
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return False
    return True


def _line_of_sight(layout: StoreLayout, cam: tuple[float, float], target: tuple[float, float]) -> bool:
    return not any(_segment_hits_rect(cam, target, r) for r in layout.blockers)


def _angle_diff(a: float, b: float) -> float:
    d = (a - b) % (2 * math.pi)
    if d >= math.pi:
        d -= 2 * math.pi
    return abs(d)


def pick_observation(
    layout: StoreLayout,
    waypoints: Sequence[tuple[float, float, float]],
    product: TruthProduct,
) -> int | None:
    """Index of the closest waypoint that sees the product head-on.

    Head-on means inside the detection cone, within range, and with a
    clear sight line to a point just off the shelf face.
    """
    clear = (
        product.face_x + product.normal_x * LOS_CLEARANCE_M,
        product.face_y + product.normal_y * LOS_CLEARANCE_M,
    )
    best: tuple[float, int] | None = None
    for i, (wx, wy, yaw) in enumerate(waypoints):
        dx = clear[0] - wx
        dy = clear[1] - wy
        dist = math.hypot(dx, dy)
        if dist < DETECT_MIN_M or dist > DETECT_MAX_M:
            continue
        if _angle_diff(math.atan2(dy, dx), yaw) > math.radians(FOV_HALF_DEG):
            continue
        if not _line_of_sight(layout, (wx, wy), clear):
            continue
        key = (dist, i)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


# ---------------------------------------------------------------------------
# Camera model


def _camera_pose(x: float, y: float, yaw: float) -> tuple[np.ndarray, np.ndarray]:
    """World-from-camera rotation and translation.

    Camera x is right, y is down, z is the forward optical axis; the
    optical axis is horizontal at the given yaw.
    """
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array(
        [
            [s, 0.0, c],
            [-c, 0.0, s],
            [0.0, -1.0, 0.0],
        ]
    )
    t = np.array([x, y, CAMERA_HEIGHT])
    return rot, t


def _project(rot: np.ndarray, t: np.ndarray, point: np.ndarray) -> tuple[float, float, float]:
    p_cam = rot.T @ (point - t)
    z = float(p_cam[2])
    u = FX * float(p_cam[0]) / z + CX
    v = FY * float(p_cam[1]) / z + CY
    return u, v, z


# ---------------------------------------------------------------------------
# Point cloud


def _rect_cloud(rect: Rect, z: float) -> np.ndarray:
    """Four points per occupancy cell whose center lies in the rect.

    The points sit 1.25 cm around each cell center, comfortably inside
    a single 5 cm cell, so every covered cell clears the hit threshold.
    """
    half = RESOLUTION / 2
    xs = np.arange(math.floor(rect.x0 / RESOLUTION), math.ceil(rect.x1 / RESOLUTION)) * RESOLUTION + half
    ys = np.arange(math.floor(rect.y0 / RESOLUTION), math.ceil(rect.y1 / RESOLUTION)) * RESOLUTION + half
    xs = xs[(xs >= rect.x0) & (xs < rect.x1)]
    ys = ys[(ys >= rect.y0) & (ys < rect.y1)]
    if len(xs) == 0 or len(ys) == 0:
        return np.zeros((0, 3))
    gx, gy = np.meshgrid(xs, ys)
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    q = RESOLUTION / 4
    offsets = np.array([[-q, -q], [q, -q], [-q, q], [q, q]])
    pts = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    return np.column_stack([pts, np.full(len(pts), z)])


def make_cloud(layout: StoreLayout, rng: np.random.Generator) -> np.ndarray:
    parts = [_rect_cloud(r, 0.8) for r in layout.blockers]
    # out-of-band clutter the height slice must reject
    n = 1500
    for z in (0.02, 2.2):
        xy = rng.uniform(
            [0.3, 0.3],
            [layout.width_m - 0.3, layout.height_m - 0.3],
            size=(n, 2),
        )
        parts.append(np.column_stack([xy, np.full(n, z)]))
    return np.vstack(parts)


# ---------------------------------------------------------------------------
# Embeddings


def make_embeddings(count: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm appearance vectors: slow drift with periodic jumps so a
    sequential cosine filter keeps a sparse, nonempty subset."""
    vecs = np.zeros((count, EMBED_DIM))
    v = rng.normal(size=EMBED_DIM)
    v /= np.linalg.norm(v)
    for i in range(count):
        scale = EMBED_JUMP_SCALE if i > 0 and i % EMBED_JUMP_EVERY == 0 else EMBED_DRIFT
        v = v + rng.normal(size=EMBED_DIM) * scale
        v /= np.linalg.norm(v)
        vecs[i] = v
    return vecs


# ---------------------------------------------------------------------------
# Assembly


def generate_store(
    aisles: int = 4,
    products: int = 100,
    seed: int = 7,
    unique_labels: bool = False,
) -> SyntheticStore:
    layout = make_layout(aisles)
    waypoints = make_trajectory(layout)

    rng_cloud = np.random.default_rng([seed, 0])
    rng_embed = np.random.default_rng([seed, 1])
    rng_noise = np.random.default_rng([seed, 2])
    rng_slots = np.random.default_rng([seed, 3])

    truth = make_products(layout, products, unique_labels, rng_slots)

    cloud = make_cloud(layout, rng_cloud)
    embeddings = make_embeddings(len(waypoints), rng_embed)

    detections: dict[int, list[dict]] = {}
    for pi, prod in enumerate(truth):
        fi = pick_observation(layout, waypoints, prod)
        if fi is None:
            raise RuntimeError(
                f"product {pi} at ({prod.face_x:.2f}, {prod.face_y:.2f}) is never observed"
            )
        wx, wy, yaw = waypoints[fi]
        rot, t = _camera_pose(wx, wy, yaw)
        target = np.array(
            [
                prod.face_x - prod.normal_x * FACE_INSET_M,
                prod.face_y - prod.normal_y * FACE_INSET_M,
                PRODUCT_HEIGHT,
            ]
        )
        u, v, depth = _project(rot, t, target)
        u += rng_noise.normal(0.0, PIXEL_NOISE_PX)
        v += rng_noise.normal(0.0, PIXEL_NOISE_PX)
        depth += rng_noise.normal(0.0, DEPTH_NOISE_BASE + DEPTH_NOISE_RATE * depth)
        detections.setdefault(fi, []).append(
            {
                "u": round(u, 3),
                "v": round(v, 3),
                "median_depth": round(depth, 4),
                "label": {
                    "name": prod.name,
                    "brand": prod.brand,
                    "packaging_type": prod.packaging_type,
                    "category": prod.category,
                },
                "sharpness": "blurry" if pi % 9 == 8 else "sharp",
            }
        )

    frames = []
    for i, (wx, wy, yaw) in enumerate(waypoints):
        rot, t = _camera_pose(wx, wy, yaw)
        frames.append(
            {
                "frame_id": f"f{i:05d}",
                "timestamp": round(i * 0.2, 3),
                "intrinsics": {"fx": FX, "fy": FY, "cx": CX, "cy": CY},
                "pose": {
                    "R": [[round(val, 12) for val in row] for row in rot.tolist()],
                    "t": [round(val, 6) for val in t.tolist()],
                },
                "embedding": [round(val, 6) for val in embeddings[i].tolist()],
                "detections": detections.get(i, []),
            }
        )

    return SyntheticStore(
        layout=layout,
        frames=frames,
        cloud=cloud,
        products=truth,
        waypoints=waypoints,
        seed=seed,
        unique_labels=unique_labels,
    )


def truth_to_json(store: SyntheticStore) -> dict:
    lay = store.layout
    return {
        "seed": store.seed,
        "aisles": lay.aisles,
        "unique_labels": store.unique_labels,
        "extent": {"width_m": lay.width_m, "height_m": lay.height_m},
        "corridor_ys": list(lay.corridor_ys),
        "shelves": [[r.x0, r.y0, r.x1, r.y1] for r in lay.shelf_rects],
        "products": [
            {
                "name": p.name,
                "brand": p.brand,
                "category": p.category,
                "face_x": p.face_x,
                "face_y": p.face_y,
                "corridor_x": p.face_x + p.normal_x * LOS_CLEARANCE_M,
                "corridor_y": p.face_y + p.normal_y * LOS_CLEARANCE_M,
                "shelf_row": p.shelf_row,
            }
            for p in store.products
        ],
    }


def write_store(store: SyntheticStore, out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames_path = out_dir / "frames.jsonl"
    with frames_path.open("w") as fh:
        for frame in store.frames:
            fh.write(json.dumps(frame, separators=(",", ":")) + "\n")
    cloud_path = out_dir / "cloud.xyz"
    np.savetxt(cloud_path, store.cloud, fmt="%.4f")
    truth_path = out_dir / "truth.json"
    truth_path.write_text(json.dumps(truth_to_json(store), indent=2, sort_keys=True) + "\n")
    return {"frames": frames_path, "cloud": cloud_path, "truth": truth_path}
