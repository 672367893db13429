"""Semantic zones: rule-based product classification, floor painting, anchors.

Every product is mapped to a named zone by ordered keyword rules over its
category and name. Zones are then spread over the walkable floor by a
k-nearest inverse-distance-squared vote, so each Free cell carries the
zone of the shelf products around it. Anchors (spatial median of the
largest cluster) give each zone a routable fallback target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyRules, NoProducts, ZoneEmpty
from .geometry import (
    CellState,
    GridPoint,
    OccupancyGrid,
    WorldPoint,
    label_components,
    spatial_median,
)
from .ingest import ProductRecord

OTHER_ZONE = "Other"
DEFAULT_K = 5
DISTANCE_EPSILON = 1e-6  # m^2; keeps the d=0 coincidence weight finite
NO_ZONE = -1


@dataclass(frozen=True)
class ZoneRule:
    keyword: str
    zone: str

    def __post_init__(self):
        if not self.keyword or not self.zone:
            raise ValueError("rule keyword and zone must be non-empty")


@dataclass(frozen=True)
class ZoneCatalog:
    zones: tuple[str, ...]
    product_zone: dict[str, int]

    def __post_init__(self):
        if len(set(self.zones)) != len(self.zones):
            raise ValueError("zone names must be unique")
        for pid, zi in self.product_zone.items():
            if not 0 <= zi < len(self.zones):
                raise ValueError(f"product {pid} references invalid zone {zi}")

    def zone_of(self, product_id: str) -> str:
        return self.zones[self.product_zone[product_id]]

    def index_of(self, zone: str) -> int:
        return self.zones.index(zone)


@dataclass
class ZoneOverlay:
    """Per-cell zone indices over the walkable floor.

    ``zone_of`` is (height, width) int16; Free cells hold a valid zone
    index, everything else holds NO_ZONE.
    """

    zone_of: np.ndarray
    resolution: float
    origin: WorldPoint
    anchors: dict[int, WorldPoint]

    def zone_at(self, p: WorldPoint) -> int:
        col = int(np.floor((p.x - self.origin.x) / self.resolution))
        row = int(np.floor((p.y - self.origin.y) / self.resolution))
        h, w = self.zone_of.shape
        if not (0 <= col < w and 0 <= row < h):
            return NO_ZONE
        return int(self.zone_of[row, col])

    def cell_center(self, cell: GridPoint) -> WorldPoint:
        return WorldPoint(
            self.origin.x + (float(cell.col) + 0.5) * self.resolution,
            self.origin.y + (float(cell.row) + 0.5) * self.resolution,
        )


# ---------------------------------------------------------------------------
# Default store vocabulary: 18 zones plus the unmatched-product fallback.
# Representative of a small grocery; replaceable via a rules JSON file.

DEFAULT_ZONES = (
    "Produce",
    "Dairy and eggs",
    "Bakery",
    "Frozen foods",
    "Beverages",
    "Snacks and confectionery",
    "Rice and grains",
    "Lentils, beans, and pulses",
    "Spices and seasonings",
    "Flours and baking",
    "Cooking oils and ghee",
    "Sauces, pastes, and condiments",
    "Canned and jarred goods",
    "Pasta and noodles",
    "Breakfast and cereals",
    "Tea and coffee",
    "Personal care",
    "Household and cleaning",
)

_DEFAULT_RULE_TABLE = [
    ("produce", "Produce"), ("vegetable", "Produce"), ("fruit", "Produce"),
    ("onion", "Produce"), ("potato", "Produce"), ("tomato", "Produce"),
    ("dairy", "Dairy and eggs"), ("milk", "Dairy and eggs"),
    ("yogurt", "Dairy and eggs"), ("curd", "Dairy and eggs"),
    ("paneer", "Dairy and eggs"), ("cheese", "Dairy and eggs"),
    ("butter", "Dairy and eggs"), ("egg", "Dairy and eggs"),
    ("bakery", "Bakery"), ("bread", "Bakery"), ("bun", "Bakery"),
    ("cake", "Bakery"),
    ("frozen", "Frozen foods"),
    ("beverage", "Beverages"), ("juice", "Beverages"), ("soda", "Beverages"),
    ("drink", "Beverages"), ("water", "Beverages"),
    ("snack", "Snacks and confectionery"), ("chips", "Snacks and confectionery"),
    ("biscuit", "Snacks and confectionery"), ("cookie", "Snacks and confectionery"),
    ("namkeen", "Snacks and confectionery"), ("chocolate", "Snacks and confectionery"),
    ("candy", "Snacks and confectionery"),
    ("basmati", "Rice and grains"), ("rice", "Rice and grains"),
    ("poha", "Rice and grains"), ("grain", "Rice and grains"),
    ("lentil", "Lentils, beans, and pulses"), ("dal", "Lentils, beans, and pulses"),
    ("chana", "Lentils, beans, and pulses"), ("bean", "Lentils, beans, and pulses"),
    ("pulse", "Lentils, beans, and pulses"), ("rajma", "Lentils, beans, and pulses"),
    ("protein", "Lentils, beans, and pulses"),
    ("spice", "Spices and seasonings"), ("masala", "Spices and seasonings"),
    ("biryani", "Spices and seasonings"), ("turmeric", "Spices and seasonings"),
    ("cumin", "Spices and seasonings"), ("seasoning", "Spices and seasonings"),
    ("chili powder", "Spices and seasonings"),
    ("flour", "Flours and baking"), ("atta", "Flours and baking"),
    ("besan", "Flours and baking"), ("baking", "Flours and baking"),
    ("ghee", "Cooking oils and ghee"), ("oil", "Cooking oils and ghee"),
    ("paste", "Sauces, pastes, and condiments"), ("sauce", "Sauces, pastes, and condiments"),
    ("chutney", "Sauces, pastes, and condiments"), ("pickle", "Sauces, pastes, and condiments"),
    ("ketchup", "Sauces, pastes, and condiments"),
    ("canned", "Canned and jarred goods"), ("jarred", "Canned and jarred goods"),
    ("tinned", "Canned and jarred goods"),
    ("pasta", "Pasta and noodles"), ("noodle", "Pasta and noodles"),
    ("vermicelli", "Pasta and noodles"),
    ("cereal", "Breakfast and cereals"), ("oats", "Breakfast and cereals"),
    ("muesli", "Breakfast and cereals"), ("breakfast", "Breakfast and cereals"),
    ("tea", "Tea and coffee"), ("coffee", "Tea and coffee"),
    ("chai", "Tea and coffee"),
    ("soap", "Personal care"), ("shampoo", "Personal care"),
    ("toothpaste", "Personal care"),
    ("detergent", "Household and cleaning"), ("cleaner", "Household and cleaning"),
    ("household", "Household and cleaning"),
]

DEFAULT_RULES = tuple(ZoneRule(k, z) for k, z in _DEFAULT_RULE_TABLE)


def rules_to_json(rules) -> list[dict]:
    return [{"keyword": r.keyword, "zone": r.zone} for r in rules]


def rules_from_json(data: list[dict]) -> list[ZoneRule]:
    return [ZoneRule(str(d["keyword"]), str(d["zone"])) for d in data]


def load_rules(path: Path) -> list[ZoneRule]:
    return rules_from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Classification


def classify_label(text: str, rules) -> str:
    """First matching keyword rule wins; no match lands in the fallback zone."""
    lowered = text.lower()
    for rule in rules:
        if rule.keyword.lower() in lowered:
            return rule.zone
    return OTHER_ZONE


def assign_zones(products: list[ProductRecord], rules=DEFAULT_RULES) -> ZoneCatalog:
    """Map each product to a zone via ordered keyword rules over its
    category and name.

    The catalog's zone list preserves rule order (first occurrence) with
    the fallback zone appended, so indices are stable for a given config.
    """
    rules = list(rules)
    if not rules:
        raise EmptyRules("zone classification needs at least one rule")
    if not products:
        raise NoProducts("zone classification needs at least one product")
    zones: list[str] = []
    for r in rules:
        if r.zone not in zones:
            zones.append(r.zone)
    if OTHER_ZONE not in zones:
        zones.append(OTHER_ZONE)
    index = {z: i for i, z in enumerate(zones)}
    product_zone = {}
    for p in products:
        text = f"{p.label.category} {p.label.name} {p.label.brand}"
        product_zone[p.product_id] = index[classify_label(text, rules)]
    return ZoneCatalog(tuple(zones), product_zone)


# ---------------------------------------------------------------------------
# Floor painting


def _canonical_order(products: list[ProductRecord]) -> list[ProductRecord]:
    # vote sums must not depend on manifest order; sort by position then id
    return sorted(products, key=lambda p: (p.world_x, p.world_y, p.product_id))


def vote_overlay(
    grid: OccupancyGrid,
    products: list[ProductRecord],
    catalog: ZoneCatalog,
    k: int = DEFAULT_K,
    epsilon: float = DISTANCE_EPSILON,
) -> ZoneOverlay:
    """Paint each Free cell with the argmax zone of an inverse-distance-
    squared vote over its k nearest products. Ties take the lowest zone
    index; Occupied and Unknown cells stay unzoned."""
    if not products:
        raise NoProducts("overlay voting needs at least one product")
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = _canonical_order(products)
    positions = np.array([[p.world_x, p.world_y] for p in ordered])
    zone_idx = np.array([catalog.product_zone[p.product_id] for p in ordered])
    n_zones = len(catalog.zones)

    zone_of = np.full((grid.height, grid.width), NO_ZONE, dtype=np.int16)
    free_rows, free_cols = np.nonzero(grid.mask(CellState.FREE))
    if len(free_rows) == 0:
        return ZoneOverlay(zone_of, grid.resolution, grid.origin, {})

    centers = np.stack(
        [
            grid.origin.x + (free_cols + 0.5) * grid.resolution,
            grid.origin.y + (free_rows + 0.5) * grid.resolution,
        ],
        axis=1,
    )
    kk = min(k, len(ordered))
    tree = cKDTree(positions)
    dists, nbrs = tree.query(centers, k=kk, workers=-1)
    if kk == 1:
        dists = dists[:, None]
        nbrs = nbrs[:, None]

    weights = 1.0 / (dists**2 + epsilon)
    scores = np.zeros((len(centers), n_zones))
    cell_ids = np.repeat(np.arange(len(centers)), kk)
    np.add.at(scores, (cell_ids, zone_idx[nbrs].ravel()), weights.ravel())
    winners = np.argmax(scores, axis=1)  # first (lowest) index wins ties

    zone_of[free_rows, free_cols] = winners.astype(np.int16)
    overlay = ZoneOverlay(zone_of, grid.resolution, grid.origin, {})
    present = sorted(int(z) for z in np.unique(winners))
    overlay.anchors = {z: zone_anchor(overlay, z) for z in present}
    return overlay


def zone_anchor(overlay: ZoneOverlay, zone: int) -> WorldPoint:
    """Representative point of a zone: spatial median of its largest
    8-connected cell cluster, as a world coordinate."""
    mask = overlay.zone_of == zone
    if not mask.any():
        raise ZoneEmpty(f"zone {zone} has no assigned cells")
    largest = label_components(mask)[0]
    med = spatial_median([GridPoint(int(c), int(r)) for r, c in largest])
    return overlay.cell_center(med)


# ---------------------------------------------------------------------------
# Persistence

_UNASSIGNED_GRAY = 255


def _gray_levels(n_zones: int) -> list[int]:
    if n_zones <= 0:
        return []
    if n_zones == 1:
        return [0]
    step = 240.0 / (n_zones - 1)
    return [int(round(i * step)) for i in range(n_zones)]


def save_overlay(overlay: ZoneOverlay, catalog: ZoneCatalog, pgm_path: Path,
                 meta_path: Path | None = None) -> None:
    """Overlay as a P5 PGM (top-down rows) plus a JSON sidecar mapping
    gray levels back to zone indices."""
    pgm_path = Path(pgm_path)
    levels = _gray_levels(len(catalog.zones))
    gray = np.full(overlay.zone_of.shape, _UNASSIGNED_GRAY, dtype=np.uint8)
    for zi, level in enumerate(levels):
        gray[overlay.zone_of == zi] = level
    gray = gray[::-1]
    h, w = overlay.zone_of.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    pgm_path.write_bytes(header + gray.tobytes())
    if meta_path is None:
        meta_path = pgm_path.with_suffix(".json")
    meta = {
        "schema_version": 1,
        "resolution": overlay.resolution,
        "origin_x": overlay.origin.x,
        "origin_y": overlay.origin.y,
        "unassigned_gray": _UNASSIGNED_GRAY,
        "gray_to_zone": {str(level): zi for zi, level in enumerate(levels)},
        "zones": list(catalog.zones),
        "anchors": {str(z): [p.x, p.y] for z, p in sorted(overlay.anchors.items())},
    }
    Path(meta_path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_overlay(pgm_path: Path, meta_path: Path | None = None) -> tuple[ZoneOverlay, list[str]]:
    from .grid_io import _parse_pgm

    pgm_path = Path(pgm_path)
    width, height, maxval, raw = _parse_pgm(pgm_path.read_bytes())
    gray = np.frombuffer(raw[: width * height], dtype=np.uint8).reshape(height, width)
    if meta_path is None:
        meta_path = pgm_path.with_suffix(".json")
    meta = json.loads(Path(meta_path).read_text())
    zone_of = np.full((height, width), NO_ZONE, dtype=np.int16)
    for level, zi in meta["gray_to_zone"].items():
        zone_of[gray == int(level)] = zi
    zone_of = zone_of[::-1]
    anchors = {
        int(z): WorldPoint(float(x), float(y))
        for z, (x, y) in meta.get("anchors", {}).items()
    }
    overlay = ZoneOverlay(
        zone_of,
        float(meta["resolution"]),
        WorldPoint(float(meta["origin_x"]), float(meta["origin_y"])),
        anchors,
    )
    return overlay, list(meta["zones"])


def catalog_to_json(catalog: ZoneCatalog, overlay: ZoneOverlay | None = None) -> dict:
    data: dict = {
        "schema_version": 1,
        "zones": list(catalog.zones),
        "anchors": [],
        "product_zones": dict(sorted(catalog.product_zone.items())),
    }
    if overlay is not None:
        data["anchors"] = [
            {"zone": catalog.zones[z], "x": p.x, "y": p.y}
            for z, p in sorted(overlay.anchors.items())
        ]
    return data


def catalog_from_json(data: dict) -> tuple[ZoneCatalog, dict[int, WorldPoint]]:
    zones = tuple(data["zones"])
    catalog = ZoneCatalog(zones, {k: int(v) for k, v in data.get("product_zones", {}).items()})
    anchors = {}
    for a in data.get("anchors", []):
        anchors[zones.index(a["zone"])] = WorldPoint(float(a["x"]), float(a["y"]))
    return catalog, anchors
