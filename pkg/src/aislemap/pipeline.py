"""Batch pipeline: raw scan inputs to a versioned map bundle.

Each stage is a pure function from inputs to artifacts on disk. A
bundle directory collects the artifacts plus bundle.json, which lists
every artifact with its sha256 so consumers can verify integrity before
trusting the data. Identical inputs produce byte-identical bundles.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from . import grid_io
from .errors import BundleError, ConfigError
from .geometry import OccupancyGrid
from .ingest import (
    DEFAULT_KEYFRAME_THRESHOLD,
    DEFAULT_MAX_PUSH_M,
    DEFAULT_MIN_HITS,
    DEFAULT_RESOLUTION,
    DEFAULT_Z_MAX,
    DEFAULT_Z_MIN,
    ProductRecord,
    build_occupancy,
    extract_products,
    load_cloud,
    load_frames,
    products_from_json,
    products_to_json,
    select_keyframes,
)
from .localization import (
    DEFAULT_EMBEDDING_DIM,
    HashedTokenProvider,
    PoseGridSpec,
    PoseMap,
    build_pose_map,
    load_pose_map,
    save_pose_map,
)
from .routing import (
    DEFAULT_LANDMARK_RADIUS_M,
    DEFAULT_TEMPLATES,
    DEFAULT_TURN_THRESHOLD_DEG as ROUTE_TURN_DEG,
    DENSE_SAMPLE_STEP_M,
)
from .topology import (
    DEFAULT_MERGE_RADIUS_M,
    DEFAULT_SPUR_LENGTH_M,
    DEFAULT_TURN_THRESHOLD_DEG,
    TopologyGraph,
    bind_product,
    extract_graph,
    graph_from_json,
    graph_to_json,
    skeletonize,
)
from .zones import (
    DEFAULT_K,
    DEFAULT_RULES,
    ZoneCatalog,
    ZoneOverlay,
    ZoneRule,
    assign_zones,
    catalog_from_json,
    catalog_to_json,
    load_overlay,
    save_overlay,
    vote_overlay,
)

SCHEMA_VERSION = 1

# artifact file names inside a bundle directory
OCCUPANCY_PGM = "occupancy.pgm"
OCCUPANCY_META = "occupancy.json"
KEYFRAMES_JSON = "keyframes.json"
PRODUCTS_JSON = "products.json"
TOPOLOGY_JSON = "topology.json"
ZONES_JSON = "zones.json"
OVERLAY_PGM = "zone_overlay.pgm"
OVERLAY_META = "zone_overlay.json"
POSEMAP_BIN = "posemap.bin"
CONFIG_JSON = "config.json"
BUNDLE_JSON = "bundle.json"


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable the pipeline stages accept, with validated ranges."""

    frames: str = "frames.jsonl"
    cloud: str = "cloud.xyz"
    out_dir: str = "bundle"

    resolution: float = DEFAULT_RESOLUTION
    z_min: float = DEFAULT_Z_MIN
    z_max: float = DEFAULT_Z_MAX
    min_hits: int = DEFAULT_MIN_HITS

    keyframe_threshold: float = DEFAULT_KEYFRAME_THRESHOLD
    max_push_m: float = DEFAULT_MAX_PUSH_M

    turn_threshold_deg: float = DEFAULT_TURN_THRESHOLD_DEG
    merge_radius_m: float = DEFAULT_MERGE_RADIUS_M
    spur_length_m: float = DEFAULT_SPUR_LENGTH_M

    zone_k: int = DEFAULT_K
    zone_rules: tuple[tuple[str, str], ...] | None = None

    pose_cell_m: float = 0.5
    orientation_bins: int = 8
    fov_deg: float = 60.0
    range_m: float = 6.0
    rays: int = 20
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    route_turn_threshold_deg: float = ROUTE_TURN_DEG
    landmark_radius_m: float = DEFAULT_LANDMARK_RADIUS_M
    dense_landmarks: bool = True
    dense_landmark_spacing_m: float = DENSE_SAMPLE_STEP_M
    instruction_templates: dict[str, str] | None = None

    def __post_init__(self):
        # canonical storage is plain str / dict so the config serializes
        # as-is; accept Path objects and pair sequences from callers
        for name in ("frames", "cloud", "out_dir"):
            value = getattr(self, name)
            if not isinstance(value, str):
                object.__setattr__(self, name, str(value))
        if self.instruction_templates is not None and not isinstance(
            self.instruction_templates, dict
        ):
            object.__setattr__(self, "instruction_templates", dict(self.instruction_templates))
        checks = [
            (0.0 < self.resolution <= 0.5, "resolution must be in (0, 0.5] m"),
            (self.z_min < self.z_max, "z_min must be below z_max"),
            (self.min_hits >= 1, "min_hits must be >= 1"),
            (-1.0 <= self.keyframe_threshold <= 1.0, "keyframe_threshold must be in [-1, 1]"),
            (self.max_push_m > 0, "max_push_m must be positive"),
            (0 < self.turn_threshold_deg < 180, "turn_threshold_deg must be in (0, 180)"),
            (self.merge_radius_m >= 0, "merge_radius_m must be >= 0"),
            (self.spur_length_m >= 0, "spur_length_m must be >= 0"),
            (self.zone_k >= 1, "zone_k must be >= 1"),
            (self.pose_cell_m > 0, "pose_cell_m must be positive"),
            (self.orientation_bins >= 1, "orientation_bins must be >= 1"),
            (0 < self.fov_deg <= 360, "fov_deg must be in (0, 360]"),
            (self.range_m > 0, "range_m must be positive"),
            (self.rays >= 1, "rays must be >= 1"),
            (self.embedding_dim >= 8, "embedding_dim must be >= 8"),
            (0 < self.route_turn_threshold_deg <= 180, "route_turn_threshold_deg must be in (0, 180]"),
            (self.landmark_radius_m > 0, "landmark_radius_m must be positive"),
            (self.dense_landmark_spacing_m > 0, "dense_landmark_spacing_m must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def pose_spec(self) -> PoseGridSpec:
        return PoseGridSpec(
            cell_size=self.pose_cell_m,
            orientation_bins=self.orientation_bins,
            fov_deg=self.fov_deg,
            range_m=self.range_m,
            rays=self.rays,
        )

    @property
    def rules(self) -> list[ZoneRule]:
        if self.zone_rules is None:
            return list(DEFAULT_RULES)
        return [ZoneRule(keyword=k, zone=z) for k, z in self.zone_rules]

    @property
    def templates(self) -> dict[str, str]:
        if self.instruction_templates is None:
            return dict(DEFAULT_TEMPLATES)
        merged = dict(DEFAULT_TEMPLATES)
        merged.update(self.instruction_templates)
        return merged

    def to_json(self) -> dict:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "zone_rules" and value is not None:
                value = [list(pair) for pair in value]
            out[f.name] = value
        return out


def config_from_json(data: dict) -> PipelineConfig:
    """Parse a config mapping, rejecting unknown keys outright."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if data.get("zone_rules") is not None:
        try:
            data["zone_rules"] = tuple((str(k), str(z)) for k, z in data["zone_rules"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("zone_rules must be a list of [keyword, zone] pairs") from exc
    try:
        return PipelineConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_json(data)


# ---------------------------------------------------------------------------
# Artifact helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path, expect_version: int = SCHEMA_VERSION) -> dict:
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise BundleError(f"missing artifact: {path.name}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"corrupt artifact {path.name}: {exc}") from exc
    version = data.get("schema_version")
    if version != expect_version:
        raise BundleError(
            f"{path.name}: schema_version {version!r} unsupported (expected {expect_version})"
        )
    return data


def update_bundle_manifest(out_dir: Path, names: list[str]) -> dict:
    """Record (or refresh) digests for the named artifacts in bundle.json."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / BUNDLE_JSON
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise BundleError(f"bundle.json has unsupported schema_version")
    else:
        manifest = {"schema_version": SCHEMA_VERSION, "artifacts": {}}
    for name in names:
        path = out_dir / name
        if not path.exists():
            raise BundleError(f"artifact {name} was not written")
        manifest["artifacts"][name] = {"path": name, "sha256": _sha256(path)}
    _write_json(manifest_path, manifest)
    return manifest


@dataclass
class MapBundle:
    """A bundle directory with verified artifact digests."""

    root: Path
    artifacts: dict[str, str]  # name -> sha256

    def path(self, name: str) -> Path:
        if name not in self.artifacts:
            raise BundleError(f"bundle has no {name!r} artifact")
        return self.root / name

    def has(self, name: str) -> bool:
        return name in self.artifacts


def load_bundle(root: Path, verify: bool = True) -> MapBundle:
    root = Path(root)
    manifest_path = root / BUNDLE_JSON
    if not manifest_path.exists():
        raise BundleError(f"no bundle.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise BundleError("bundle.json has unsupported schema_version")
    artifacts = {}
    for name, entry in manifest.get("artifacts", {}).items():
        path = root / entry["path"]
        if not path.exists():
            raise BundleError(f"artifact {name} listed in bundle.json is missing")
        if verify:
            digest = _sha256(path)
            if digest != entry["sha256"]:
                raise BundleError(f"artifact {name} digest mismatch")
        artifacts[name] = entry["sha256"]
    return MapBundle(root=root, artifacts=artifacts)


# ---------------------------------------------------------------------------
# Stages


def stage_occupancy(cfg: PipelineConfig, out_dir: Path) -> OccupancyGrid:
    """cloud.xyz + camera track -> occupancy.pgm/.json"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cloud = load_cloud(Path(cfg.cloud))
    frames = load_frames(Path(cfg.frames))
    traversal = [f.pose.camera_xy for f in frames]
    grid = build_occupancy(
        cloud,
        resolution=cfg.resolution,
        z_min=cfg.z_min,
        z_max=cfg.z_max,
        min_hits=cfg.min_hits,
        traversal=traversal,
    )
    grid_io.save_pgm(grid, out_dir / OCCUPANCY_PGM)
    update_bundle_manifest(out_dir, [OCCUPANCY_PGM, OCCUPANCY_META])
    return grid


def stage_keyframes(cfg: PipelineConfig, out_dir: Path) -> list[int]:
    """Sequential cosine filter over frame embeddings -> keyframes.json"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = load_frames(Path(cfg.frames))
    embeddings = [f.embedding for f in frames if f.embedding is not None]
    if len(embeddings) != len(frames):
        raise BundleError("some frames lack embeddings; cannot select keyframes")
    kept = select_keyframes(embeddings, cfg.keyframe_threshold)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "threshold": cfg.keyframe_threshold,
        "total_frames": len(frames),
        "kept_indices": kept,
        "kept_frame_ids": [frames[i].frame_id for i in kept],
    }
    _write_json(out_dir / KEYFRAMES_JSON, payload)
    update_bundle_manifest(out_dir, [KEYFRAMES_JSON])
    return kept


def stage_products(cfg: PipelineConfig, out_dir: Path, grid: OccupancyGrid) -> list[ProductRecord]:
    """Unproject + refine every detection -> products.json"""
    out_dir = Path(out_dir)
    frames = load_frames(Path(cfg.frames))
    products = extract_products(frames, grid, max_push_m=cfg.max_push_m)
    payload = {"schema_version": SCHEMA_VERSION, "products": products_to_json(products)}
    _write_json(out_dir / PRODUCTS_JSON, payload)
    update_bundle_manifest(out_dir, [PRODUCTS_JSON])
    return products


def stage_topology(
    cfg: PipelineConfig,
    out_dir: Path,
    grid: OccupancyGrid,
    products: list[ProductRecord],
) -> TopologyGraph:
    """Skeleton -> graph -> product bindings -> topology.json"""
    out_dir = Path(out_dir)
    skeleton = skeletonize(grid)
    graph = extract_graph(
        skeleton,
        grid,
        turn_threshold_deg=cfg.turn_threshold_deg,
        merge_radius_m=cfg.merge_radius_m,
        spur_length_m=cfg.spur_length_m,
    )
    bindings = {
        p.product_id: bind_product(graph, grid, p.product_id, p.position)
        for p in products
    }
    graph = graph.with_bindings(bindings)
    _write_json(out_dir / TOPOLOGY_JSON, graph_to_json(graph))
    update_bundle_manifest(out_dir, [TOPOLOGY_JSON])
    return graph


def stage_zones(
    cfg: PipelineConfig,
    out_dir: Path,
    grid: OccupancyGrid,
    products: list[ProductRecord],
) -> tuple[ZoneCatalog, ZoneOverlay]:
    """Keyword zoning + per-cell vote -> zones.json + zone_overlay.pgm/.json"""
    out_dir = Path(out_dir)
    catalog = assign_zones(products, rules=cfg.rules)
    overlay = vote_overlay(grid, products, catalog, k=cfg.zone_k)
    _write_json(out_dir / ZONES_JSON, catalog_to_json(catalog, overlay))
    save_overlay(overlay, catalog, out_dir / OVERLAY_PGM)
    update_bundle_manifest(out_dir, [ZONES_JSON, OVERLAY_PGM, OVERLAY_META])
    return catalog, overlay


def stage_posemap(
    cfg: PipelineConfig,
    out_dir: Path,
    grid: OccupancyGrid,
    products: list[ProductRecord],
) -> PoseMap:
    """FOV raycast signatures for every free pose -> posemap.bin"""
    out_dir = Path(out_dir)
    provider = HashedTokenProvider(cfg.embedding_dim)
    pose_map = build_pose_map(grid, products, cfg.pose_spec, provider)
    save_pose_map(pose_map, out_dir / POSEMAP_BIN)
    update_bundle_manifest(out_dir, [POSEMAP_BIN])
    return pose_map


def run_pipeline(cfg: PipelineConfig) -> MapBundle:
    """All build stages in dependency order; returns the verified bundle."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / CONFIG_JSON, cfg.to_json())
    update_bundle_manifest(out_dir, [CONFIG_JSON])
    grid = stage_occupancy(cfg, out_dir)
    stage_keyframes(cfg, out_dir)
    products = stage_products(cfg, out_dir, grid)
    stage_topology(cfg, out_dir, grid, products)
    stage_zones(cfg, out_dir, grid, products)
    stage_posemap(cfg, out_dir, grid, products)
    return load_bundle(out_dir)


# ---------------------------------------------------------------------------
# Bundle readers (service + query subcommands)


@dataclass
class LoadedBundle:
    """Deserialized artifacts an online consumer needs, loaded once."""

    bundle: MapBundle
    grid: OccupancyGrid
    graph: TopologyGraph | None
    products: list[ProductRecord]
    catalog: ZoneCatalog | None
    overlay: ZoneOverlay | None
    pose_map: PoseMap | None
    config: PipelineConfig

    @property
    def products_by_id(self) -> dict[str, ProductRecord]:
        return {p.product_id: p for p in self.products}


def open_bundle(root: Path, verify: bool = True) -> LoadedBundle:
    bundle = load_bundle(root, verify=verify)
    if not bundle.has(OCCUPANCY_PGM):
        raise BundleError("bundle lacks an occupancy map")
    grid = grid_io.load_pgm(bundle.path(OCCUPANCY_PGM))

    cfg = PipelineConfig()
    if bundle.has(CONFIG_JSON):
        cfg = config_from_json(json.loads(bundle.path(CONFIG_JSON).read_text()))

    products: list[ProductRecord] = []
    if bundle.has(PRODUCTS_JSON):
        data = _read_json(bundle.path(PRODUCTS_JSON))
        products = products_from_json(data["products"])

    graph = None
    if bundle.has(TOPOLOGY_JSON):
        graph = graph_from_json(_read_json(bundle.path(TOPOLOGY_JSON)))

    catalog = overlay = None
    if bundle.has(ZONES_JSON):
        catalog, _anchors = catalog_from_json(_read_json(bundle.path(ZONES_JSON)))
    if bundle.has(OVERLAY_PGM):
        overlay, _names = load_overlay(bundle.path(OVERLAY_PGM))

    pose_map = None
    if bundle.has(POSEMAP_BIN):
        pose_map = load_pose_map(bundle.path(POSEMAP_BIN))

    return LoadedBundle(
        bundle=bundle,
        grid=grid,
        graph=graph,
        products=products,
        catalog=catalog,
        overlay=overlay,
        pose_map=pose_map,
        config=cfg,
    )
