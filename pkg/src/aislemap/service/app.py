"""Read-only HTTP facade over a map bundle.

The bundle is immutable data; the app keeps a cached deserialization
keyed by the manifest digest and reloads only when bundle.json changes
on disk. Every endpoint is a pure function of (bundle bytes, request
body), so identical requests return identical bodies.
"""

from __future__ import annotations

import hashlib
import io
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from ..errors import MapError, ZoneEmpty
from ..geometry import WorldPoint
from ..localization import localize
from ..pipeline import (
    BUNDLE_JSON,
    OVERLAY_PGM,
    PRODUCTS_JSON,
    TOPOLOGY_JSON,
    ZONES_JSON,
    LoadedBundle,
    open_bundle,
)
from ..ingest import ProductLabel
from ..render import MapRenderer, RenderOptions
from ..routing import compute_route, route_to_json
from ..search import ExternalLMClient, SearchIndex, decompose, plan_to_json
from .schemas import (
    LocalizeRequest,
    LocalizeResponse,
    MapMeta,
    PoseOut,
    RouteRequest,
    SearchRequest,
)

LM_KEY_ENV = "AISLEMAP_LM_KEY"
MAP_RENDER_SCALE = 4


class BundleUnavailable(Exception):
    """Raised when no valid bundle is on disk; handled as 503."""


@dataclass
class _CacheEntry:
    digest: str
    loaded: LoadedBundle
    png: bytes
    meta: MapMeta
    index: SearchIndex


class BundleCache:
    """Digest-checked lazy loader; immutable snapshot per manifest state."""

    def __init__(self, bundle_dir: Path):
        self.bundle_dir = Path(bundle_dir)
        self._lock = threading.Lock()
        self._entry: _CacheEntry | None = None

    def _manifest_digest(self) -> str:
        manifest = self.bundle_dir / BUNDLE_JSON
        try:
            return hashlib.sha256(manifest.read_bytes()).hexdigest()
        except OSError as exc:
            raise BundleUnavailable(f"no bundle at {self.bundle_dir}") from exc

    def entry(self) -> _CacheEntry:
        digest = self._manifest_digest()
        with self._lock:
            if self._entry is not None and self._entry.digest == digest:
                return self._entry
            try:
                loaded = open_bundle(self.bundle_dir)
            except MapError as exc:
                raise BundleUnavailable(str(exc)) from exc
            png, meta = _render_bundle(loaded)
            anchors = loaded.overlay.anchors if loaded.overlay else {}
            index = (
                SearchIndex(loaded.products, loaded.catalog, anchors, loaded.config.rules)
                if loaded.catalog is not None
                else None
            )
            self._entry = _CacheEntry(digest, loaded, png, meta, index)
            return self._entry


def _render_bundle(loaded: LoadedBundle) -> tuple[bytes, MapMeta]:
    options = RenderOptions(scale=MAP_RENDER_SCALE)
    renderer = MapRenderer(loaded.grid, options)
    img = renderer.render(
        overlay=loaded.overlay,
        catalog=loaded.catalog,
        graph=loaded.graph,
        products=loaded.products,
    )
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    meta = MapMeta(
        width=loaded.grid.width,
        height=loaded.grid.height,
        resolution=loaded.grid.resolution,
        origin_x=loaded.grid.origin.x,
        origin_y=loaded.grid.origin.y,
        scale=options.scale,
        image_width=img.width,
        image_height=img.height,
    )
    return buf.getvalue(), meta


def _error_json(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def _file_response(loaded: LoadedBundle, name: str) -> Response:
    if not loaded.bundle.has(name):
        raise BundleUnavailable(f"bundle lacks {name}")
    return Response(
        content=loaded.bundle.path(name).read_bytes(), media_type="application/json"
    )


def create_app(
    bundle_dir: Path,
    ui_dir: Path | None = None,
    lm_url: str | None = None,
) -> FastAPI:
    app = FastAPI(title="aislemap service", docs_url=None, redoc_url=None)
    cache = BundleCache(Path(bundle_dir))
    lm_client = (
        ExternalLMClient(lm_url, api_key=os.environ.get(LM_KEY_ENV, ""))
        if lm_url
        else None
    )

    @app.exception_handler(BundleUnavailable)
    async def _bundle_missing(request: Request, exc: BundleUnavailable):
        return _error_json(503, "bundle_missing", str(exc))

    @app.exception_handler(MapError)
    async def _domain_error(request: Request, exc: MapError):
        return _error_json(422, exc.code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def _malformed(request: Request, exc: RequestValidationError):
        return _error_json(400, "malformed", str(exc.errors()[:3]))

    @app.get("/map")
    def get_map():
        return Response(content=cache.entry().png, media_type="image/png")

    @app.get("/map/meta")
    def get_map_meta() -> MapMeta:
        return cache.entry().meta

    @app.get("/topology")
    def get_topology():
        return _file_response(cache.entry().loaded, TOPOLOGY_JSON)

    @app.get("/zones")
    def get_zones():
        # answer with the artifact bytes so the body matches zones.json exactly
        return _file_response(cache.entry().loaded, ZONES_JSON)

    @app.get("/zones/overlay")
    def get_zone_overlay():
        loaded = cache.entry().loaded
        if not loaded.bundle.has(OVERLAY_PGM):
            raise BundleUnavailable("bundle lacks a zone overlay")
        meta_name = OVERLAY_PGM.rsplit(".", 1)[0] + ".json"
        return Response(
            content=(loaded.bundle.root / meta_name).read_bytes(),
            media_type="application/json",
        )

    @app.get("/products")
    def get_products():
        return _file_response(cache.entry().loaded, PRODUCTS_JSON)

    @app.post("/search")
    def post_search(body: SearchRequest):
        entry = cache.entry()
        if entry.index is None:
            raise BundleUnavailable("bundle lacks zones; search unavailable")
        plan = decompose(body.query, entry.index, client=lm_client)
        return plan_to_json(plan, entry.loaded.catalog)

    @app.post("/route")
    def post_route(body: RouteRequest):
        entry = cache.entry()
        loaded = entry.loaded
        if loaded.graph is None:
            raise BundleUnavailable("bundle lacks a topology graph")
        start = WorldPoint(body.start.x, body.start.y)
        goal_position = None
        if body.product_id is not None:
            product = loaded.products_by_id.get(body.product_id)
            if product is None:
                return _error_json(404, "unknown_product", f"no product {body.product_id!r}")
            binding = loaded.graph.bindings.get(body.product_id)
            if binding is None:
                return _error_json(404, "unknown_product", f"product {body.product_id!r} is unbound")
            goal = binding
            goal_label = product.label.name
            goal_position = product.position
        else:
            if loaded.catalog is None or loaded.overlay is None:
                raise BundleUnavailable("bundle lacks zones")
            if body.zone not in loaded.catalog.zones:
                return _error_json(404, "unknown_zone", f"no zone {body.zone!r}")
            zi = loaded.catalog.index_of(body.zone)
            anchor = loaded.overlay.anchors.get(zi)
            if anchor is None:
                raise ZoneEmpty(f"zone {body.zone!r} has no anchor")
            goal = anchor
            goal_label = body.zone
            goal_position = anchor
        plan = compute_route(
            loaded.graph,
            loaded.grid,
            loaded.products,
            start,
            goal,
            goal_label,
            goal_position=goal_position,
            turn_threshold_deg=loaded.config.route_turn_threshold_deg,
            landmark_radius=loaded.config.landmark_radius_m,
            templates=loaded.config.templates,
        )
        return route_to_json(plan)

    @app.post("/localize")
    def post_localize(body: LocalizeRequest) -> LocalizeResponse:
        entry = cache.entry()
        if entry.loaded.pose_map is None:
            raise BundleUnavailable("bundle lacks a pose map")
        labels = [
            ProductLabel(name=l.name, brand=l.brand, category=l.category)
            for l in body.labels
        ]
        hypotheses = localize(labels, entry.loaded.pose_map, k=body.k)
        return LocalizeResponse(
            k=body.k,
            hypotheses=[
                PoseOut(
                    rank=h.rank,
                    score=h.score,
                    x=h.pose.position.x,
                    y=h.pose.position.y,
                    heading=h.pose.heading,
                )
                for h in hypotheses
            ],
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
