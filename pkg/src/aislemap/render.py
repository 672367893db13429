"""Raster rendering of a map bundle to PNG.

World y points up, image rows point down, so every world-to-pixel
conversion flips the row axis. A scale parameter upsamples cells to
pixels with nearest-neighbor blocks so the output stays crisp.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import CellState, OccupancyGrid, WorldPoint
from .ingest import ProductRecord
from .topology import TopologyGraph
from .zones import NO_ZONE, ZoneCatalog, ZoneOverlay

FREE_RGB = (252, 252, 252)
OCCUPIED_RGB = (40, 40, 40)
UNKNOWN_RGB = (180, 180, 180)
GRAPH_EDGE_RGB = (70, 130, 220)
GRAPH_NODE_RGB = (20, 60, 160)
PRODUCT_RGB = (200, 60, 40)
ROUTE_RGB = (20, 150, 60)
START_RGB = (10, 90, 200)
GOAL_RGB = (220, 30, 120)
ZONE_ALPHA = 0.45


@dataclass
class RenderOptions:
    scale: int = 4
    draw_graph: bool = True
    draw_products: bool = True
    draw_zones: bool = True

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be >= 1")


def zone_palette(n: int) -> list[tuple[int, int, int]]:
    """n distinct saturated colors, stable for a given n."""
    colors = []
    for i in range(n):
        h = (i * 0.61803398875) % 1.0  # golden-ratio hop keeps neighbors apart
        r, g, b = colorsys.hsv_to_rgb(h, 0.55, 0.95)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return colors


def _base_raster(grid: OccupancyGrid) -> np.ndarray:
    img = np.empty((grid.height, grid.width, 3), dtype=np.uint8)
    img[:] = UNKNOWN_RGB
    img[grid.mask(CellState.FREE)] = FREE_RGB
    img[grid.mask(CellState.OCCUPIED)] = OCCUPIED_RGB
    return img


def _tint_zones(img: np.ndarray, overlay: ZoneOverlay, n_zones: int) -> None:
    palette = zone_palette(n_zones)
    for zi in range(n_zones):
        mask = overlay.zone_of == zi
        if not mask.any():
            continue
        tint = np.array(palette[zi], dtype=np.float64)
        img[mask] = ((1 - ZONE_ALPHA) * img[mask] + ZONE_ALPHA * tint).astype(np.uint8)


class MapRenderer:
    """Converts world coordinates to pixel coordinates and draws layers."""

    def __init__(self, grid: OccupancyGrid, options: RenderOptions | None = None):
        self.grid = grid
        self.options = options or RenderOptions()

    def world_to_px(self, p: WorldPoint) -> tuple[float, float]:
        s = self.options.scale
        px = (p.x - self.grid.origin.x) / self.grid.resolution * s
        py = (self.grid.height - (p.y - self.grid.origin.y) / self.grid.resolution) * s
        return px, py

    def render(
        self,
        overlay: ZoneOverlay | None = None,
        catalog: ZoneCatalog | None = None,
        graph: TopologyGraph | None = None,
        products: list[ProductRecord] | None = None,
        route: list[WorldPoint] | None = None,
        start: WorldPoint | None = None,
        goal: WorldPoint | None = None,
    ) -> Image.Image:
        raster = _base_raster(self.grid)
        if self.options.draw_zones and overlay is not None and catalog is not None:
            _tint_zones(raster, overlay, len(catalog.zones))
        raster = raster[::-1]  # world y up -> image rows down

        s = self.options.scale
        if s > 1:
            raster = np.repeat(np.repeat(raster, s, axis=0), s, axis=1)
        img = Image.fromarray(raster, "RGB")
        draw = ImageDraw.Draw(img)

        if self.options.draw_graph and graph is not None:
            for e in graph.edges:
                a = self.world_to_px(graph.nodes[e.a].position)
                b = self.world_to_px(graph.nodes[e.b].position)
                draw.line([a, b], fill=GRAPH_EDGE_RGB, width=max(1, s // 2))
            r = max(2, s)
            for node in graph.node_list():
                x, y = self.world_to_px(node.position)
                draw.ellipse([x - r, y - r, x + r, y + r], fill=GRAPH_NODE_RGB)

        if self.options.draw_products and products:
            r = max(1, (2 * s) // 3)
            for p in products:
                x, y = self.world_to_px(p.position)
                draw.ellipse([x - r, y - r, x + r, y + r], fill=PRODUCT_RGB)

        if route and len(route) >= 2:
            pts = [self.world_to_px(p) for p in route]
            draw.line(pts, fill=ROUTE_RGB, width=max(2, s))

        for point, color in ((start, START_RGB), (goal, GOAL_RGB)):
            if point is None:
                continue
            x, y = self.world_to_px(point)
            r = max(3, (3 * s) // 2)
            draw.ellipse([x - r, y - r, x + r, y + r], outline=color, width=max(2, s // 2))

        self._scale_bar(draw, img.size)
        return img

    def _scale_bar(self, draw: ImageDraw.ImageDraw, size: tuple[int, int]) -> None:
        # 1 m bar in the lower-left corner
        bar_px = self.options.scale / self.grid.resolution
        w, h = size
        x0, y0 = 10, h - 12
        if x0 + bar_px > w - 10:
            return
        draw.line([(x0, y0), (x0 + bar_px, y0)], fill=(0, 0, 0), width=3)
        draw.text((x0, y0 - 14), "1 m", fill=(0, 0, 0))


def render_map(
    grid: OccupancyGrid,
    out_path: Path,
    overlay: ZoneOverlay | None = None,
    catalog: ZoneCatalog | None = None,
    graph: TopologyGraph | None = None,
    products: list[ProductRecord] | None = None,
    route: list[WorldPoint] | None = None,
    start: WorldPoint | None = None,
    goal: WorldPoint | None = None,
    options: RenderOptions | None = None,
) -> Path:
    renderer = MapRenderer(grid, options)
    img = renderer.render(
        overlay=overlay,
        catalog=catalog,
        graph=graph,
        products=products,
        route=route,
        start=start,
        goal=goal,
    )
    out_path = Path(out_path)
    img.save(out_path, format="PNG")
    return out_path
