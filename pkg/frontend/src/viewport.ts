// Pan/zoom camera mapping world meters to canvas pixels.
//
// The transform is a uniform scale plus translation, with the y axis
// flipped so world +y points up on screen. Both directions use the
// same three numbers, so worldToScreen and screenToWorld are exact
// inverses up to float rounding.

export interface Point {
  x: number;
  y: number;
}

export interface Bounds {
  minX: number;
  minY: number;
  maxX: number;
  maxY: number;
}

const MIN_SCALE = 1e-3;
const MAX_SCALE = 1e5;

export class Viewport {
  /** Pixels per world meter. */
  scale = 50;
  /** Screen x of the world origin. */
  offsetX = 0;
  /** Screen y of the world origin. */
  offsetY = 0;

  worldToScreen(p: Point): Point {
    return {
      x: this.offsetX + p.x * this.scale,
      y: this.offsetY - p.y * this.scale,
    };
  }

  screenToWorld(s: Point): Point {
    return {
      x: (s.x - this.offsetX) / this.scale,
      y: (this.offsetY - s.y) / this.scale,
    };
  }

  panBy(dxPx: number, dyPx: number): void {
    this.offsetX += dxPx;
    this.offsetY += dyPx;
  }

  /** Zoom by `factor` keeping the world point under (sx, sy) fixed. */
  zoomAt(sx: number, sy: number, factor: number): void {
    const anchor = this.screenToWorld({ x: sx, y: sy });
    const next = this.scale * factor;
    this.scale = Math.min(MAX_SCALE, Math.max(MIN_SCALE, next));
    this.offsetX = sx - anchor.x * this.scale;
    this.offsetY = sy + anchor.y * this.scale;
  }

  /** Fit a world rectangle into a canvas with some padding. */
  fit(bounds: Bounds, canvasW: number, canvasH: number, paddingPx = 20): void {
    const spanX = Math.max(bounds.maxX - bounds.minX, 1e-9);
    const spanY = Math.max(bounds.maxY - bounds.minY, 1e-9);
    const availW = Math.max(canvasW - 2 * paddingPx, 1);
    const availH = Math.max(canvasH - 2 * paddingPx, 1);
    this.scale = Math.min(availW / spanX, availH / spanY);
    const cx = (bounds.minX + bounds.maxX) / 2;
    const cy = (bounds.minY + bounds.maxY) / 2;
    this.offsetX = canvasW / 2 - cx * this.scale;
    this.offsetY = canvasH / 2 + cy * this.scale;
  }
}
