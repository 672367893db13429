import { describe, expect, it } from "vitest";
import { Viewport } from "../src/viewport.js";

// deterministic LCG so failures reproduce
function makeRng(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s * 1664525 + 1013904223) >>> 0;
    return s / 2 ** 32;
  };
}

const PIXEL_TOL = 0.5;

describe("viewport transform", () => {
  it("round-trips world -> screen -> world after arbitrary pan/zoom", () => {
    const rng = makeRng(12345);
    const vp = new Viewport();
    for (let step = 0; step < 400; step++) {
      // random walk through the interaction space
      const r = rng();
      if (r < 0.4) {
        vp.panBy((rng() - 0.5) * 600, (rng() - 0.5) * 600);
      } else {
        vp.zoomAt(rng() * 1200, rng() * 800, 0.5 + rng() * 2.0);
      }
      const world = { x: (rng() - 0.5) * 40, y: (rng() - 0.5) * 40 };
      const screen = vp.worldToScreen(world);
      const back = vp.screenToWorld(screen);
      // compare in pixel units, the tolerance the screen cares about
      expect(Math.abs(back.x - world.x) * vp.scale).toBeLessThan(PIXEL_TOL);
      expect(Math.abs(back.y - world.y) * vp.scale).toBeLessThan(PIXEL_TOL);

      const px = { x: rng() * 1200, y: rng() * 800 };
      const w = vp.screenToWorld(px);
      const again = vp.worldToScreen(w);
      expect(Math.abs(again.x - px.x)).toBeLessThan(PIXEL_TOL);
      expect(Math.abs(again.y - px.y)).toBeLessThan(PIXEL_TOL);
    }
  });

  it("keeps the point under the cursor fixed while zooming", () => {
    const rng = makeRng(777);
    const vp = new Viewport();
    vp.panBy(120, 340);
    for (let i = 0; i < 100; i++) {
      const sx = rng() * 1000;
      const sy = rng() * 700;
      const before = vp.screenToWorld({ x: sx, y: sy });
      vp.zoomAt(sx, sy, 0.3 + rng() * 3.0);
      const after = vp.worldToScreen(before);
      expect(Math.abs(after.x - sx)).toBeLessThan(PIXEL_TOL);
      expect(Math.abs(after.y - sy)).toBeLessThan(PIXEL_TOL);
    }
  });

  it("flips y so larger world y is higher on screen", () => {
    const vp = new Viewport();
    const low = vp.worldToScreen({ x: 0, y: 0 });
    const high = vp.worldToScreen({ x: 0, y: 5 });
    expect(high.y).toBeLessThan(low.y);
  });

  it("fits a bounding box inside the canvas with padding", () => {
    const vp = new Viewport();
    const bounds = { minX: -0.25, minY: -0.25, maxX: 20.3, maxY: 11.8 };
    vp.fit(bounds, 900, 600, 20);
    for (const p of [
      { x: bounds.minX, y: bounds.minY },
      { x: bounds.maxX, y: bounds.maxY },
      { x: bounds.minX, y: bounds.maxY },
      { x: bounds.maxX, y: bounds.minY },
    ]) {
      const s = vp.worldToScreen(p);
      expect(s.x).toBeGreaterThanOrEqual(19.5);
      expect(s.x).toBeLessThanOrEqual(900.5 - 19.5);
      expect(s.y).toBeGreaterThanOrEqual(19.5);
      expect(s.y).toBeLessThanOrEqual(600.5 - 19.5);
    }
  });
});
