import type { Viewport } from "./viewport.js";
import type {
  PoseOut,
  ProductEntry,
  RouteDoc,
  TopologyDoc,
  ZonesDoc,
} from "./types.js";

export interface Arrow {
  rank: number;
  score: number;
  /** Arrow base, screen px. Matches worldToScreen of the service pose. */
  baseX: number;
  baseY: number;
  /** Arrow tip, screen px, offset along the pose heading. */
  tipX: number;
  tipY: number;
}

/**
 * One arrow per pose hypothesis, base anchored at the reported (x, y)
 * and pointing along the reported heading. Pure: same poses and same
 * viewport give the same pixels.
 */
export function hypothesisArrows(
  hyps: PoseOut[],
  vp: Viewport,
  lengthPx = 18,
): Arrow[] {
  return hyps.map((h) => {
    const base = vp.worldToScreen({ x: h.x, y: h.y });
    // screen y grows downward, so a positive world heading rotates
    // counter-clockwise on screen only after negating the y component
    const tipX = base.x + lengthPx * Math.cos(h.heading);
    const tipY = base.y - lengthPx * Math.sin(h.heading);
    return { rank: h.rank, score: h.score, baseX: base.x, baseY: base.y, tipX, tipY };
  });
}

const ZONE_COLORS = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
  "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#86bcb6", "#d37295",
  "#fabfd2", "#b6992d", "#499894", "#9d7660", "#79706e", "#d4a6c8",
];

export function zoneColor(index: number): string {
  if (index < 0) return "#d0d0d0";
  return ZONE_COLORS[index % ZONE_COLORS.length] ?? "#d0d0d0";
}

export function drawMapImage(
  ctx: CanvasRenderingContext2D,
  img: CanvasImageSource,
  meta: { origin_x: number; origin_y: number; width: number; height: number; resolution: number },
  vp: Viewport,
): void {
  const worldW = meta.width * meta.resolution;
  const worldH = meta.height * meta.resolution;
  const topLeft = vp.worldToScreen({ x: meta.origin_x, y: meta.origin_y + worldH });
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, topLeft.x, topLeft.y, worldW * vp.scale, worldH * vp.scale);
}

export function drawTopology(
  ctx: CanvasRenderingContext2D,
  topo: TopologyDoc,
  vp: Viewport,
): void {
  const byId = new Map(topo.nodes.map((n) => [n.id, n]));
  ctx.strokeStyle = "rgba(60, 90, 200, 0.55)";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (const e of topo.edges) {
    const a = byId.get(e.a);
    const b = byId.get(e.b);
    if (!a || !b) continue;
    const sa = vp.worldToScreen(a);
    const sb = vp.worldToScreen(b);
    ctx.moveTo(sa.x, sa.y);
    ctx.lineTo(sb.x, sb.y);
  }
  ctx.stroke();
  ctx.fillStyle = "rgba(60, 90, 200, 0.8)";
  for (const n of topo.nodes) {
    const s = vp.worldToScreen(n);
    ctx.beginPath();
    ctx.arc(s.x, s.y, 2, 0, Math.PI * 2);
    ctx.fill();
  }
}

export function drawProducts(
  ctx: CanvasRenderingContext2D,
  products: ProductEntry[],
  zones: ZonesDoc | null,
  vp: Viewport,
): void {
  for (const p of products) {
    const s = vp.worldToScreen({ x: p.world_x, y: p.world_y });
    const zi = zones ? (zones.product_zones[p.product_id] ?? -1) : -1;
    ctx.fillStyle = zoneColor(zi);
    ctx.beginPath();
    ctx.arc(s.x, s.y, 3, 0, Math.PI * 2);
    ctx.fill();
  }
}

export function drawRoute(
  ctx: CanvasRenderingContext2D,
  route: RouteDoc,
  vp: Viewport,
): void {
  if (route.nodes.length === 0) return;
  ctx.strokeStyle = "#d2372c";
  ctx.lineWidth = 3;
  ctx.lineJoin = "round";
  ctx.beginPath();
  route.nodes.forEach((n, i) => {
    const s = vp.worldToScreen(n);
    if (i === 0) ctx.moveTo(s.x, s.y);
    else ctx.lineTo(s.x, s.y);
  });
  ctx.stroke();

  const first = route.nodes[0];
  const last = route.nodes[route.nodes.length - 1];
  if (first) dot(ctx, vp.worldToScreen(first), "#2c7a2c");
  if (last) dot(ctx, vp.worldToScreen(last), "#d2372c");
}

function dot(ctx: CanvasRenderingContext2D, s: { x: number; y: number }, color: string): void {
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(s.x, s.y, 5, 0, Math.PI * 2);
  ctx.fill();
}

export function drawArrows(ctx: CanvasRenderingContext2D, arrows: Arrow[]): void {
  for (const a of arrows) {
    const alpha = a.rank === 1 ? 0.95 : 0.55;
    ctx.strokeStyle = `rgba(160, 32, 192, ${alpha})`;
    ctx.fillStyle = ctx.strokeStyle;
    ctx.lineWidth = a.rank === 1 ? 3 : 2;
    ctx.beginPath();
    ctx.moveTo(a.baseX, a.baseY);
    ctx.lineTo(a.tipX, a.tipY);
    ctx.stroke();
    // small head: two short strokes back from the tip
    const ang = Math.atan2(a.tipY - a.baseY, a.tipX - a.baseX);
    const headLen = 6;
    ctx.beginPath();
    ctx.moveTo(a.tipX, a.tipY);
    ctx.lineTo(a.tipX - headLen * Math.cos(ang - 0.5), a.tipY - headLen * Math.sin(ang - 0.5));
    ctx.moveTo(a.tipX, a.tipY);
    ctx.lineTo(a.tipX - headLen * Math.cos(ang + 0.5), a.tipY - headLen * Math.sin(ang + 0.5));
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(a.baseX, a.baseY, 3, 0, Math.PI * 2);
    ctx.fill();
  }
}
