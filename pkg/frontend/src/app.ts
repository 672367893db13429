import { ApiClient, ApiError, LatestWins } from "./api.js";
import { Viewport } from "./viewport.js";
import {
  drawArrows,
  drawMapImage,
  drawProducts,
  drawRoute,
  drawTopology,
  hypothesisArrows,
  zoneColor,
  type Arrow,
} from "./render.js";
import { renderInstructions, routeSummary } from "./instructions.js";
import type {
  LabelIn,
  MapMeta,
  PoseOut,
  ProductEntry,
  RouteDoc,
  SearchPlan,
  TopologyDoc,
  ZonesDoc,
} from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

interface AppState {
  meta: MapMeta | null;
  topo: TopologyDoc | null;
  zones: ZonesDoc | null;
  products: ProductEntry[];
  mapImage: HTMLImageElement | null;
  route: RouteDoc | null;
  hypotheses: PoseOut[];
  start: { x: number; y: number };
}

export function parseLabelLines(text: string): LabelIn[] {
  // one observation per line: "name | brand | category",
  // trailing fields optional
  const labels: LabelIn[] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line) continue;
    const parts = line.split("|").map((p) => p.trim());
    const name = parts[0] ?? "";
    if (!name) continue;
    const label: LabelIn = { name };
    if (parts[1]) label.brand = parts[1];
    if (parts[2]) label.category = parts[2];
    labels.push(label);
  }
  return labels;
}

export function startApp(): void {
  const api = new ApiClient("");
  const canvas = el<HTMLCanvasElement>("canvas");
  const maybeCtx = canvas.getContext("2d");
  if (!maybeCtx) throw new Error("canvas 2d context unavailable");
  const ctx = maybeCtx;

  const status = el<HTMLElement>("status");
  const searchForm = el<HTMLFormElement>("search-form");
  const searchInput = el<HTMLInputElement>("search-input");
  const searchResults = el<HTMLElement>("search-results");
  const instructionsEl = el<HTMLElement>("route-instructions");
  const summaryEl = el<HTMLElement>("route-summary");
  const localizeForm = el<HTMLFormElement>("localize-form");
  const labelsInput = el<HTMLTextAreaElement>("labels-input");
  const kInput = el<HTMLInputElement>("k-input");
  const kValue = el<HTMLElement>("k-value");
  const localizeInfo = el<HTMLElement>("localize-info");
  const startLabel = el<HTMLElement>("start-label");
  const legendEl = el<HTMLElement>("zone-legend");

  const vp = new Viewport();
  const localizeGate = new LatestWins();
  const state: AppState = {
    meta: null,
    topo: null,
    zones: null,
    products: [],
    mapImage: null,
    route: null,
    hypotheses: [],
    start: { x: 1, y: 1 },
  };

  function setStatus(text: string, isError: boolean): void {
    status.textContent = text;
    status.className = isError ? "status error" : "status ok";
  }

  function reportError(err: unknown): void {
    if (err instanceof ApiError) setStatus(`${err.code}: ${err.message}`, true);
    else setStatus(String(err), true);
  }

  function resizeCanvas(): void {
    const rect = canvas.parentElement?.getBoundingClientRect();
    canvas.width = Math.max(300, Math.floor(rect?.width ?? 800));
    canvas.height = Math.max(300, Math.floor(rect?.height ?? 600));
  }

  function draw(): void {
    ctx.fillStyle = "#f5f3ef";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    if (state.mapImage && state.meta) {
      drawMapImage(ctx, state.mapImage, state.meta, vp);
    }
    if (state.topo) drawTopology(ctx, state.topo, vp);
    drawProducts(ctx, state.products, state.zones, vp);
    if (state.route) drawRoute(ctx, state.route, vp);
    const arrows: Arrow[] = hypothesisArrows(state.hypotheses, vp);
    drawArrows(ctx, arrows);
    const s = vp.worldToScreen(state.start);
    ctx.strokeStyle = "#2c7a2c";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(s.x, s.y, 6, 0, Math.PI * 2);
    ctx.stroke();
  }

  function renderLegend(zones: ZonesDoc): void {
    const rows = zones.zones.map((name, i) => {
      const row = document.createElement("div");
      row.className = "legend-row";
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = zoneColor(i);
      const label = document.createElement("span");
      label.textContent = name;
      row.append(swatch, label);
      return row;
    });
    legendEl.replaceChildren(...rows);
  }

  function renderSearchPlan(plan: SearchPlan): void {
    const blocks: HTMLElement[] = [];
    for (const goal of plan.sub_goals) {
      const head = document.createElement("div");
      head.className = "result-head";
      head.textContent = goal.resolved ? goal.query : `${goal.query} (no match)`;
      blocks.push(head);
      for (const m of goal.matches) {
        const btn = document.createElement("button");
        btn.type = "button";
        btn.className = "result";
        const what = m.label ? `${m.label.brand} ${m.label.name}` : (m.zone ?? "?");
        btn.textContent = `[${m.tier}] ${what}`;
        btn.title = m.reason;
        btn.addEventListener("click", () => {
          void requestRoute(m.product_id ? { product_id: m.product_id } : { zone: m.zone ?? "" });
        });
        blocks.push(btn);
      }
    }
    if (plan.degraded) {
      const note = document.createElement("div");
      note.className = "result-head";
      note.textContent = "degraded plan: language model helper unavailable";
      blocks.push(note);
    }
    searchResults.replaceChildren(...blocks);
  }

  async function requestRoute(goal: { product_id: string } | { zone: string }): Promise<void> {
    try {
      const route = await api.route(state.start, goal);
      state.route = route;
      renderInstructions(instructionsEl, route);
      summaryEl.textContent = routeSummary(route);
      setStatus("route ready", false);
      draw();
    } catch (err) {
      reportError(err);
    }
  }

  async function runLocalize(): Promise<void> {
    const labels = parseLabelLines(labelsInput.value);
    const k = Number(kInput.value);
    kValue.textContent = String(k);
    if (labels.length === 0) {
      state.hypotheses = [];
      localizeInfo.textContent = "";
      draw();
      return;
    }
    try {
      const resp = await localizeGate.run(() => api.localize(labels, k));
      if (resp === null) return; // a newer request took over
      state.hypotheses = resp.hypotheses;
      const top = resp.hypotheses[0];
      localizeInfo.textContent = top
        ? `${resp.hypotheses.length} of k=${resp.k} poses, best score ${top.score.toFixed(4)}`
        : "no poses";
      setStatus("localized", false);
      draw();
    } catch (err) {
      reportError(err);
    }
  }

  searchForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const query = searchInput.value.trim();
    if (!query) return;
    api
      .search(query)
      .then((plan) => {
        renderSearchPlan(plan);
        setStatus("search ok", false);
      })
      .catch(reportError);
  });

  localizeForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void runLocalize();
  });
  kInput.addEventListener("input", () => {
    void runLocalize();
  });

  // wheel zoom around the cursor, drag to pan, plain click to move
  // the route start point
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const rect = canvas.getBoundingClientRect();
    const factor = ev.deltaY < 0 ? 1.15 : 1 / 1.15;
    vp.zoomAt(ev.clientX - rect.left, ev.clientY - rect.top, factor);
    draw();
  });

  let dragging = false;
  let moved = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    moved = false;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    if (Math.abs(dx) + Math.abs(dy) > 2) moved = true;
    vp.panBy(dx, dy);
    lastX = ev.clientX;
    lastY = ev.clientY;
    draw();
  });
  canvas.addEventListener("pointerup", (ev) => {
    dragging = false;
    if (moved) return;
    const rect = canvas.getBoundingClientRect();
    const w = vp.screenToWorld({ x: ev.clientX - rect.left, y: ev.clientY - rect.top });
    state.start = { x: Math.round(w.x * 100) / 100, y: Math.round(w.y * 100) / 100 };
    startLabel.textContent = `start: (${state.start.x.toFixed(2)}, ${state.start.y.toFixed(2)})`;
    draw();
  });

  window.addEventListener("resize", () => {
    resizeCanvas();
    draw();
  });

  async function boot(): Promise<void> {
    resizeCanvas();
    try {
      const [meta, topo, zones, products] = await Promise.all([
        api.mapMeta(),
        api.topology(),
        api.zones(),
        api.products(),
      ]);
      state.meta = meta;
      state.topo = topo;
      state.zones = zones;
      state.products = products;
      renderLegend(zones);
      vp.fit(
        {
          minX: meta.origin_x,
          minY: meta.origin_y,
          maxX: meta.origin_x + meta.width * meta.resolution,
          maxY: meta.origin_y + meta.height * meta.resolution,
        },
        canvas.width,
        canvas.height,
      );
      const img = new Image();
      img.onload = () => {
        state.mapImage = img;
        draw();
      };
      img.src = api.mapImageUrl();
      setStatus("connected", false);
      startLabel.textContent = `start: (${state.start.x.toFixed(2)}, ${state.start.y.toFixed(2)})`;
      draw();
    } catch (err) {
      reportError(err);
    }
  }

  void boot();
}
