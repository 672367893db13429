import type { RouteDoc } from "./types.js";

/**
 * Fill `list` with one <li> per instruction, copied verbatim from the
 * route document. Text goes through textContent so the service string
 * is what the user reads, character for character, with no markup
 * interpretation on the way.
 */
export function renderInstructions(list: HTMLElement, route: RouteDoc): void {
  const items = route.instructions.map((text) => {
    const li = document.createElement("li");
    li.textContent = text;
    return li;
  });
  list.replaceChildren(...items);
}

/** Human line for the route summary bar. Display-only formatting. */
export function routeSummary(route: RouteDoc): string {
  const turns = route.segments.filter((s) => s.kind !== "forward").length;
  const side = route.goal_side ? `, goal on the ${route.goal_side}` : "";
  return `${route.total_length.toFixed(1)} m, ${turns} turn${turns === 1 ? "" : "s"}${side}`;
}
