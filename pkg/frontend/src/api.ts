import type {
  LabelIn,
  LocalizeResponse,
  MapMeta,
  ProductEntry,
  RouteDoc,
  SearchPlan,
  TopologyDoc,
  ZonesDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function toApiError(resp: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body && typeof body === "object" && body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    } else if (body && body.detail) {
      // validation errors come through FastAPI's default envelope
      message = JSON.stringify(body.detail);
      code = "validation_error";
    }
  } catch {
    // non-JSON body, keep the status line
  }
  return new ApiError(resp.status, code, message);
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) throw await toApiError(resp);
    return (await resp.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await toApiError(resp);
    return (await resp.json()) as T;
  }

  mapMeta(): Promise<MapMeta> {
    return this.getJson("/map/meta");
  }

  mapImageUrl(): string {
    return this.base + "/map";
  }

  topology(): Promise<TopologyDoc> {
    return this.getJson("/topology");
  }

  zones(): Promise<ZonesDoc> {
    return this.getJson("/zones");
  }

  products(): Promise<ProductEntry[]> {
    return this.getJson("/products");
  }

  search(query: string): Promise<SearchPlan> {
    return this.postJson("/search", { query });
  }

  route(
    from: { x: number; y: number },
    goal: { product_id: string } | { zone: string },
  ): Promise<RouteDoc> {
    return this.postJson("/route", { from, ...goal });
  }

  localize(labels: LabelIn[], k: number): Promise<LocalizeResponse> {
    return this.postJson("/localize", { labels, k });
  }
}

/**
 * Serializes overlapping async requests so only the most recent one
 * lands. Each call bumps a sequence number; when a response arrives it
 * is returned only if no newer call started in the meantime, otherwise
 * the caller gets null and should leave the screen untouched.
 */
export class LatestWins {
  private seq = 0;

  async run<T>(task: () => Promise<T>): Promise<T | null> {
    const ticket = ++this.seq;
    const value = await task();
    return ticket === this.seq ? value : null;
  }
}
