"""Tiered product search and multi-goal query decomposition.

Matching is token-based and fully deterministic: exact name/brand hits
outrank category overlaps, which outrank zone-keyword associations; when
nothing matches at all, the query's inferred zone still yields an
aisle-level fallback target. Composite queries (a dish, a meal) break
into components through a recipe table, or through an external language
model reached over JSON/HTTP when one is configured; the offline path
always remains the safety net.
"""

from __future__ import annotations

import json
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .errors import ClientFailure, EmptyQuery
from .geometry import WorldPoint
from .ingest import ProductRecord
from .zones import DEFAULT_RULES, OTHER_ZONE, ZoneCatalog, ZoneRule, classify_label

EXACT = "exact"
ALTERNATIVE = "alternative"
RELATED = "related"
ZONE_FALLBACK = "zone_fallback"

_TIER_RANK = {EXACT: 0, ALTERNATIVE: 1, RELATED: 2, ZONE_FALLBACK: 3}

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def _tokens(text: str) -> set[str]:
    return {t for t in _TOKEN_SPLIT.split(text.lower()) if t}


@dataclass(frozen=True)
class SearchResult:
    tier: str
    zone: int
    target: WorldPoint
    product: ProductRecord | None = None
    reason: str = ""

    def __post_init__(self):
        if self.tier in (EXACT, ALTERNATIVE, RELATED) and self.product is None:
            raise ValueError(f"{self.tier} results must carry a product")
        if self.tier == ZONE_FALLBACK and self.product is not None:
            raise ValueError("zone fallback results carry no product")


@dataclass
class QueryPlan:
    query: str
    sub_goals: list[str]
    results: list[list[SearchResult]]  # ranked matches per sub-goal
    degraded: bool = False  # external client failed; offline path used

    def __post_init__(self):
        if not self.sub_goals:
            raise ValueError("a query plan needs at least one sub-goal")

    def unresolved(self) -> list[str]:
        return [g for g, r in zip(self.sub_goals, self.results) if not r]


class SearchIndex:
    """Immutable catalog view the matcher runs against."""

    def __init__(
        self,
        products: list[ProductRecord],
        catalog: ZoneCatalog,
        anchors: dict[int, WorldPoint] | None = None,
        rules: tuple[ZoneRule, ...] | list[ZoneRule] = DEFAULT_RULES,
    ):
        self.products = sorted(products, key=lambda p: p.product_id)
        self.catalog = catalog
        self.anchors = dict(anchors or {})
        self.rules = list(rules)
        self._name_tokens = {
            p.product_id: _tokens(f"{p.label.name} {p.label.brand}") for p in self.products
        }
        self._category_tokens = {
            p.product_id: _tokens(p.label.category) for p in self.products
        }


def match(query: str, index: SearchIndex) -> list[SearchResult]:
    """Ranked tiered matches for one query string.

    Tier precedence is absolute; within a tier, higher token overlap
    wins, then product id. The returned list is empty only when the
    query hits nothing and its inferred zone has no anchor.
    """
    q = _tokens(query)
    if not q:
        raise EmptyQuery("search query is empty after normalization")

    query_zone = classify_label(query, index.rules)
    ranked: list[tuple[int, int, str, SearchResult]] = []
    for p in index.products:
        zone_idx = index.catalog.product_zone[p.product_id]
        zone_name = index.catalog.zones[zone_idx]
        name_tokens = index._name_tokens[p.product_id]
        cat_tokens = index._category_tokens[p.product_id]
        overlap = len(q & (name_tokens | cat_tokens))
        if q <= name_tokens:
            tier = EXACT
            reason = "all query tokens match the product name/brand"
        elif q & cat_tokens:
            tier = ALTERNATIVE
            reason = f"category overlap: {', '.join(sorted(q & cat_tokens))}"
        elif query_zone != OTHER_ZONE and query_zone == zone_name:
            tier = RELATED
            reason = f"zone keyword match: {zone_name}"
        else:
            continue
        result = SearchResult(
            tier=tier,
            zone=zone_idx,
            target=p.position,
            product=p,
            reason=reason,
        )
        ranked.append((_TIER_RANK[tier], -overlap, p.product_id, result))

    ranked.sort(key=lambda t: t[:3])
    out = [r for _, _, _, r in ranked]
    if out:
        return out

    if query_zone in index.catalog.zones:
        zone_idx = index.catalog.zones.index(query_zone)
        anchor = index.anchors.get(zone_idx)
        if anchor is not None:
            return [
                SearchResult(
                    tier=ZONE_FALLBACK,
                    zone=zone_idx,
                    target=anchor,
                    reason=f"no product match; routing to the {query_zone} area",
                )
            ]
    return []


# ---------------------------------------------------------------------------
# Decomposition

DEFAULT_RECIPES: dict[str, list[str]] = {
    "biryani ingredients": ["biryani spices", "basmati rice", "garlic paste", "ghee"],
    "chai ingredients": ["tea", "milk", "ginger", "cardamom"],
    "dal tadka ingredients": ["toor dal", "ghee", "cumin", "turmeric"],
}


def _normalize_query(query: str) -> str:
    return " ".join(_TOKEN_SPLIT.split(query.lower())).strip()


def load_recipes(path: Path) -> dict[str, list[str]]:
    data = json.loads(Path(path).read_text())
    return {_normalize_query(k): [str(s) for s in v] for k, v in data.items()}


class ExternalLMClient:
    """JSON-over-HTTP decomposition/matching client.

    Never required: any failure (network, status, schema) raises
    ClientFailure and the caller degrades to the offline path.
    """

    def __init__(self, base_url: str, api_key: str = "", timeout_s: float = 5.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout_s = timeout_s

    def _post(self, payload: dict) -> dict:
        req = urllib.request.Request(
            self.base_url + "/v1/query",
            data=json.dumps(payload).encode("utf-8"),
            headers={
                "Content-Type": "application/json",
                **({"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}),
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ClientFailure(f"external client failed: {exc}") from exc

    def decompose(self, query: str, catalog_digest: str = "") -> list[str]:
        data = self._post(
            {"task": "decompose", "query": query, "catalog_digest": catalog_digest}
        )
        try:
            goals = [str(g) for g in data["sub_goals"]]
        except (KeyError, TypeError) as exc:
            raise ClientFailure(f"malformed client response: {data!r}") from exc
        if not goals:
            raise ClientFailure("client returned no sub-goals")
        return goals


def decompose(
    query: str,
    index: SearchIndex,
    client: ExternalLMClient | None = None,
    recipes: dict[str, list[str]] | None = None,
    catalog_digest: str = "",
) -> QueryPlan:
    """Split a composite query into resolvable sub-goals.

    Preference order: external client (if any), recipe table, identity.
    A failing client degrades to the offline path and flags the plan.
    """
    normalized = _normalize_query(query)
    if not normalized:
        raise EmptyQuery("query is empty after normalization")
    table = DEFAULT_RECIPES if recipes is None else recipes

    degraded = False
    sub_goals: list[str] | None = None
    if client is not None:
        try:
            sub_goals = client.decompose(query, catalog_digest)
        except ClientFailure:
            degraded = True
    if sub_goals is None:
        sub_goals = table.get(normalized) or [query]

    results = [match(goal, index) for goal in sub_goals]
    return QueryPlan(query=query, sub_goals=list(sub_goals), results=results, degraded=degraded)


# ---------------------------------------------------------------------------
# Serialization


def result_to_json(result: SearchResult, catalog: ZoneCatalog) -> dict:
    return {
        "tier": result.tier,
        "zone": catalog.zones[result.zone],
        "target": {"x": result.target.x, "y": result.target.y},
        "product_id": result.product.product_id if result.product else None,
        "label": (
            {
                "name": result.product.label.name,
                "brand": result.product.label.brand,
                "category": result.product.label.category,
            }
            if result.product
            else None
        ),
        "reason": result.reason,
    }


def plan_to_json(plan: QueryPlan, catalog: ZoneCatalog, limit: int = 5) -> dict:
    return {
        "schema_version": 1,
        "query": plan.query,
        "degraded": plan.degraded,
        "sub_goals": [
            {
                "query": goal,
                "resolved": bool(ranked),
                "matches": [result_to_json(r, catalog) for r in ranked[:limit]],
            }
            for goal, ranked in zip(plan.sub_goals, plan.results)
        ],
    }
