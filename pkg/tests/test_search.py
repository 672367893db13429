"""Tiered matching, query decomposition, and the external-client path."""

from __future__ import annotations

import io
import json

import pytest

from aislemap.errors import ClientFailure, EmptyQuery
from aislemap.geometry import WorldPoint
from aislemap.ingest import ProductLabel, ProductRecord
from aislemap.search import (
    ALTERNATIVE,
    EXACT,
    RELATED,
    ZONE_FALLBACK,
    ExternalLMClient,
    SearchIndex,
    SearchResult,
    decompose,
    load_recipes,
    match,
    plan_to_json,
    result_to_json,
)
from aislemap.zones import assign_zones


def product(pid, name, brand, category, x, y):
    return ProductRecord(
        product_id=pid,
        label=ProductLabel(name=name, brand=brand, category=category),
        world_x=x, world_y=y, refined=True, frame_id="f0",
    )


PRODUCTS = [
    product("p-flakes", "Rice Flakes", "Fortune", "poha", 1.0, 1.0),
    product("p-sona", "Sona Masoori", "", "rice", 2.0, 1.0),
    product("p-milk", "Full Cream Milk", "Amul", "milk", 3.0, 1.0),
    product("p-soda", "Club Soda", "Bisleri", "soda", 4.0, 1.0),
]

CATALOG = assign_zones(PRODUCTS)
TEA_ANCHOR = WorldPoint(9.0, 9.0)
ANCHORS = {CATALOG.index_of("Tea and coffee"): TEA_ANCHOR}
INDEX = SearchIndex(PRODUCTS, CATALOG, ANCHORS)


class TestMatchTiers:
    def test_exact_when_all_tokens_in_name(self):
        results = match("rice flakes", INDEX)
        assert results[0].tier == EXACT
        assert results[0].product.product_id == "p-flakes"

    def test_exact_outranks_category_overlap(self):
        # p-flakes has "rice" in its name, p-sona only in its category
        results = match("rice", INDEX)
        assert [r.tier for r in results[:2]] == [EXACT, ALTERNATIVE]
        assert results[0].product.product_id == "p-flakes"
        assert results[1].product.product_id == "p-sona"

    def test_alternative_outranks_related(self):
        # all three tokens overlap p-sona via its category; p-flakes only
        # shares the query's inferred zone
        results = match("sona masoori rice", INDEX)
        tiers = {r.product.product_id: r.tier for r in results}
        assert tiers["p-sona"] == ALTERNATIVE
        assert tiers["p-flakes"] == RELATED
        assert results[0].product.product_id == "p-sona"

    def test_related_via_zone_keyword(self):
        # "grain" hits no product text but classifies to the grains zone
        results = match("grain", INDEX)
        assert results
        assert all(r.tier == RELATED for r in results)
        assert [r.product.product_id for r in results] == ["p-flakes", "p-sona"]

    def test_zone_fallback_targets_anchor(self):
        results = match("green tea", INDEX)
        assert len(results) == 1
        r = results[0]
        assert r.tier == ZONE_FALLBACK
        assert r.product is None
        assert r.zone == CATALOG.index_of("Tea and coffee")
        assert (r.target.x, r.target.y) == (TEA_ANCHOR.x, TEA_ANCHOR.y)

    def test_no_match_without_anchor_is_empty(self):
        # classifies to a zone that has no products and no anchor
        assert match("detergent", INDEX) == []

    def test_gibberish_is_empty(self):
        assert match("zzqx flurble", INDEX) == []

    def test_empty_query_raises(self):
        with pytest.raises(EmptyQuery):
            match("  !! ??", INDEX)

    def test_reason_strings_populated(self):
        for r in match("rice", INDEX):
            assert r.reason

    def test_result_product_invariants(self):
        with pytest.raises(ValueError):
            SearchResult(tier=EXACT, zone=0, target=WorldPoint(0, 0), product=None)
        with pytest.raises(ValueError):
            SearchResult(
                tier=ZONE_FALLBACK, zone=0, target=WorldPoint(0, 0),
                product=PRODUCTS[0],
            )

    def test_deterministic_across_product_order(self):
        shuffled = list(reversed(PRODUCTS))
        other = SearchIndex(shuffled, CATALOG, ANCHORS)
        for q in ("rice", "grain", "milk", "green tea"):
            a = [(r.tier, r.product.product_id if r.product else None) for r in match(q, INDEX)]
            b = [(r.tier, r.product.product_id if r.product else None) for r in match(q, other)]
            assert a == b


class TestDecompose:
    def test_recipe_expansion(self):
        plan = decompose("Chai  Ingredients!", INDEX)
        assert plan.sub_goals == ["tea", "milk", "ginger", "cardamom"]
        assert plan.degraded is False
        # tea resolves through the anchored zone, milk through a product
        assert plan.results[0][0].tier == ZONE_FALLBACK
        assert plan.results[1][0].tier == EXACT
        assert plan.unresolved() == ["ginger", "cardamom"]

    def test_identity_when_no_recipe(self):
        plan = decompose("rice", INDEX)
        assert plan.sub_goals == ["rice"]
        assert plan.results[0][0].tier == EXACT

    def test_custom_recipe_table(self):
        recipes = {"weekly staples": ["rice", "milk"]}
        plan = decompose("Weekly   STAPLES", INDEX, recipes=recipes)
        assert plan.sub_goals == ["rice", "milk"]

    def test_client_preferred_when_configured(self):
        class StubClient:
            def decompose(self, query, catalog_digest=""):
                return ["milk"]

        plan = decompose("anything", INDEX, client=StubClient())
        assert plan.sub_goals == ["milk"]
        assert plan.degraded is False

    def test_client_failure_degrades_to_offline(self):
        class FailingClient:
            def decompose(self, query, catalog_digest=""):
                raise ClientFailure("boom")

        plan = decompose("chai ingredients", INDEX, client=FailingClient())
        assert plan.degraded is True
        assert plan.sub_goals == ["tea", "milk", "ginger", "cardamom"]

    def test_empty_query_raises(self):
        with pytest.raises(EmptyQuery):
            decompose("***", INDEX)

    def test_load_recipes_normalizes_keys(self, tmp_path):
        path = tmp_path / "recipes.json"
        path.write_text(json.dumps({"Chai  Kit!": ["tea", "milk"]}))
        table = load_recipes(path)
        assert table == {"chai kit": ["tea", "milk"]}


class _FakeResponse(io.BytesIO):
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class TestExternalClient:
    def test_connection_failure_raises_clientfailure(self):
        client = ExternalLMClient("http://127.0.0.1:9", timeout_s=0.2)
        with pytest.raises(ClientFailure):
            client.decompose("chai")

    def test_request_shape_and_auth_header(self, monkeypatch):
        seen = {}

        def fake_urlopen(req, timeout=None):
            seen["url"] = req.full_url
            seen["auth"] = req.get_header("Authorization")
            seen["payload"] = json.loads(req.data.decode("utf-8"))
            return _FakeResponse(b'{"sub_goals": ["tea"]}')

        monkeypatch.setattr("urllib.request.urlopen", fake_urlopen)
        client = ExternalLMClient("http://lm.example/", api_key="sekrit")
        goals = client.decompose("chai ingredients", catalog_digest="abc123")
        assert goals == ["tea"]
        assert seen["url"] == "http://lm.example/v1/query"
        assert seen["auth"] == "Bearer sekrit"
        assert seen["payload"] == {
            "task": "decompose",
            "query": "chai ingredients",
            "catalog_digest": "abc123",
        }

    def test_no_auth_header_without_key(self, monkeypatch):
        seen = {}

        def fake_urlopen(req, timeout=None):
            seen["auth"] = req.get_header("Authorization")
            return _FakeResponse(b'{"sub_goals": ["tea"]}')

        monkeypatch.setattr("urllib.request.urlopen", fake_urlopen)
        ExternalLMClient("http://lm.example").decompose("chai")
        assert seen["auth"] is None

    @pytest.mark.parametrize("body", [
        b"not json",
        b'{"wrong_key": []}',
        b'{"sub_goals": []}',
    ])
    def test_bad_responses_raise_clientfailure(self, monkeypatch, body):
        monkeypatch.setattr(
            "urllib.request.urlopen", lambda req, timeout=None: _FakeResponse(body)
        )
        with pytest.raises(ClientFailure):
            ExternalLMClient("http://lm.example").decompose("chai")


class TestSerialization:
    def test_plan_to_json_shape(self):
        plan = decompose("rice", INDEX)
        doc = plan_to_json(plan, CATALOG)
        assert doc["schema_version"] == 1
        assert doc["query"] == "rice"
        assert doc["degraded"] is False
        sub = doc["sub_goals"][0]
        assert sub["query"] == "rice"
        assert sub["resolved"] is True
        top = sub["matches"][0]
        assert top["tier"] == EXACT
        assert top["product_id"] == "p-flakes"
        assert top["zone"] == "Rice and grains"
        assert top["label"]["name"] == "Rice Flakes"
        assert top["target"] == {"x": 1.0, "y": 1.0}

    def test_fallback_serializes_without_product(self):
        r = match("green tea", INDEX)[0]
        doc = result_to_json(r, CATALOG)
        assert doc["product_id"] is None
        assert doc["label"] is None
        assert doc["zone"] == "Tea and coffee"

    def test_match_limit_applies(self):
        plan = decompose("grain", INDEX)
        doc = plan_to_json(plan, CATALOG, limit=1)
        assert len(doc["sub_goals"][0]["matches"]) == 1

    def test_unresolved_sub_goal_marked(self):
        plan = decompose("chai ingredients", INDEX)
        doc = plan_to_json(plan, CATALOG)
        by_query = {s["query"]: s for s in doc["sub_goals"]}
        assert by_query["ginger"]["resolved"] is False
        assert by_query["ginger"]["matches"] == []
