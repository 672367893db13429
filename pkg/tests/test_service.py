"""HTTP facade: endpoint contract, error mapping, cache behavior."""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from aislemap.pipeline import BUNDLE_JSON, OCCUPANCY_PGM, ZONES_JSON, update_bundle_manifest
from aislemap.service import create_app


@pytest.fixture(scope="module")
def client(pinned_store):
    app = create_app(pinned_store["bundle_dir"])
    with TestClient(app) as c:
        yield c


def first_product(pinned_store) -> dict:
    doc = json.loads((Path(pinned_store["bundle_dir"]) / "products.json").read_text())
    return doc["products"][0]


class TestReadEndpoints:
    def test_map_is_png(self, client):
        r = client.get("/map")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_map_meta_describes_raster(self, client):
        r = client.get("/map/meta")
        assert r.status_code == 200
        meta = r.json()
        assert meta["image_width"] == meta["width"] * meta["scale"]
        assert meta["image_height"] == meta["height"] * meta["scale"]
        assert meta["resolution"] == 0.05

    def test_topology_document(self, client):
        doc = client.get("/topology").json()
        assert doc["nodes"] and doc["edges"]

    def test_zones_bytes_match_artifact_exactly(self, client, pinned_store):
        artifact = (Path(pinned_store["bundle_dir"]) / ZONES_JSON).read_bytes()
        assert client.get("/zones").content == artifact

    def test_zone_overlay_meta(self, client):
        doc = client.get("/zones/overlay").json()
        assert "zones" in doc

    def test_products_document(self, client, pinned_store):
        doc = client.get("/products").json()
        assert doc["schema_version"] == 1
        assert len(doc["products"]) == len(pinned_store["truth"]["products"])


class TestSearch:
    def test_search_resolves_known_item(self, client, pinned_store):
        label = first_product(pinned_store)["label"]
        r = client.post("/search", json={"query": label["name"]})
        assert r.status_code == 200
        doc = r.json()
        assert doc["degraded"] is False
        assert doc["sub_goals"][0]["resolved"] is True
        assert doc["sub_goals"][0]["matches"][0]["tier"] == "exact"

    def test_search_identical_requests_identical_bodies(self, client):
        bodies = {client.post("/search", json={"query": "rice"}).content for _ in range(3)}
        assert len(bodies) == 1

    def test_empty_query_is_malformed(self, client):
        r = client.post("/search", json={"query": ""})
        assert r.status_code == 400
        assert r.json()["error"]["code"] == "malformed"

    def test_unknown_body_key_is_malformed(self, client):
        r = client.post("/search", json={"query": "rice", "boost": True})
        assert r.status_code == 400


class TestRoute:
    def test_route_to_product(self, client, pinned_store):
        pid = first_product(pinned_store)["product_id"]
        r = client.post("/route", json={"from": {"x": 10.0, "y": 0.75}, "product_id": pid})
        assert r.status_code == 200
        doc = r.json()
        assert doc["total_length"] > 0
        assert doc["instructions"]
        assert doc["nodes"][0]["id"] != doc["nodes"][-1]["id"]

    def test_route_to_zone(self, client, pinned_store):
        # a zone that actually holds the first product is guaranteed an anchor
        doc = json.loads((Path(pinned_store["bundle_dir"]) / ZONES_JSON).read_text())
        pid = first_product(pinned_store)["product_id"]
        zone = doc["zones"][doc["product_zones"][pid]]
        r = client.post("/route", json={"from": {"x": 10.0, "y": 0.75}, "zone": zone})
        assert r.status_code == 200
        assert r.json()["instructions"]

    def test_route_is_deterministic(self, client, pinned_store):
        pid = first_product(pinned_store)["product_id"]
        body = {"from": {"x": 10.0, "y": 0.75}, "product_id": pid}
        assert client.post("/route", json=body).content == client.post("/route", json=body).content

    def test_unknown_product_404(self, client):
        r = client.post("/route", json={"from": {"x": 10.0, "y": 0.75}, "product_id": "nope"})
        assert r.status_code == 404
        assert r.json()["error"]["code"] == "unknown_product"

    def test_unknown_zone_404(self, client):
        r = client.post("/route", json={"from": {"x": 10.0, "y": 0.75}, "zone": "Atlantis"})
        assert r.status_code == 404
        assert r.json()["error"]["code"] == "unknown_zone"

    def test_start_inside_shelf_is_domain_422(self, client, pinned_store):
        pid = first_product(pinned_store)["product_id"]
        # deep inside the first shelf bank
        r = client.post("/route", json={"from": {"x": 5.0, "y": 2.0}, "product_id": pid})
        assert r.status_code == 422
        assert r.json()["error"]["code"] == "no_visible_edge"

    def test_both_targets_rejected(self, client):
        r = client.post(
            "/route",
            json={"from": {"x": 1, "y": 1}, "product_id": "a", "zone": "b"},
        )
        assert r.status_code == 400

    def test_no_target_rejected(self, client):
        r = client.post("/route", json={"from": {"x": 1, "y": 1}})
        assert r.status_code == 400


class TestLocalize:
    def test_self_query_scores_one(self, client, pinned_store):
        label = first_product(pinned_store)["label"]
        body = {"labels": [{"name": label["name"], "brand": label["brand"],
                            "category": label["category"]}], "k": 3}
        r = client.post("/localize", json=body)
        assert r.status_code == 200
        doc = r.json()
        assert doc["k"] == 3
        assert [h["rank"] for h in doc["hypotheses"]] == [1, 2, 3]
        assert doc["hypotheses"][0]["score"] == pytest.approx(1.0, abs=1e-6)

    def test_empty_labels_malformed(self, client):
        assert client.post("/localize", json={"labels": [], "k": 3}).status_code == 400

    def test_zero_k_malformed(self, client):
        body = {"labels": [{"name": "tea"}], "k": 0}
        assert client.post("/localize", json=body).status_code == 400


class TestAvailabilityAndCache:
    def test_missing_bundle_dir_is_503(self, tmp_path):
        app = create_app(tmp_path / "nowhere")
        with TestClient(app) as c:
            r = c.get("/map")
            assert r.status_code == 503
            assert r.json()["error"]["code"] == "bundle_missing"

    def test_corrupt_artifact_is_503(self, pinned_store, tmp_path):
        broken = tmp_path / "broken"
        shutil.copytree(pinned_store["bundle_dir"], broken)
        pgm = broken / OCCUPANCY_PGM
        pgm.write_bytes(pgm.read_bytes() + b"tampered")
        with TestClient(create_app(broken)) as c:
            assert c.get("/map").status_code == 503

    def test_manifest_change_triggers_reload(self, pinned_store, tmp_path):
        moved = tmp_path / "bundle"
        shutil.copytree(pinned_store["bundle_dir"], moved)
        with TestClient(create_app(moved)) as c:
            before = c.get("/map/meta").json()
            assert c.get("/map").status_code == 200
            # shrink the map on disk and refresh the manifest: the service
            # must serve the new bundle without a restart
            small = tmp_path / "small"
            from aislemap.synthetic import generate_store, write_store
            from aislemap.pipeline import PipelineConfig, run_pipeline
            data = tmp_path / "data"
            write_store(generate_store(aisles=1, products=20, seed=2), data)
            run_pipeline(PipelineConfig(
                frames=data / "frames.jsonl", cloud=data / "cloud.xyz", out_dir=small,
            ))
            for item in small.iterdir():
                shutil.copy2(item, moved / item.name)
            after = c.get("/map/meta").json()
            assert after["height"] != before["height"]

    def test_unknown_route_404(self, client):
        assert client.get("/definitely-not-here").status_code == 404
