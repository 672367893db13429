"""Command-line entry point.

Build subcommands wrap the pipeline stages; query subcommands are thin
clients over a bundle directory. Exit codes: 0 success, 1 domain error,
2 usage error. With --json, domain errors print as one JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import BundleError, MapError, ZoneEmpty
from .geometry import WorldPoint
from .ingest import ProductLabel
from .localization import localize
from .pipeline import (
    CONFIG_JSON,
    KEYFRAMES_JSON,
    PipelineConfig,
    _write_json,
    load_config,
    open_bundle,
    stage_keyframes,
    stage_occupancy,
    stage_posemap,
    stage_products,
    stage_topology,
    stage_zones,
    update_bundle_manifest,
)
from .render import render_map
from .routing import compute_route, route_to_json
from .search import SearchIndex, decompose, plan_to_json
from .synthetic import generate_store, write_store

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _parse_point(text: str) -> WorldPoint:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected X,Y")
    try:
        return WorldPoint(float(parts[0]), float(parts[1]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad coordinates {text!r}") from exc


# Per-stage overridable config knobs: (flag, config field, type)
_STAGE_FLAGS = [
    ("--resolution", "resolution", float),
    ("--z-min", "z_min", float),
    ("--z-max", "z_max", float),
    ("--min-hits", "min_hits", int),
    ("--keyframe-threshold", "keyframe_threshold", float),
    ("--max-push-m", "max_push_m", float),
    ("--turn-threshold-deg", "turn_threshold_deg", float),
    ("--merge-radius-m", "merge_radius_m", float),
    ("--spur-length-m", "spur_length_m", float),
    ("--zone-k", "zone_k", int),
    ("--pose-cell-m", "pose_cell_m", float),
    ("--orientation-bins", "orientation_bins", int),
    ("--fov-deg", "fov_deg", float),
    ("--range-m", "range_m", float),
    ("--rays", "rays", int),
    ("--embedding-dim", "embedding_dim", int),
    ("--route-turn-threshold-deg", "route_turn_threshold_deg", float),
    ("--landmark-radius-m", "landmark_radius_m", float),
]


def _add_build_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="JSON pipeline config")
    sub.add_argument("--frames", type=Path, help="frame manifest (JSONL)")
    sub.add_argument("--cloud", type=Path, help="point cloud (xyz text)")
    sub.add_argument("--out", type=Path, help="bundle output directory")
    for flag, _field, typ in _STAGE_FLAGS:
        sub.add_argument(flag, type=typ, default=None)


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides: dict = {}
    if args.frames is not None:
        overrides["frames"] = str(args.frames)
    if args.cloud is not None:
        overrides["cloud"] = str(args.cloud)
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    for _flag, field, _typ in _STAGE_FLAGS:
        value = getattr(args, field)
        if value is not None:
            overrides[field] = value
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _persist_config(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / CONFIG_JSON, cfg.to_json())
    update_bundle_manifest(out_dir, [CONFIG_JSON])


# ---------------------------------------------------------------------------
# Subcommand bodies


def cmd_gen_synthetic(args) -> int:
    store = generate_store(
        aisles=args.aisles,
        products=args.products,
        seed=args.seed,
        unique_labels=args.unique_labels,
    )
    write_store(store, args.out)
    print(f"wrote frames.jsonl, cloud.xyz, truth.json to {args.out}")
    return EXIT_OK


def cmd_build_occupancy(args) -> int:
    cfg = _config_from_args(args)
    _persist_config(cfg)
    out_dir = Path(cfg.out_dir)
    grid = stage_occupancy(cfg, out_dir)
    products = stage_products(cfg, out_dir, grid)
    print(f"occupancy {grid.width}x{grid.height} @ {grid.resolution} m, "
          f"{len(products)} products -> {out_dir}")
    return EXIT_OK


def cmd_keyframes(args) -> int:
    cfg = _config_from_args(args)
    _persist_config(cfg)
    kept = stage_keyframes(cfg, Path(cfg.out_dir))
    print(f"kept {len(kept)} keyframes -> {Path(cfg.out_dir) / KEYFRAMES_JSON}")
    return EXIT_OK


def cmd_build_topology(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(cfg.out_dir)
    loaded = open_bundle(out_dir, verify=False)
    graph = stage_topology(cfg, out_dir, loaded.grid, loaded.products)
    print(f"graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges, "
          f"{len(graph.bindings)} bindings")
    return EXIT_OK


def cmd_classify_zones(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(cfg.out_dir)
    loaded = open_bundle(out_dir, verify=False)
    catalog, overlay = stage_zones(cfg, out_dir, loaded.grid, loaded.products)
    used = sorted({catalog.zones[z] for z in catalog.product_zone.values()})
    print(f"zones in use: {', '.join(used)}")
    return EXIT_OK


def cmd_build_posemap(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(cfg.out_dir)
    loaded = open_bundle(out_dir, verify=False)
    pose_map = stage_posemap(cfg, out_dir, loaded.grid, loaded.products)
    print(f"pose map: {len(pose_map.poses)} poses, dim {pose_map.dimension}")
    return EXIT_OK


def _load_labels(args) -> list[ProductLabel]:
    if args.labels_json:
        raw = json.loads(args.labels_json)
    else:
        raw = json.loads(Path(args.labels_file).read_text())
    if not isinstance(raw, list):
        raise BundleError("labels must be a JSON array")
    return [
        ProductLabel(
            name=entry.get("name", ""),
            brand=entry.get("brand", ""),
            category=entry.get("category", ""),
        )
        for entry in raw
    ]


def cmd_localize(args) -> int:
    loaded = open_bundle(args.bundle)
    if loaded.pose_map is None:
        raise BundleError("bundle lacks a pose map; run build-posemap")
    labels = _load_labels(args)
    hypotheses = localize(labels, loaded.pose_map, k=args.k)
    payload = {
        "k": args.k,
        "hypotheses": [
            {
                "rank": h.rank,
                "score": h.score,
                "x": h.pose.position.x,
                "y": h.pose.position.y,
                "heading": h.pose.heading,
            }
            for h in hypotheses
        ],
    }
    print(json.dumps(payload, indent=None if args.json else 2, sort_keys=True))
    return EXIT_OK


def cmd_route(args) -> int:
    loaded = open_bundle(args.bundle)
    if loaded.graph is None:
        raise BundleError("bundle lacks a topology graph; run build-topology")
    goal_position = None
    if args.product:
        product = loaded.products_by_id.get(args.product)
        if product is None:
            raise BundleError(f"no product {args.product!r} in bundle")
        binding = loaded.graph.bindings.get(args.product)
        if binding is None:
            raise BundleError(f"product {args.product!r} has no graph binding")
        goal, goal_label, goal_position = binding, product.label.name, product.position
    else:
        if loaded.catalog is None or loaded.overlay is None:
            raise BundleError("bundle lacks zones; run classify-zones")
        if args.zone not in loaded.catalog.zones:
            raise BundleError(f"no zone {args.zone!r} in bundle")
        anchor = loaded.overlay.anchors.get(loaded.catalog.index_of(args.zone))
        if anchor is None:
            raise ZoneEmpty(f"zone {args.zone!r} has no anchor")
        goal, goal_label, goal_position = anchor, args.zone, anchor
    plan = compute_route(
        loaded.graph,
        loaded.grid,
        loaded.products,
        args.start,
        goal,
        goal_label,
        goal_position=goal_position,
        turn_threshold_deg=loaded.config.route_turn_threshold_deg,
        landmark_radius=loaded.config.landmark_radius_m,
        templates=loaded.config.templates,
    )
    data = route_to_json(plan)
    if args.out:
        Path(args.out).write_text(json.dumps(data, indent=2) + "\n")
    if args.json:
        print(json.dumps(data, sort_keys=True))
    else:
        for i, line in enumerate(data["instructions"], start=1):
            print(f"{i}. {line}")
        print(f"total: {data['total_length']:.1f} m")
    return EXIT_OK


def cmd_search(args) -> int:
    loaded = open_bundle(args.bundle)
    if loaded.catalog is None:
        raise BundleError("bundle lacks zones; run classify-zones")
    anchors = loaded.overlay.anchors if loaded.overlay else {}
    index = SearchIndex(loaded.products, loaded.catalog, anchors, loaded.config.rules)
    plan = decompose(args.query, index)
    data = plan_to_json(plan, loaded.catalog, limit=args.limit)
    if args.json:
        print(json.dumps(data, sort_keys=True))
    else:
        for goal in data["sub_goals"]:
            print(f"[{goal['query']}]")
            if not goal["resolved"]:
                print("  no match")
            for m in goal["matches"]:
                who = m["product_id"] or m["zone"]
                print(f"  {m['tier']:13s} {who}  ({m['reason']})")
    return EXIT_OK


def cmd_render_map(args) -> int:
    loaded = open_bundle(args.bundle)
    render_map(
        loaded.grid,
        args.out,
        overlay=loaded.overlay,
        catalog=loaded.catalog,
        graph=loaded.graph,
        products=loaded.products,
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.bundle, ui_dir=args.ui_dir, lm_url=args.lm_url)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aislemap",
        description="Build store maps from shelf-scan captures and query "
                    "them: search, localization, zones, routes.",
    )
    parser.add_argument("--json", action="store_true",
                        help="machine-readable output and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic store scan")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--aisles", type=int, default=4)
    p.add_argument("--products", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--unique-labels", action="store_true")
    p.set_defaults(func=cmd_gen_synthetic)

    for name, func, desc in [
        ("build-occupancy", cmd_build_occupancy, "rasterize the cloud and extract products"),
        ("keyframes", cmd_keyframes, "select keyframes by embedding novelty"),
        ("build-topology", cmd_build_topology, "skeletonize and extract the walkable graph"),
        ("classify-zones", cmd_classify_zones, "zone products and paint the floor overlay"),
        ("build-posemap", cmd_build_posemap, "raycast signatures for every free pose"),
    ]:
        p = sub.add_parser(name, help=desc)
        _add_build_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("localize", help="top-k poses for a set of visible labels")
    p.add_argument("--bundle", type=Path, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--labels-file", type=Path)
    group.add_argument("--labels-json", type=str)
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("route", help="route from a point to a product or zone")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--from", dest="start", type=_parse_point, required=True,
                   metavar="X,Y")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--product", type=str)
    group.add_argument("--zone", type=str)
    p.add_argument("--out", type=Path, help="also write route.json here")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("search", help="resolve a shopping query against the catalog")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--query", type=str, required=True)
    p.add_argument("--limit", type=int, default=5)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("render-map", help="render the bundle to a PNG")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_render_map)

    p = sub.add_parser("serve", help="serve the bundle over HTTP")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--host", type=str, default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", type=Path, default=None,
                   help="static frontend build to mount at /")
    p.add_argument("--lm-url", type=str, default=None,
                   help="external decomposition service base URL")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MapError as exc:
        if args.json:
            body = {"error": {"code": exc.code, "message": str(exc)}}
            print(json.dumps(body, sort_keys=True), file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        if args.json:
            body = {"error": {"code": "error", "message": str(exc)}}
            print(json.dumps(body, sort_keys=True), file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
