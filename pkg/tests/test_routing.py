import heapq
import math
import re

import numpy as np
import pytest

from aislemap.errors import NoVisibleEdge, Unreachable
from aislemap.geometry import CellState, WorldPoint, grid_from_rows, line_of_sight
from aislemap.ingest import ProductLabel, ProductRecord
from aislemap.routing import (
    DEFAULT_TEMPLATES,
    FORWARD,
    TURN,
    RouteSegment,
    LandmarkRef,
    chunk_path,
    collect_landmarks,
    compute_route,
    plan_path,
    render_instructions,
    route_to_json,
)
from aislemap.topology import (
    TopoEdge,
    TopoNode,
    TopologyGraph,
    bind_product,
    extract_graph,
    skeletonize,
)

CARDINALS = re.compile(
    r"\b(north|south|east|west|northeast|northwest|southeast|southwest)\b", re.I
)


def dijkstra_oracle(graph: TopologyGraph, start: int, goal: int) -> float:
    """Plain binary-heap Dijkstra; no heuristic, no early exit tricks."""
    dist = {start: 0.0}
    heap = [(0.0, start)]
    seen = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == goal:
            return d
        for v, w in graph.neighbors(u):
            nd = d + w
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    raise Unreachable(f"oracle: no path {start}->{goal}")


def random_graph(rng: np.random.Generator, n: int) -> TopologyGraph:
    pts = rng.uniform(0, 50, size=(n, 2))
    nodes = [TopoNode(i, WorldPoint(float(x), float(y)), "junction")
             for i, (x, y) in enumerate(pts)]
    edges = {}
    # ring for connectivity, then random chords
    for i in range(n):
        j = (i + 1) % n
        key = (min(i, j), max(i, j))
        d = math.hypot(*(pts[i] - pts[j]))
        edges[key] = TopoEdge(key[0], key[1], d * float(rng.uniform(1.0, 1.6)))
    for _ in range(n):
        i, j = rng.integers(0, n, size=2)
        if i == j:
            continue
        key = (min(int(i), int(j)), max(int(i), int(j)))
        if key in edges:
            continue
        d = math.hypot(*(pts[int(i)] - pts[int(j)]))
        edges[key] = TopoEdge(key[0], key[1], d * float(rng.uniform(1.0, 1.6)))
    return TopologyGraph(nodes, list(edges.values()))


class TestPathSearch:
    def test_astar_equals_dijkstra_on_random_graphs(self):
        rng = np.random.default_rng(2024)
        grid = grid_from_rows(["." * 60] * 60, resolution=1.0)
        for _ in range(25):
            graph = random_graph(rng, int(rng.integers(5, 30)))
            a = graph.nodes[int(rng.integers(0, len(graph.nodes)))].position
            b = graph.nodes[int(rng.integers(0, len(graph.nodes)))].position
            result = plan_path(graph, grid, a, b)
            oracle = dijkstra_oracle(result.graph, result.start_id, result.goal_id)
            assert result.length == oracle

    def test_unreachable_raises(self):
        nodes = [TopoNode(0, WorldPoint(0, 0), "endpoint"),
                 TopoNode(1, WorldPoint(1, 0), "endpoint"),
                 TopoNode(2, WorldPoint(10, 10), "endpoint"),
                 TopoNode(3, WorldPoint(11, 10), "endpoint")]
        edges = [TopoEdge(0, 1, 1.0), TopoEdge(2, 3, 1.0)]
        graph = TopologyGraph(nodes, edges)
        grid = grid_from_rows(["." * 20] * 20, resolution=1.0)
        with pytest.raises(Unreachable):
            plan_path(graph, grid, WorldPoint(0.5, 0.1), WorldPoint(10.5, 10.1))

    def test_start_deep_inside_obstacle_rejected(self):
        # Sight rays exclude their endpoints, so the blocker must be thick
        # enough that every ray to the edge crosses an interior shelf cell.
        rows = ["......", ".####.", ".####.", ".####.", "......"]
        grid = grid_from_rows(rows, resolution=1.0)
        graph = TopologyGraph(
            [TopoNode(0, WorldPoint(0.5, 0.5), "endpoint"),
             TopoNode(1, WorldPoint(5.5, 0.5), "endpoint")],
            [TopoEdge(0, 1, 5.0)],
        )
        with pytest.raises(NoVisibleEdge):
            plan_path(graph, grid, WorldPoint(2.5, 2.5), WorldPoint(0.5, 0.5))

    def test_start_on_shelf_face_still_binds(self):
        # A start whose own cell is occupied but sits right against the
        # walkway still binds: the ray from the adjacent projection has no
        # interior cells to cross.
        rows = ["......", "..##..", "......"]
        grid = grid_from_rows(rows, resolution=1.0)
        graph = TopologyGraph(
            [TopoNode(0, WorldPoint(0.5, 0.5), "endpoint"),
             TopoNode(1, WorldPoint(5.5, 0.5), "endpoint")],
            [TopoEdge(0, 1, 5.0)],
        )
        result = plan_path(graph, grid, WorldPoint(2.5, 1.5), WorldPoint(0.5, 0.5))
        assert result.length > 0.0

    def test_same_point_start_goal(self):
        grid = grid_from_rows(["....", "...."], resolution=1.0)
        graph = TopologyGraph(
            [TopoNode(0, WorldPoint(0.5, 0.5), "endpoint"),
             TopoNode(1, WorldPoint(3.5, 0.5), "endpoint")],
            [TopoEdge(0, 1, 3.0)],
        )
        result = plan_path(graph, grid, WorldPoint(1.5, 0.5), WorldPoint(1.5, 0.5))
        assert result.length == 0.0
        assert len(result.nodes) == 1


class TestChunking:
    def test_straight_line_single_forward(self):
        pts = [WorldPoint(0, 0), WorldPoint(3, 0), WorldPoint(7, 0)]
        segments = chunk_path(pts, 30.0)
        assert [s.kind for s in segments] == [FORWARD]
        assert math.isclose(segments[0].distance, 7.0)

    def test_right_angle_inserts_turn(self):
        pts = [WorldPoint(0, 0), WorldPoint(4, 0), WorldPoint(4, 3)]
        segments = chunk_path(pts, 30.0)
        assert [s.kind for s in segments] == [FORWARD, TURN, FORWARD]
        turn = segments[1]
        assert turn.direction == "left"
        assert math.isclose(turn.angle, 90.0)
        assert math.isclose(segments[0].distance + segments[2].distance, 7.0)

    def test_shallow_bend_stays_forward(self):
        pts = [WorldPoint(0, 0), WorldPoint(4, 0), WorldPoint(8, 1)]
        segments = chunk_path(pts, 30.0)
        assert [s.kind for s in segments] == [FORWARD]
        total = math.hypot(4, 0) + math.hypot(4, 1)
        assert math.isclose(segments[0].distance, total)

    def test_right_turn_direction(self):
        pts = [WorldPoint(0, 0), WorldPoint(4, 0), WorldPoint(4, -3)]
        segments = chunk_path(pts, 30.0)
        assert segments[1].direction == "right"

    def test_distances_sum_to_polyline_length(self):
        pts = [WorldPoint(0, 0), WorldPoint(2, 0), WorldPoint(2, 5),
               WorldPoint(-1, 5)]
        segments = chunk_path(pts, 30.0)
        total = sum(s.distance for s in segments if s.kind == FORWARD)
        want = 2 + 5 + 3
        assert math.isclose(total, want)


LANDMARK_GRID = grid_from_rows([
    "############",
    "#..........#",
    "#####.######",
    "#..........#",
    "############",
], resolution=0.5)


def lm_product(pid, x, y, category):
    return ProductRecord(
        product_id=pid,
        label=ProductLabel(name=pid, brand="b", category=category),
        world_x=x, world_y=y, refined=True, frame_id="f0",
    )


class TestLandmarks:
    def test_radius_and_los_gate(self):
        products = [
            lm_product("near", 1.25, 1.75, "tea"),      # adjacent to path row
            lm_product("far", 5.25, 10.0, "soap"),      # out of radius
            lm_product("walled", 1.25, 0.75, "rice"),   # behind the wall band
        ]
        path = [WorldPoint(0.75, 1.75), WorldPoint(5.25, 1.75)]
        lms = collect_landmarks(LANDMARK_GRID, products, path, radius=2.0)
        cats = {l.category for l in lms}
        assert "tea" in cats
        assert "soap" not in cats
        assert "rice" not in cats

    def test_side_assignment(self):
        products = [
            lm_product("a", 2.25, 2.2, "tea"),   # above an eastbound walk: left
            lm_product("b", 2.25, 1.3, "soap"),  # below: right
        ]
        path = [WorldPoint(0.75, 1.75), WorldPoint(5.25, 1.75)]
        lms = {l.category: l for l in collect_landmarks(
            LANDMARK_GRID, products, path, radius=2.0)}
        assert lms["tea"].side == "left"
        assert lms["soap"].side == "right"

    def test_category_dedupe_keeps_earliest(self):
        # One tea near each hop midpoint; the category must be recorded once,
        # from the first hop that observed it.
        products = [
            lm_product("first", 1.25, 1.75, "tea"),
            lm_product("second", 4.75, 1.75, "tea"),
        ]
        path = [WorldPoint(0.75, 1.75), WorldPoint(3.0, 1.75), WorldPoint(5.25, 1.75)]
        lms = collect_landmarks(LANDMARK_GRID, products, path, radius=2.0)
        assert len(lms) == 1
        assert lms[0].segment_index == 0

    def test_empty_path(self):
        assert collect_landmarks(LANDMARK_GRID, [], [], radius=2.0) == []


class TestInstructions:
    SEGMENTS = [
        RouteSegment(FORWARD, distance=4.2),
        RouteSegment(TURN, direction="left", angle=90.0),
        RouteSegment(FORWARD, distance=2.0),
    ]
    LANDMARKS = [LandmarkRef("tea", "right", 1.0, 0)]

    def test_lines_follow_segments(self):
        lines, payload = render_instructions(
            self.SEGMENTS, self.LANDMARKS, "Chai", "left")
        assert len(lines) == 4  # forward, turn, forward, arrive
        assert "4.2" in lines[0] and "tea on your right" in lines[0]
        assert lines[1] == "Turn left."
        assert lines[3] == "Your item, Chai, will be on your left."
        assert payload["goal"] == {"label": "Chai", "side": "left"}

    def test_no_cardinal_tokens_in_defaults(self):
        lines, _ = render_instructions(self.SEGMENTS, self.LANDMARKS, "Chai", "left")
        for line in lines:
            assert not CARDINALS.search(line), line

    def test_custom_templates_override(self):
        lines, _ = render_instructions(
            [RouteSegment(FORWARD, distance=1.0)], [], "X", None,
            templates={"forward": "Go {distance} m.", "arrive": "Done: {label}"})
        assert lines == ["Go 1 m.", "Done: X"]

    def test_landmark_attaches_to_covering_window(self):
        segments = [
            RouteSegment(FORWARD, distance=2.0),
            RouteSegment(TURN, direction="right", angle=90.0),
            RouteSegment(FORWARD, distance=3.0),
        ]
        lms = [LandmarkRef("soap", "left", 3.5, 1)]  # falls in second window
        lines, _ = render_instructions(segments, lms, "X", None)
        assert "soap" not in lines[0]
        assert "soap" in lines[2]


class TestComputeRoute:
    def _setup(self):
        rows = [
            "############",
            "#..........#",
            "#.########.#",
            "#.########.#",
            "#..........#",
            "############",
        ]
        grid = grid_from_rows(rows, resolution=0.5)
        graph = extract_graph(skeletonize(grid), grid)
        products = [lm_product("goal-item", 5.0, 0.9, "snacks")]
        binding = bind_product(graph, grid, "goal-item", products[0].position)
        graph = graph.with_bindings({"goal-item": binding})
        return grid, graph, products

    def test_route_reaches_binding(self):
        grid, graph, products = self._setup()
        plan = compute_route(
            graph, grid, products,
            WorldPoint(0.75, 2.6),
            graph.bindings["goal-item"],
            "Goal Item",
            goal_position=products[0].position,
        )
        assert plan.total_length > 0
        assert plan.instructions
        end = plan.points[-1]
        b = graph.bindings["goal-item"].projection
        assert math.hypot(end.x - b.x, end.y - b.y) < 1e-6
        data = route_to_json(plan)
        assert data["schema_version"] == 1
        assert data["instructions"] == plan.instructions

    def test_zero_length_route_renders_arrival(self):
        grid, graph, products = self._setup()
        b = graph.bindings["goal-item"]
        plan = compute_route(
            graph, grid, products, b.projection, b, "Goal Item",
            goal_position=products[0].position,
        )
        assert plan.segments == []
        assert len(plan.instructions) == 1
        assert "Goal Item" in plan.instructions[0]
