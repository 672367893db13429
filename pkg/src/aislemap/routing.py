"""Shortest paths over the topology graph and their narration.

Start and goal attach to the graph as virtual nodes (the same projection
mechanism products use), A* finds the minimal-length node sequence, the
polyline is chunked into forward runs and discrete turns, landmarks are
gathered around segment midpoints with line-of-sight checks, and the
whole thing renders into egocentric template text. No output ever uses
cardinal directions; everything is relative to the walker's heading.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DegeneratePath, NoVisibleEdge, StaleBinding, Unreachable
from .geometry import OccupancyGrid, WorldPoint, line_of_sight, normalize_angle
from .ingest import ProductRecord
from .topology import (
    LEFT,
    RIGHT,
    EdgeBinding,
    TopologyGraph,
    bind_product,
    insert_virtual_node,
)

FORWARD = "forward"
TURN = "turn"

DEFAULT_TURN_THRESHOLD_DEG = 30.0
DEFAULT_LANDMARK_RADIUS_M = 2.5
LONG_SEGMENT_M = 5.0
DENSE_SAMPLE_STEP_M = 2.5
TURN_ANGLE_ROUND_DEG = 5.0


@dataclass(frozen=True)
class RouteSegment:
    kind: str
    distance: float = 0.0  # forward only, meters, exact
    direction: str = ""  # turn only: left / right
    angle: float = 0.0  # turn only, degrees, exact

    def __post_init__(self):
        if self.kind == FORWARD and self.distance <= 0:
            raise ValueError("forward segments need positive distance")
        if self.kind == TURN and not 0 < self.angle <= 180:
            raise ValueError("turn angle must be in (0, 180]")


@dataclass(frozen=True)
class LandmarkRef:
    category: str
    side: str
    along_distance: float
    segment_index: int  # inter-node hop the landmark was observed from


@dataclass
class PathResult:
    graph: TopologyGraph  # base graph plus the virtual start/goal nodes
    nodes: list[int]
    length: float
    start_id: int
    goal_id: int
    goal_binding: EdgeBinding


@dataclass
class RoutePlan:
    nodes: list[int]
    points: list[WorldPoint]
    segments: list[RouteSegment]
    total_length: float
    landmarks: list[LandmarkRef]
    instructions: list[str]
    prompt_payload: dict
    goal_side: str | None = None


# ---------------------------------------------------------------------------
# Path search


def _astar(graph: TopologyGraph, start: int, goal: int) -> tuple[list[int], float]:
    goal_pos = graph.nodes[goal].position

    def h(nid: int) -> float:
        p = graph.nodes[nid].position
        return math.hypot(p.x - goal_pos.x, p.y - goal_pos.y)

    dist = {start: 0.0}
    prev: dict[int, int] = {}
    counter = 0
    heap = [(h(start), counter, start)]
    done: set[int] = set()
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur in done:
            continue
        if cur == goal:
            path = [cur]
            while path[-1] != start:
                path.append(prev[path[-1]])
            return path[::-1], dist[goal]
        done.add(cur)
        for nb, w in graph.neighbors(cur):
            nd = dist[cur] + w
            if nb not in dist or nd < dist[nb] - 1e-12:
                dist[nb] = nd
                prev[nb] = cur
                counter += 1
                heapq.heappush(heap, (nd + h(nb), counter, nb))
    raise Unreachable(f"no path from node {start} to node {goal}")


def _retarget_binding(
    graph: TopologyGraph, binding: EdgeBinding, via: int
) -> EdgeBinding:
    """Point a binding at the surviving half after its edge was split by
    the virtual node ``via``."""
    if graph.edge(*binding.edge) is not None:
        return binding
    a, b = binding.edge
    halves = [key for key in ((min(a, via), max(a, via)), (min(b, via), max(b, via)))
              if graph.edge(*key) is not None]
    if not halves:
        raise StaleBinding(f"edge {binding.edge} vanished from the graph")
    best = None
    for key in halves:
        pa = graph.nodes[key[0]].position
        pb = graph.nodes[key[1]].position
        proj, _ = _project_point(binding.projection, pa, pb)
        d = math.hypot(binding.projection.x - proj.x, binding.projection.y - proj.y)
        cand = (d, key, proj)
        if best is None or cand[0] < best[0] - 1e-12:
            best = cand
    d, key, proj = best
    return EdgeBinding(
        product_id=binding.product_id,
        edge=key,
        projection=proj,
        side=binding.side,
        offset=binding.offset,
        visible=binding.visible,
    )


def _project_point(p: WorldPoint, a: WorldPoint, b: WorldPoint) -> tuple[WorldPoint, float]:
    dx, dy = b.x - a.x, b.y - a.y
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return WorldPoint(a.x, a.y), 0.0
    t = min(max(((p.x - a.x) * dx + (p.y - a.y) * dy) / seg2, 0.0), 1.0)
    return WorldPoint(a.x + t * dx, a.y + t * dy), t


def plan_path(
    graph: TopologyGraph,
    grid: OccupancyGrid,
    start: WorldPoint,
    goal: EdgeBinding | WorldPoint,
) -> PathResult:
    """A* between virtual start and goal nodes.

    The start requires a visible edge (NoVisibleEdge otherwise); a plain
    world-point goal binds to its nearest edge, falling back across
    obstacles if it has to. The base graph is left untouched.
    """
    start_binding = bind_product(graph, grid, "@start", start, require_los=True)
    work, start_id = insert_virtual_node(graph, start_binding)

    if isinstance(goal, EdgeBinding):
        goal_binding = _retarget_binding(work, goal, start_id)
    else:
        goal_binding = bind_product(work, grid, "@goal", goal, require_los=False)
    work, goal_id = insert_virtual_node(work, goal_binding)

    if start_id == goal_id:
        return PathResult(work, [start_id], 0.0, start_id, goal_id, goal_binding)
    nodes, length = _astar(work, start_id, goal_id)
    return PathResult(work, nodes, length, start_id, goal_id, goal_binding)


# ---------------------------------------------------------------------------
# Chunking


def _dedupe_points(points: list[WorldPoint]) -> list[WorldPoint]:
    out = [points[0]]
    for p in points[1:]:
        if math.hypot(p.x - out[-1].x, p.y - out[-1].y) > 1e-9:
            out.append(p)
    return out


def chunk_path(
    points: list[WorldPoint],
    turn_threshold_deg: float = DEFAULT_TURN_THRESHOLD_DEG,
) -> list[RouteSegment]:
    """Collapse a polyline into alternating Forward and Turn segments.

    Heading changes above the threshold become turns; everything between
    merges into a single forward run. Distances stay exact here; any
    rounding happens at render time.
    """
    if len(points) < 2:
        raise DegeneratePath("a path needs at least 2 nodes")
    pts = _dedupe_points(points)
    if len(pts) < 2:
        raise DegeneratePath("path has no extent after removing repeats")

    hops = list(zip(pts, pts[1:]))
    headings = [math.atan2(b.y - a.y, b.x - a.x) for a, b in hops]
    lengths = [math.hypot(b.x - a.x, b.y - a.y) for a, b in hops]

    segments: list[RouteSegment] = []
    run = lengths[0]
    for i in range(1, len(hops)):
        delta = math.degrees(normalize_angle(headings[i] - headings[i - 1]))
        if abs(delta) > turn_threshold_deg:
            segments.append(RouteSegment(kind=FORWARD, distance=run))
            direction = LEFT if delta > 0 else RIGHT
            segments.append(RouteSegment(kind=TURN, direction=direction, angle=abs(delta)))
            run = lengths[i]
        else:
            run += lengths[i]
    segments.append(RouteSegment(kind=FORWARD, distance=run))
    return segments


# ---------------------------------------------------------------------------
# Landmarks


def _sample_distances(seg_len: float) -> list[float]:
    """Observation points along one hop: the midpoint, plus marks every
    2.5 m when the hop is long enough for the radius to leave gaps."""
    samples = {seg_len / 2.0}
    if seg_len > LONG_SEGMENT_M:
        t = DENSE_SAMPLE_STEP_M
        while t < seg_len:
            samples.add(t)
            t += DENSE_SAMPLE_STEP_M
    return sorted(samples)


def collect_landmarks(
    grid: OccupancyGrid,
    products: list[ProductRecord],
    points: list[WorldPoint],
    radius: float = DEFAULT_LANDMARK_RADIUS_M,
) -> list[LandmarkRef]:
    """Products visible from path-segment midpoints, with walking side.

    A product qualifies when it lies within the radius of a sample point
    and line of sight holds. Categories are deduplicated keeping the
    earliest along-route occurrence; output is sorted by along-distance.
    """
    if not points:
        return []
    pts = _dedupe_points(points)
    ordered = sorted(products, key=lambda p: (p.world_x, p.world_y, p.product_id))

    found: dict[str, LandmarkRef] = {}
    along_base = 0.0
    for hop_idx, (a, b) in enumerate(zip(pts, pts[1:])):
        seg_len = math.hypot(b.x - a.x, b.y - a.y)
        heading = (b.x - a.x, b.y - a.y)
        for t in _sample_distances(seg_len):
            frac = t / seg_len
            sample = WorldPoint(a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y))
            if not grid.contains_world(sample):
                continue
            sample_cell = grid.world_to_grid(sample)
            for p in ordered:
                category = p.label.category or p.label.name
                if category in found:
                    continue
                d = math.hypot(p.world_x - sample.x, p.world_y - sample.y)
                if d > radius:
                    continue
                if not grid.contains_world(p.position):
                    continue
                if not line_of_sight(grid, sample_cell, grid.world_to_grid(p.position)):
                    continue
                cross = heading[0] * (p.world_y - sample.y) - heading[1] * (p.world_x - sample.x)
                side = LEFT if cross >= 0 else RIGHT
                found[category] = LandmarkRef(
                    category=category,
                    side=side,
                    along_distance=along_base + t,
                    segment_index=hop_idx,
                )
        along_base += seg_len
    return sorted(found.values(), key=lambda l: (l.along_distance, l.category))


# ---------------------------------------------------------------------------
# Rendering

DEFAULT_TEMPLATES = {
    "forward": "Walk straight ahead for about {distance} meters.",
    "forward_passing": "Walk straight ahead for about {distance} meters, passing {passing}.",
    "passing_item": "{category} on your {side}",
    "turn": "Turn {direction}.",
    "arrive_side": "Your item, {label}, will be on your {side}.",
    "arrive": "You have arrived at {label}.",
}


def _fmt_distance(meters: float) -> str:
    return f"{round(meters, 1):g}"


def _round_angle(angle: float) -> float:
    return round(angle / TURN_ANGLE_ROUND_DEG) * TURN_ANGLE_ROUND_DEG


def render_instructions(
    segments: list[RouteSegment],
    landmarks: list[LandmarkRef],
    goal_label: str,
    goal_side: str | None = None,
    templates: dict | None = None,
    map_image: str | None = None,
) -> tuple[list[str], dict]:
    """Deterministic egocentric text plus a structured payload.

    Landmarks attach to the forward segment covering their along-route
    distance. The wording is template data; the defaults contain no
    cardinal-direction words and none are synthesized.
    """
    tpl = dict(DEFAULT_TEMPLATES)
    if templates:
        tpl.update(templates)

    # forward segments own contiguous along-distance windows
    windows: list[tuple[float, float, int]] = []
    cursor = 0.0
    for i, seg in enumerate(segments):
        if seg.kind == FORWARD:
            windows.append((cursor, cursor + seg.distance, i))
            cursor += seg.distance
    by_segment: dict[int, list[LandmarkRef]] = {}
    for lm in landmarks:
        target = None
        for lo, hi, idx in windows:
            if lo - 1e-9 <= lm.along_distance <= hi + 1e-9:
                target = idx
                break
        if target is None and windows:
            target = windows[-1][2]
        if target is not None:
            by_segment.setdefault(target, []).append(lm)

    lines: list[str] = []
    for i, seg in enumerate(segments):
        if seg.kind == FORWARD:
            dist_text = _fmt_distance(seg.distance)
            lms = by_segment.get(i, [])
            if lms:
                passing = " and ".join(
                    tpl["passing_item"].format(category=lm.category, side=lm.side)
                    for lm in lms
                )
                lines.append(tpl["forward_passing"].format(distance=dist_text, passing=passing))
            else:
                lines.append(tpl["forward"].format(distance=dist_text))
        else:
            lines.append(tpl["turn"].format(direction=seg.direction))
    if goal_side:
        lines.append(tpl["arrive_side"].format(label=goal_label, side=goal_side))
    else:
        lines.append(tpl["arrive"].format(label=goal_label))

    payload = {
        "segments": [
            (
                {"kind": FORWARD, "distance": round(s.distance, 3)}
                if s.kind == FORWARD
                else {"kind": TURN, "direction": s.direction, "angle": _round_angle(s.angle)}
            )
            for s in segments
        ],
        "landmarks": [
            {
                "category": lm.category,
                "side": lm.side,
                "along_m": round(lm.along_distance, 3),
            }
            for lm in landmarks
        ],
        "goal": {"label": goal_label, "side": goal_side},
    }
    if map_image:
        payload["map_image"] = map_image
    return lines, payload


# ---------------------------------------------------------------------------
# Full route assembly


def _approach_side(points: list[WorldPoint], binding: EdgeBinding,
                   product_pos: WorldPoint | None) -> str | None:
    """Side of the goal item relative to the final walking direction."""
    if product_pos is None or len(points) < 2:
        return None
    pts = _dedupe_points(points)
    if len(pts) < 2:
        return None
    a, b = pts[-2], pts[-1]
    heading = (b.x - a.x, b.y - a.y)
    off = (product_pos.x - binding.projection.x, product_pos.y - binding.projection.y)
    cross = heading[0] * off[1] - heading[1] * off[0]
    return LEFT if cross >= 0 else RIGHT


def compute_route(
    graph: TopologyGraph,
    grid: OccupancyGrid,
    products: list[ProductRecord],
    start: WorldPoint,
    goal: EdgeBinding | WorldPoint,
    goal_label: str,
    goal_position: WorldPoint | None = None,
    turn_threshold_deg: float = DEFAULT_TURN_THRESHOLD_DEG,
    landmark_radius: float = DEFAULT_LANDMARK_RADIUS_M,
    templates: dict | None = None,
    map_image: str | None = None,
) -> RoutePlan:
    """plan_path + chunk_path + collect_landmarks + render_instructions."""
    result = plan_path(graph, grid, start, goal)
    points = [result.graph.nodes[n].position for n in result.nodes]
    goal_side = _approach_side(points, result.goal_binding, goal_position)

    if len(_dedupe_points(points)) < 2:
        segments: list[RouteSegment] = []
        landmarks: list[LandmarkRef] = []
    else:
        segments = chunk_path(points, turn_threshold_deg)
        landmarks = collect_landmarks(grid, products, points, landmark_radius)
    instructions, payload = render_instructions(
        segments, landmarks, goal_label, goal_side, templates, map_image
    )
    return RoutePlan(
        nodes=list(result.nodes),
        points=points,
        segments=segments,
        total_length=result.length,
        landmarks=landmarks,
        instructions=instructions,
        prompt_payload=payload,
        goal_side=goal_side,
    )


# ---------------------------------------------------------------------------
# Serialization


def route_to_json(plan: RoutePlan) -> dict:
    return {
        "schema_version": 1,
        "nodes": [
            {"id": nid, "x": p.x, "y": p.y}
            for nid, p in zip(plan.nodes, plan.points)
        ],
        "total_length": plan.total_length,
        "segments": [
            (
                {"kind": FORWARD, "distance": s.distance}
                if s.kind == FORWARD
                else {"kind": TURN, "direction": s.direction, "angle": s.angle}
            )
            for s in plan.segments
        ],
        "landmarks": [
            {
                "category": lm.category,
                "side": lm.side,
                "along_m": lm.along_distance,
                "segment_index": lm.segment_index,
            }
            for lm in plan.landmarks
        ],
        "instructions": list(plan.instructions),
        "prompt_payload": plan.prompt_payload,
        "goal_side": plan.goal_side,
    }


def save_route(plan: RoutePlan, path: Path) -> None:
    Path(path).write_text(json.dumps(route_to_json(plan), indent=2) + "\n")
