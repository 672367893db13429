"""Navigation-graph extraction from the occupancy grid.

Free space is thinned to a one-cell-wide skeleton, the skeleton's pixel
graph is condensed into junction/turn/endpoint nodes, nearby nodes are
merged, short dead-end spurs are pruned, and every surviving edge is
checked for line of sight (edges that cut corners get subdivided along
their skeleton path instead of silently disconnecting the map).
Products attach to the graph via perpendicular projection; path queries
split edges with temporary virtual nodes, never mutating the base graph.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.cluster.hierarchy import fcluster, linkage

from .errors import EmptySkeleton, NoVisibleEdge, StaleBinding
from .geometry import (
    CellState,
    GridPoint,
    OccupancyGrid,
    WorldPoint,
    label_components,
    line_of_sight,
    normalize_angle,
    require_free_space,
    spatial_median,
)

JUNCTION = "junction"
TURN = "turn"
ENDPOINT = "endpoint"
VIRTUAL = "virtual"

LEFT = "left"
RIGHT = "right"

DEFAULT_TURN_THRESHOLD_DEG = 60.0
DEFAULT_MERGE_RADIUS_M = 0.3
DEFAULT_SPUR_LENGTH_M = 0.5
TURN_WINDOW_CELLS = 5

_KIND_PRIORITY = {JUNCTION: 0, TURN: 1, ENDPOINT: 2, VIRTUAL: 3}


@dataclass(frozen=True)
class TopoNode:
    id: int
    position: WorldPoint
    kind: str


@dataclass(frozen=True)
class TopoEdge:
    a: int
    b: int
    length: float

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("self-loop edges are not allowed")
        if self.a > self.b:
            raise ValueError("edge endpoints must satisfy a < b")

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b)


@dataclass(frozen=True)
class EdgeBinding:
    product_id: str
    edge: tuple[int, int]
    projection: WorldPoint
    side: str
    offset: float
    visible: bool = True


class TopologyGraph:
    """Undirected walkable-space graph; immutable once built."""

    def __init__(
        self,
        nodes: Sequence[TopoNode],
        edges: Sequence[TopoEdge],
        bindings: dict[str, EdgeBinding] | None = None,
    ):
        self.nodes: dict[int, TopoNode] = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise ValueError("duplicate node ids")
        for e in edges:
            if e.a not in self.nodes or e.b not in self.nodes:
                raise ValueError(f"edge ({e.a},{e.b}) references a missing node")
        self.edges: list[TopoEdge] = sorted(edges, key=lambda e: e.key)
        self._edge_map = {e.key: e for e in self.edges}
        self.bindings: dict[str, EdgeBinding] = dict(bindings or {})
        adj: dict[int, list[tuple[int, float]]] = {n.id: [] for n in nodes}
        for e in self.edges:
            adj[e.a].append((e.b, e.length))
            adj[e.b].append((e.a, e.length))
        self._adj = {k: sorted(v) for k, v in adj.items()}

    def neighbors(self, node_id: int) -> list[tuple[int, float]]:
        return self._adj[node_id]

    def edge(self, a: int, b: int) -> TopoEdge | None:
        return self._edge_map.get((min(a, b), max(a, b)))

    def degree(self, node_id: int) -> int:
        return len(self._adj[node_id])

    def node_list(self) -> list[TopoNode]:
        return [self.nodes[i] for i in sorted(self.nodes)]

    def with_bindings(self, bindings: dict[str, EdgeBinding]) -> "TopologyGraph":
        return TopologyGraph(list(self.nodes.values()), self.edges, bindings)


# ---------------------------------------------------------------------------
# Thinning


def _ring(padded: np.ndarray) -> list[np.ndarray]:
    # neighbor ring P2..P9 (N, NE, E, SE, S, SW, W, NW) under y-up rows
    return [
        padded[2:, 1:-1],
        padded[2:, 2:],
        padded[1:-1, 2:],
        padded[:-2, 2:],
        padded[:-2, 1:-1],
        padded[:-2, :-2],
        padded[1:-1, :-2],
        padded[2:, :-2],
    ]


def _thin_pass(mask: np.ndarray, second: bool) -> np.ndarray:
    padded = np.pad(mask, 1)
    p2, p3, p4, p5, p6, p7, p8, p9 = _ring(padded)
    ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
    b = sum(n.astype(np.uint8) for n in ring[:8])
    a = sum(((~ring[i]) & ring[i + 1]).astype(np.uint8) for i in range(8))
    cond = mask & (b >= 2) & (b <= 6) & (a == 1)
    if not second:
        cond &= ~(p2 & p4 & p6)
        cond &= ~(p4 & p6 & p8)
    else:
        cond &= ~(p2 & p4 & p8)
        cond &= ~(p2 & p6 & p8)
    return cond


def _locally_connected_without(mask: np.ndarray, row: int, col: int) -> bool:
    """True when the 8-neighbors of (row, col) stay mutually 8-connected
    inside the 3x3 neighborhood after removing the center pixel."""
    h, w = mask.shape
    cells = [
        (r, c)
        for r in range(row - 1, row + 2)
        for c in range(col - 1, col + 2)
        if (r, c) != (row, col) and 0 <= r < h and 0 <= c < w and mask[r, c]
    ]
    if len(cells) <= 1:
        return len(cells) == 1
    seen = {cells[0]}
    stack = [cells[0]]
    cellset = set(cells)
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nxt = (r + dr, c + dc)
                if nxt in cellset and nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return len(seen) == len(cells)


def _break_square_blocks(mask: np.ndarray) -> None:
    """Remove redundant pixels until no 2x2 block is fully set.

    Deletes only pixels whose removal keeps the local neighborhood
    connected, so thinning this way never splits the skeleton.
    """
    while True:
        blocks = np.argwhere(
            mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
        )
        if len(blocks) == 0:
            return
        deleted = False
        for br, bc in blocks:
            if not (mask[br, bc] and mask[br + 1, bc] and mask[br, bc + 1] and mask[br + 1, bc + 1]):
                continue
            for r, c in ((br, bc), (br, bc + 1), (br + 1, bc), (br + 1, bc + 1)):
                if _locally_connected_without(mask, r, c):
                    mask[r, c] = False
                    deleted = True
                    break
        if not deleted:
            return


def _bfs_path(free: np.ndarray, sources: set[tuple[int, int]],
              targets: set[tuple[int, int]]) -> list[tuple[int, int]]:
    """Shortest 8-connected path through free cells from sources to targets."""
    prev: dict[tuple[int, int], tuple[int, int] | None] = {s: None for s in sources}
    queue = deque(sorted(sources))
    h, w = free.shape
    while queue:
        cur = queue.popleft()
        if cur in targets:
            path = []
            node: tuple[int, int] | None = cur
            while node is not None:
                path.append(node)
                node = prev[node]
            return path
        r, c = cur
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nxt = (r + dr, c + dc)
                if (
                    (dr or dc)
                    and 0 <= nxt[0] < h
                    and 0 <= nxt[1] < w
                    and free[nxt]
                    and nxt not in prev
                ):
                    prev[nxt] = cur
                    queue.append(nxt)
    return []


def skeletonize(grid: OccupancyGrid) -> set[GridPoint]:
    """Two-subiteration morphological thinning of the free space.

    Returns a one-cell-wide subset of the free cells. Each free-space
    component keeps exactly one skeleton component: fully eroded blobs
    get their median cell back, and (defensively) fragmented skeletons
    are re-bridged through free space.
    """
    require_free_space(grid)
    free = grid.mask(CellState.FREE)
    mask = free.copy()
    while True:
        d1 = _thin_pass(mask, second=False)
        mask &= ~d1
        d2 = _thin_pass(mask, second=True)
        mask &= ~d2
        if not d1.any() and not d2.any():
            break
    _break_square_blocks(mask)

    # per-component guard: thinning may erase small blobs outright
    for comp in label_components(free):
        comp_cells = {(int(r), int(c)) for r, c in comp}
        skel_cells = {rc for rc in comp_cells if mask[rc]}
        if not skel_cells:
            med = spatial_median([GridPoint(int(c), int(r)) for r, c in comp])
            mask[med.row, med.col] = True
            continue
        pieces = label_components(mask & _cells_mask(comp_cells, mask.shape))
        while len(pieces) > 1:
            main = {(int(r), int(c)) for r, c in pieces[0]}
            rest = {(int(r), int(c)) for p in pieces[1:] for r, c in p}
            bridge = _bfs_path(free, main, rest)
            for rc in bridge:
                mask[rc] = True
            pieces = label_components(mask & _cells_mask(comp_cells, mask.shape))
        _break_square_blocks(mask)

    rows, cols = np.nonzero(mask)
    return {GridPoint(int(c), int(r)) for r, c in zip(rows, cols)}


def _cells_mask(cells: set[tuple[int, int]], shape: tuple[int, int]) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    for r, c in cells:
        m[r, c] = True
    return m


# ---------------------------------------------------------------------------
# Pixel graph -> topology graph


_NEIGHBOR_STEPS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _pixel_neighbors(px: tuple[int, int], mask: np.ndarray) -> list[tuple[int, int]]:
    h, w = mask.shape
    out = []
    for dr, dc in _NEIGHBOR_STEPS:
        r, c = px[0] + dr, px[1] + dc
        if 0 <= r < h and 0 <= c < w and mask[r, c]:
            out.append((r, c))
    return out


def _trace_chains(mask: np.ndarray) -> tuple[list[tuple[int, int]], list[list[tuple[int, int]]]]:
    """Split the skeleton into anchor pixels (degree != 2) and the pixel
    chains connecting them. Pure cycles get synthetic anchors."""
    pixels = [tuple(p) for p in np.argwhere(mask)]
    degree = {px: len(_pixel_neighbors(px, mask)) for px in pixels}
    anchors = sorted(px for px in pixels if degree[px] != 2)
    chains: list[list[tuple[int, int]]] = []
    seen_steps: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    on_chain: set[tuple[int, int]] = set(anchors)

    def walk(start, first):
        path = [start, first]
        prev, cur = start, first
        while degree[cur] == 2 and cur not in anchor_set:
            nxts = [p for p in _pixel_neighbors(cur, mask) if p != prev]
            if not nxts:
                break
            prev, cur = cur, nxts[0]
            path.append(cur)
        return path

    anchor_set = set(anchors)
    for a in anchors:
        for nb in sorted(_pixel_neighbors(a, mask)):
            if (a, nb) in seen_steps:
                continue
            path = walk(a, nb)
            for u, v in zip(path, path[1:]):
                seen_steps.add((u, v))
                seen_steps.add((v, u))
            on_chain.update(path)
            chains.append(path)

    # leftover pure cycles: no anchor pixel anywhere on them
    leftovers = sorted(px for px in pixels if px not in on_chain)
    for px in leftovers:
        if px in on_chain:
            continue
        nbs = sorted(_pixel_neighbors(px, mask))
        if not nbs:
            anchors.append(px)
            on_chain.add(px)
            continue
        anchor_set.add(px)
        anchors.append(px)
        path = walk(px, nbs[0])
        for u, v in zip(path, path[1:]):
            seen_steps.add((u, v))
            seen_steps.add((v, u))
        on_chain.update(path)
        chains.append(path)
    return anchors, chains


def _heading(a: tuple[int, int], b: tuple[int, int]) -> float:
    # pixels are (row, col); heading in world terms is atan2(dy, dx)
    return math.atan2(b[0] - a[0], b[1] - a[1])


def _turn_indices(path: list[tuple[int, int]], threshold_deg: float,
                  window: int) -> list[int]:
    """Interior indices where the sliding-window heading change peaks
    above the threshold."""
    n = len(path)
    deltas = {}
    for i in range(window, n - window):
        h1 = _heading(path[i - window], path[i])
        h2 = _heading(path[i], path[i + window])
        deltas[i] = abs(math.degrees(normalize_angle(h2 - h1)))
    hits = sorted(i for i, d in deltas.items() if d > threshold_deg)
    picked = []
    run: list[int] = []
    for i in hits:
        if run and i != run[-1] + 1:
            picked.append(max(run, key=lambda j: (deltas[j], -j)))
            run = []
        run.append(i)
    if run:
        picked.append(max(run, key=lambda j: (deltas[j], -j)))
    return picked


@dataclass
class _Builder:
    """Mutable scratch graph used only during extraction."""

    positions: list[tuple[int, int]]
    kinds: list[str]
    edges: dict[tuple[int, int], list[tuple[int, int]]]  # (i,j) -> pixel path

    def add_node(self, px: tuple[int, int], kind: str, index: dict) -> int:
        if px in index:
            i = index[px]
            if _KIND_PRIORITY[kind] < _KIND_PRIORITY[self.kinds[i]]:
                self.kinds[i] = kind
            return i
        index[px] = len(self.positions)
        self.positions.append(px)
        self.kinds.append(kind)
        return index[px]

    def add_edge(self, i: int, j: int, path: list[tuple[int, int]]):
        if i == j:
            return
        key = (min(i, j), max(i, j))
        if key not in self.edges:
            self.edges[key] = path if i < j else path[::-1]


def _chain_length_m(path: list[tuple[int, int]], resolution: float) -> float:
    total = 0.0
    for u, v in zip(path, path[1:]):
        total += math.hypot(v[0] - u[0], v[1] - u[1])
    return total * resolution


def extract_graph(
    skeleton: Iterable[GridPoint],
    grid: OccupancyGrid,
    turn_threshold_deg: float = DEFAULT_TURN_THRESHOLD_DEG,
    merge_radius_m: float = DEFAULT_MERGE_RADIUS_M,
    spur_length_m: float = DEFAULT_SPUR_LENGTH_M,
    turn_window: int = TURN_WINDOW_CELLS,
) -> TopologyGraph:
    """Condense a skeleton into a topology graph.

    Junctions sit at skeleton pixels of degree >= 3, endpoints at degree
    <= 1, turns where the sliding-window heading change exceeds the
    threshold. Nodes within ``merge_radius_m`` collapse (single-linkage)
    onto the nearest skeleton pixel; dead-end spurs shorter than
    ``spur_length_m`` are pruned; edges that fail line of sight are
    subdivided along their skeleton path.
    """
    skeleton = set(skeleton)
    if not skeleton:
        raise EmptySkeleton("cannot extract a graph from an empty skeleton")
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    for col, row in skeleton:
        mask[row, col] = True

    anchors, chains = _trace_chains(mask)
    degree = {px: len(_pixel_neighbors(px, mask)) for px in map(tuple, np.argwhere(mask))}

    builder = _Builder(positions=[], kinds=[], edges={})
    index: dict[tuple[int, int], int] = {}
    for px in anchors:
        kind = JUNCTION if degree[px] >= 3 else ENDPOINT
        builder.add_node(px, kind, index)

    for path in chains:
        turn_at = _turn_indices(path, turn_threshold_deg, turn_window)
        if path[0] == path[-1] and len(path) > 3 and len(turn_at) < 2:
            # a cycle needs at least two interior nodes or its edges
            # collapse into one chord and the loop is lost
            extra = {len(path) // 3, (2 * len(path)) // 3}
            turn_at = sorted((set(turn_at) | extra) - {0, len(path) - 1})
        cuts = [0] + turn_at + [len(path) - 1]
        for i in turn_at:
            builder.add_node(path[i], TURN, index)
        for s, e in zip(cuts, cuts[1:]):
            if s == e:
                continue
            builder.add_edge(index[path[s]], index[path[e]], path[s : e + 1])

    merged = _merge_nodes(builder, mask, grid, merge_radius_m)
    pruned = _prune_spurs(merged, grid, spur_length_m, turn_threshold_deg)
    validated = _validate_edges(pruned, grid)
    repaired = _repair_connectivity(validated, grid)
    return _finalize(repaired, grid)


@dataclass
class _Scratch:
    positions: list[tuple[int, int]]  # pixel (row, col) per node
    kinds: list[str]
    edges: dict[tuple[int, int], list[tuple[int, int]]]


def _merge_nodes(builder: _Builder, mask: np.ndarray, grid: OccupancyGrid,
                 merge_radius_m: float) -> _Scratch:
    n = len(builder.positions)
    if n == 0:
        raise EmptySkeleton("no graph nodes found in skeleton")
    pts = np.array(
        [grid.grid_to_world(GridPoint(c, r)) for r, c in builder.positions]
    )
    if n == 1:
        cluster_of = np.zeros(1, dtype=int)
        k = 1
    else:
        z = linkage(pts, method="single")
        flat = fcluster(z, t=merge_radius_m, criterion="distance")
        # renumber clusters by smallest member index for determinism
        order: dict[int, int] = {}
        cluster_of = np.empty(n, dtype=int)
        for i, raw in enumerate(flat):
            if raw not in order:
                order[raw] = len(order)
            cluster_of[i] = order[raw]
        k = len(order)

    skel_px = np.argwhere(mask)
    new_positions: list[tuple[int, int]] = []
    new_kinds: list[str] = []
    for c in range(k):
        members = np.nonzero(cluster_of == c)[0]
        if len(members) == 1:
            px = builder.positions[members[0]]
        else:
            centroid = pts[members].mean(axis=0)
            cx = (skel_px[:, 1] + 0.5) * grid.resolution + grid.origin.x
            cy = (skel_px[:, 0] + 0.5) * grid.resolution + grid.origin.y
            d2 = (cx - centroid[0]) ** 2 + (cy - centroid[1]) ** 2
            best = np.lexsort((skel_px[:, 1], skel_px[:, 0], d2))[0]
            px = (int(skel_px[best, 0]), int(skel_px[best, 1]))
        kind = min((builder.kinds[m] for m in members), key=_KIND_PRIORITY.get)
        new_positions.append(px)
        new_kinds.append(kind)

    new_edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for (i, j), path in sorted(builder.edges.items()):
        a, b = int(cluster_of[i]), int(cluster_of[j])
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key not in new_edges:
            new_edges[key] = path if a < b else path[::-1]
    return _Scratch(new_positions, new_kinds, new_edges)


def _orient_toward(path: list[tuple[int, int]], px: tuple[int, int],
                   start: bool) -> list[tuple[int, int]]:
    """Orient a pixel path so the end nearer ``px`` is first (or last)."""
    d0 = (path[0][0] - px[0]) ** 2 + (path[0][1] - px[1]) ** 2
    d1 = (path[-1][0] - px[0]) ** 2 + (path[-1][1] - px[1]) ** 2
    near_first = d0 <= d1
    if near_first != start:
        return path[::-1]
    return path


def _adjacency(edges: dict) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def _prune_spurs(scratch: _Scratch, grid: OccupancyGrid, spur_length_m: float,
                 turn_threshold_deg: float) -> _Scratch:
    def edge_len(key):
        pa = scratch.positions[key[0]]
        pb = scratch.positions[key[1]]
        return math.hypot(pb[0] - pa[0], pb[1] - pa[1]) * grid.resolution

    # merging can collapse a junction's spur into a self-loop, leaving a
    # degree-2 "junction"; clean those up before measuring spurs
    scratch = _dissolve_degenerate_junctions(scratch, grid, turn_threshold_deg)
    changed = True
    while changed:
        changed = False
        adj = _adjacency(scratch.edges)
        all_nodes = set(range(len(scratch.positions)))
        leaves = sorted(n for n in all_nodes if len(adj.get(n, ())) == 1)
        removed: set[int] = set()
        for leaf in leaves:
            if leaf in removed:
                continue
            chain = [leaf]
            total = 0.0
            cur, prev = leaf, None
            while True:
                nbs = [x for x in adj.get(cur, ()) if x != prev]
                if len(adj.get(cur, ())) >= 3 and cur != leaf:
                    break
                if not nbs:
                    cur = None
                    break
                nxt = sorted(nbs)[0]
                total += edge_len((min(cur, nxt), max(cur, nxt)))
                prev, cur = cur, nxt
                if len(adj.get(cur, ())) >= 3:
                    break
                chain.append(cur)
            if cur is None or len(adj.get(cur, ())) < 3:
                continue  # free-standing corridor, not a spur
            if total < spur_length_m:
                removed.update(chain)
                changed = True
        if removed:
            scratch = _drop_nodes(scratch, removed)
            scratch = _dissolve_degenerate_junctions(scratch, grid, turn_threshold_deg)
    return scratch


def _drop_nodes(scratch: _Scratch, removed: set[int]) -> _Scratch:
    keep = [i for i in range(len(scratch.positions)) if i not in removed]
    remap = {old: new for new, old in enumerate(keep)}
    edges = {}
    for (a, b), path in scratch.edges.items():
        if a in removed or b in removed:
            continue
        na, nb = remap[a], remap[b]
        key = (min(na, nb), max(na, nb))
        edges[key] = path if na < nb else path[::-1]
    return _Scratch(
        [scratch.positions[i] for i in keep],
        [scratch.kinds[i] for i in keep],
        edges,
    )


def _dissolve_degenerate_junctions(scratch: _Scratch, grid: OccupancyGrid,
                                   turn_threshold_deg: float) -> _Scratch:
    """A junction left with degree 2 after pruning either becomes a turn
    (if the heading change warrants one) or dissolves into a through-edge."""
    while True:
        adj = _adjacency(scratch.edges)
        target = None
        for i in range(len(scratch.positions)):
            if scratch.kinds[i] == JUNCTION and len(adj.get(i, ())) == 2:
                a, b = sorted(adj[i])
                pa, pi, pb = (scratch.positions[x] for x in (a, i, b))
                h1 = _heading(pa, pi)
                h2 = _heading(pi, pb)
                delta = abs(math.degrees(normalize_angle(h2 - h1)))
                if delta > turn_threshold_deg:
                    scratch.kinds[i] = TURN
                else:
                    target = (i, a, b)
                    break
        if target is None:
            return scratch
        i, a, b = target
        p1 = scratch.edges.pop((min(a, i), max(a, i)))
        p2 = scratch.edges.pop((min(i, b), max(i, b)))
        # merging moved node pixels off the raw chain endpoints, so
        # orient by which path end sits closer to the node
        p1 = _orient_toward(p1, scratch.positions[a], start=True)
        p2 = _orient_toward(p2, scratch.positions[b], start=False)
        joined = p1 + (p2[1:] if p1[-1] == p2[0] else p2)
        if a != b:
            key = (min(a, b), max(a, b))
            if key not in scratch.edges:
                scratch.edges[key] = joined if a < b else joined[::-1]
        scratch = _drop_nodes(scratch, {i})


def _validate_edges(scratch: _Scratch, grid: OccupancyGrid) -> _Scratch:
    """Replace every edge failing line of sight with a chain of shorter
    edges subdivided at skeleton-path midpoints."""
    pending = sorted(scratch.edges.items())
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    positions = list(scratch.positions)
    kinds = list(scratch.kinds)
    px_index = {px: i for i, px in enumerate(positions)}

    def node_for(px: tuple[int, int]) -> int:
        if px in px_index:
            return px_index[px]
        positions.append(px)
        kinds.append(TURN)
        px_index[px] = len(positions) - 1
        return px_index[px]

    while pending:
        (a, b), path = pending.pop()
        pa, pb = positions[a], positions[b]
        if line_of_sight(grid, GridPoint(pa[1], pa[0]), GridPoint(pb[1], pb[0])):
            key = (min(a, b), max(a, b))
            if key not in edges:
                edges[key] = path if a < b else path[::-1]
            continue
        if len(path) < 3:
            continue  # nothing to subdivide with; drop the edge
        mid = len(path) // 2
        mid_px = None
        for t in sorted(range(1, len(path) - 1), key=lambda t: (abs(t - mid), t)):
            if path[t] != pa and path[t] != pb:
                mid, mid_px = t, path[t]
                break
        if mid_px is None:
            continue
        m = node_for(mid_px)
        if m != a:
            pending.append(((a, m) if a < m else (m, a), path[: mid + 1]))
        if m != b:
            pending.append(((m, b) if m < b else (b, m), path[mid:]))
    return _Scratch(positions, kinds, edges)


def _node_components(n: int, edges: dict) -> list[list[int]]:
    adj = _adjacency(edges)
    seen: set[int] = set()
    comps = []
    for start in range(n):
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        stack = [start]
        while stack:
            cur = stack.pop()
            for nb in adj.get(cur, ()):
                if nb not in seen:
                    seen.add(nb)
                    comp.append(nb)
                    stack.append(nb)
        comps.append(sorted(comp))
    return comps


def _repair_connectivity(scratch: _Scratch, grid: OccupancyGrid) -> _Scratch:
    """Bridge graph fragments that share a free-space region.

    Edge validation may drop an unsalvageable edge; when that splits the
    graph inside one region, reconnect the two nearest fragments through
    free space and re-validate the bridge.
    """
    free = grid.mask(CellState.FREE)
    labels, _ = ndimage.label(free, structure=np.ones((3, 3), dtype=int))
    while True:
        comps = _node_components(len(scratch.positions), scratch.edges)
        if len(comps) <= 1:
            return scratch
        by_region: dict[int, list[int]] = {}
        for ci, members in enumerate(comps):
            region = int(labels[scratch.positions[members[0]]])
            by_region.setdefault(region, []).append(ci)
        split = sorted(r for r, cs in by_region.items() if len(cs) > 1)
        if not split:
            return scratch
        cis = by_region[split[0]]
        first = comps[cis[0]]
        rest = [m for ci in cis[1:] for m in comps[ci]]
        src = {scratch.positions[m] for m in first}
        dst = {scratch.positions[m] for m in rest}
        bridge = _bfs_path(free, src, dst)
        if not bridge:
            return scratch  # should not happen inside one region
        px_index = {px: i for i, px in enumerate(scratch.positions)}
        a = px_index[bridge[-1]]
        b = px_index[bridge[0]]
        key = (min(a, b), max(a, b))
        if key in scratch.edges or a == b:
            return scratch
        scratch.edges[key] = bridge[::-1] if a < b else bridge
        scratch = _validate_edges(scratch, grid)


def _finalize(scratch: _Scratch, grid: OccupancyGrid) -> TopologyGraph:
    # isolated nodes stay: a one-pixel free component is a legal endpoint
    order = sorted(range(len(scratch.positions)), key=lambda i: tuple(scratch.positions[i]))
    remap = {old: new for new, old in enumerate(order)}
    nodes = []
    for old in order:
        r, c = scratch.positions[old]
        nodes.append(
            TopoNode(
                id=remap[old],
                position=grid.grid_to_world(GridPoint(c, r)),
                kind=scratch.kinds[old],
            )
        )
    edges = []
    for a, b in sorted(scratch.edges):
        na, nb = remap[a], remap[b]
        lo, hi = min(na, nb), max(na, nb)
        pa = nodes[lo].position
        pb = nodes[hi].position
        edges.append(TopoEdge(lo, hi, math.hypot(pb.x - pa.x, pb.y - pa.y)))
    return TopologyGraph(nodes, edges)


# ---------------------------------------------------------------------------
# Product binding and virtual nodes


def _project_on_segment(p: WorldPoint, a: WorldPoint, b: WorldPoint) -> tuple[WorldPoint, float]:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return WorldPoint(ax, ay), 0.0
    t = ((p.x - ax) * dx + (p.y - ay) * dy) / seg2
    t = min(max(t, 0.0), 1.0)
    proj = WorldPoint(ax + t * dx, ay + t * dy)
    return proj, t


def _side_of(edge_dir: tuple[float, float], offset_vec: tuple[float, float]) -> str:
    cross = edge_dir[0] * offset_vec[1] - edge_dir[1] * offset_vec[0]
    return LEFT if cross >= 0.0 else RIGHT


def bind_product(
    graph: TopologyGraph,
    grid: OccupancyGrid,
    product_id: str,
    position: WorldPoint,
    require_los: bool = False,
) -> EdgeBinding:
    """Attach a position to the graph edge with the closest visible
    perpendicular projection.

    Falls back to the nearest edge ignoring visibility (binding flagged
    ``visible=False``) unless ``require_los`` is set, in which case
    :class:`NoVisibleEdge` is raised.
    """
    if not graph.edges:
        raise NoVisibleEdge("graph has no edges to bind to")
    candidates = []
    for e in graph.edges:
        pa = graph.nodes[e.a].position
        pb = graph.nodes[e.b].position
        proj, _ = _project_on_segment(position, pa, pb)
        dist = math.hypot(position.x - proj.x, position.y - proj.y)
        candidates.append((dist, e.a, e.b, proj, pa, pb))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    in_grid = grid.contains_world(position)
    chosen = None
    visible = False
    if in_grid:
        pcell = grid.world_to_grid(position)
        for cand in candidates:
            proj = cand[3]
            if not grid.contains_world(proj):
                continue
            if line_of_sight(grid, grid.world_to_grid(proj), pcell):
                chosen = cand
                visible = True
                break
    if chosen is None:
        if require_los:
            raise NoVisibleEdge(f"no edge visible from {tuple(position)}")
        chosen = candidates[0]
    dist, a, b, proj, pa, pb = chosen
    side = _side_of((pb.x - pa.x, pb.y - pa.y), (position.x - proj.x, position.y - proj.y))
    return EdgeBinding(
        product_id=product_id,
        edge=(a, b),
        projection=proj,
        side=side,
        offset=dist,
        visible=visible,
    )


def insert_virtual_node(
    graph: TopologyGraph, binding: EdgeBinding
) -> tuple[TopologyGraph, int]:
    """Split the bound edge at the projection with a Virtual node.

    Returns a new graph; the input graph is never modified. A projection
    sitting on an existing endpoint returns that node without a split.
    """
    edge = graph.edge(*binding.edge)
    if edge is None:
        raise StaleBinding(f"edge {binding.edge} is not in the graph")
    pa = graph.nodes[edge.a].position
    pb = graph.nodes[edge.b].position
    proj = binding.projection
    if math.hypot(proj.x - pa.x, proj.y - pa.y) < 1e-9:
        return graph, edge.a
    if math.hypot(proj.x - pb.x, proj.y - pb.y) < 1e-9:
        return graph, edge.b

    new_id = max(graph.nodes) + 1
    nodes = list(graph.nodes.values()) + [TopoNode(new_id, proj, VIRTUAL)]
    edges = [e for e in graph.edges if e.key != edge.key]
    la = math.hypot(proj.x - pa.x, proj.y - pa.y)
    lb = math.hypot(proj.x - pb.x, proj.y - pb.y)
    edges.append(TopoEdge(min(edge.a, new_id), max(edge.a, new_id), la))
    edges.append(TopoEdge(min(edge.b, new_id), max(edge.b, new_id), lb))
    return TopologyGraph(nodes, edges, graph.bindings), new_id


# ---------------------------------------------------------------------------
# Serialization


def graph_to_json(graph: TopologyGraph) -> dict:
    return {
        "schema_version": 1,
        "nodes": [
            {"id": n.id, "x": n.position.x, "y": n.position.y, "kind": n.kind}
            for n in graph.node_list()
        ],
        "edges": [{"a": e.a, "b": e.b, "length": e.length} for e in graph.edges],
        "bindings": [
            {
                "product_id": pid,
                "edge": [b.edge[0], b.edge[1]],
                "px": b.projection.x,
                "py": b.projection.y,
                "side": b.side,
                "offset": b.offset,
                "visible": b.visible,
            }
            for pid, b in sorted(graph.bindings.items())
        ],
    }


def graph_from_json(data: dict) -> TopologyGraph:
    nodes = [
        TopoNode(int(n["id"]), WorldPoint(float(n["x"]), float(n["y"])), n["kind"])
        for n in data["nodes"]
    ]
    edges = [TopoEdge(int(e["a"]), int(e["b"]), float(e["length"])) for e in data["edges"]]
    bindings = {}
    for b in data.get("bindings", []):
        bindings[b["product_id"]] = EdgeBinding(
            product_id=b["product_id"],
            edge=(int(b["edge"][0]), int(b["edge"][1])),
            projection=WorldPoint(float(b["px"]), float(b["py"])),
            side=b["side"],
            offset=float(b["offset"]),
            visible=bool(b.get("visible", True)),
        )
    return TopologyGraph(nodes, edges, bindings)
