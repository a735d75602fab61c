"""Road network data model: a directed location graph with planar coordinates.

Coordinates are planar meters (synthetic scale), not lon/lat.  Out-edge lists
are kept sorted so every downstream iteration order is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MAIN = "main"
SIDE = "side"


class NetworkError(ValueError):
    """Raised for malformed network files or invalid location ids."""


@dataclass
class RoadNetwork:
    """Immutable directed road graph.

    coords      -- (n, 2) float64 array of x/y positions in meters
    out_edges   -- per-location sorted tuple of successor ids
    edge_class  -- (from, to) -> "main" | "side"
    """

    coords: np.ndarray
    out_edges: tuple[tuple[int, ...], ...]
    edge_class: dict[tuple[int, int], str] = field(default_factory=dict)

    @property
    def num_locations(self) -> int:
        return len(self.out_edges)

    @property
    def num_edges(self) -> int:
        return sum(len(e) for e in self.out_edges)

    def check_location(self, loc: int) -> None:
        if not (0 <= loc < self.num_locations):
            raise NetworkError(f"invalid location id {loc} (network has {self.num_locations} locations)")

    def edges(self) -> list[tuple[int, int]]:
        """All directed edges in canonical (from, to) ascending order."""
        return [(i, j) for i, succ in enumerate(self.out_edges) for j in succ]


def neighbors(net: RoadNetwork, loc: int) -> tuple[int, ...]:
    """Successor locations of ``loc``, ascending; empty for dead ends."""
    net.check_location(loc)
    return net.out_edges[loc]


def euclid(net: RoadNetwork, a: int, b: int) -> float:
    """Planar Euclidean distance in meters between two locations."""
    net.check_location(a)
    net.check_location(b)
    dx = net.coords[a, 0] - net.coords[b, 0]
    dy = net.coords[a, 1] - net.coords[b, 1]
    return math.hypot(dx, dy)


def mean_edge_length(net: RoadNetwork) -> float:
    lengths = [euclid(net, a, b) for a, b in net.edges()]
    if not lengths:
        raise NetworkError("network has no edges")
    return float(np.mean(lengths))


def _validate(coords: np.ndarray, adjacency: list[list[int]], edge_class: dict) -> RoadNetwork:
    n = len(coords)
    if not np.all(np.isfinite(coords)):
        raise NetworkError("non-finite coordinate in network")
    out_edges = []
    for i, succ in enumerate(adjacency):
        for j in succ:
            if not (0 <= j < n):
                raise NetworkError(f"dangling edge endpoint {i} -> {j} (only {n} locations)")
        if len(set(succ)) != len(succ):
            raise NetworkError(f"duplicate out-edge at location {i}")
        out_edges.append(tuple(sorted(succ)))
    return RoadNetwork(coords=coords, out_edges=tuple(out_edges), edge_class=edge_class)


def grid_network(
    w: int,
    h: int,
    spacing: float,
    main_rows: set[int] = frozenset(),
    main_cols: set[int] = frozenset(),
) -> RoadNetwork:
    """Build a w x h lattice with bidirectional edges between 4-neighbors.

    Node id = row * w + col; x = col * spacing, y = row * spacing.
    Horizontal edges on ``main_rows`` and vertical edges on ``main_cols``
    are tagged "main"; everything else is "side".
    """
    if w < 2 or h < 2:
        raise NetworkError(f"grid needs w, h >= 2 (got {w}x{h})")
    if spacing <= 0:
        raise NetworkError(f"grid spacing must be positive (got {spacing})")
    coords = np.zeros((w * h, 2), dtype=np.float64)
    adjacency: list[list[int]] = [[] for _ in range(w * h)]
    edge_class: dict[tuple[int, int], str] = {}
    for r in range(h):
        for c in range(w):
            i = r * w + c
            coords[i] = (c * spacing, r * spacing)
            for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w):
                    continue
                j = rr * w + cc
                adjacency[i].append(j)
                if dr == 0 and r in main_rows:
                    edge_class[(i, j)] = MAIN
                elif dc == 0 and c in main_cols:
                    edge_class[(i, j)] = MAIN
                else:
                    edge_class[(i, j)] = SIDE
    return _validate(coords, adjacency, edge_class)


def build_network(
    coords: list[tuple[float, float]],
    edges: list[tuple[int, int]],
    edge_class: dict[tuple[int, int], str] | None = None,
) -> RoadNetwork:
    """Construct and validate a network from explicit node/edge lists."""
    arr = np.asarray(coords, dtype=np.float64).reshape(len(coords), 2)
    adjacency: list[list[int]] = [[] for _ in range(len(coords))]
    classes = dict(edge_class) if edge_class else {}
    for a, b in edges:
        if not (0 <= a < len(coords)):
            raise NetworkError(f"dangling edge endpoint {a} -> {b} (only {len(coords)} locations)")
        adjacency[a].append(b)
        classes.setdefault((a, b), SIDE)
    return _validate(arr, adjacency, classes)


def save_network(net: RoadNetwork, path: str) -> None:
    """Write the canonical JSON form: nodes ascending by id, edges by (from, to)."""
    doc = {
        "nodes": [
            {"id": i, "x": float(net.coords[i, 0]), "y": float(net.coords[i, 1])}
            for i in range(net.num_locations)
        ],
        "edges": [
            {"from": a, "to": b, "class": net.edge_class.get((a, b), SIDE)}
            for a, b in net.edges()
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


def load_network(path: str) -> RoadNetwork:
    """Load and validate a network JSON file."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"cannot parse network file {path}: {exc}") from exc
    try:
        nodes = doc["nodes"]
        raw_edges = doc["edges"]
    except (TypeError, KeyError) as exc:
        raise NetworkError(f"network file {path} missing 'nodes'/'edges'") from exc
    ids = [n["id"] for n in nodes]
    if ids != list(range(len(nodes))):
        raise NetworkError("node ids must be contiguous 0..n-1 in ascending order")
    coords = [(n["x"], n["y"]) for n in nodes]
    edges = []
    edge_class = {}
    for e in raw_edges:
        a, b = int(e["from"]), int(e["to"])
        cls = e.get("class", SIDE)
        if cls not in (MAIN, SIDE):
            raise NetworkError(f"unknown edge class {cls!r} on edge {a} -> {b}")
        edges.append((a, b))
        edge_class[(a, b)] = cls
    return build_network(coords, edges, edge_class)
