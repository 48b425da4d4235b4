"""Store geometry as a graph of straight walkable segments, plus routing.

Layouts are loaded from versioned JSON::

    {"version": 1, "id": "...",
     "nodes": [{"id": "j00", "x": 0.0, "y": 0.0}, ...],
     "edges": [["j00", "j01"], ...],
     "bays": [{"id": "B1", "node": "m00", "products": ["p1", "p2"]}, ...],
     "spawn": "entrance", "despawn": "exit", "tills": ["till1"]}

Edge lengths are always derived from node coordinates.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

LAYOUT_VERSION = 1
MIN_BAYS = 5
_EPS = 1e-9


class LayoutError(ValueError):
    """Raised for malformed or invalid layout files."""


class RoutingError(RuntimeError):
    """Target not reachable; only possible on a layout that skipped validation."""


@dataclass(frozen=True, slots=True)
class Position:
    x: float
    y: float

    def distance(self, other: Position) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Bay:
    id: str
    node: str
    position: Position
    products: frozenset[str]


@dataclass(frozen=True)
class Route:
    nodes: tuple[str, ...]
    length: float


@dataclass(frozen=True)
class StoreLayout:
    id: str
    nodes: Mapping[str, Position]
    edges: tuple[tuple[str, str, float], ...]
    bays: tuple[Bay, ...]
    spawn: str
    despawn: str
    tills: tuple[str, ...]
    _adj: dict[str, tuple[tuple[str, float], ...]] = field(
        init=False, repr=False, compare=False
    )
    _routes: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        adj: dict[str, list[tuple[str, float]]] = {n: [] for n in self.nodes}
        for a, b, length in self.edges:
            adj[a].append((b, length))
            adj[b].append((a, length))
        object.__setattr__(
            self, "_adj", {n: tuple(sorted(nbrs)) for n, nbrs in adj.items()}
        )
        object.__setattr__(self, "_routes", {})

    def neighbors(self, node: str) -> tuple[tuple[str, float], ...]:
        return self._adj[node]

    def bay(self, bay_id: str) -> Bay:
        for b in self.bays:
            if b.id == bay_id:
                return b
        raise KeyError(bay_id)

    @property
    def bay_ids(self) -> list[str]:
        return sorted(b.id for b in self.bays)

    def product_bays(self) -> dict[str, str]:
        """Map each stocked product id to the bay that holds it."""
        return {p: b.id for b in self.bays for p in b.products}

    def route(
        self, src: str, dst: str, avoid: Iterable[str] = (), penalty: float = 1.0
    ) -> Route:
        return route(self, src, dst, avoid=avoid, penalty=penalty)

    def to_dict(self) -> dict:
        return {
            "version": LAYOUT_VERSION,
            "id": self.id,
            "nodes": [{"id": n, "x": p.x, "y": p.y} for n, p in self.nodes.items()],
            "edges": [[a, b] for a, b, _ in self.edges],
            "bays": [
                {"id": b.id, "node": b.node, "products": sorted(b.products)}
                for b in self.bays
            ],
            "spawn": self.spawn,
            "despawn": self.despawn,
            "tills": list(self.tills),
        }


def _component(adj: Mapping[str, Iterable], start: str) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v, _ in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise LayoutError(msg)


def _finite(value, what: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise LayoutError(f"{what} is not a number: {value!r}") from None
    _require(math.isfinite(v), f"{what} is not finite: {value!r}")
    return v


def layout_from_dict(data: Mapping) -> StoreLayout:
    """Validate a decoded layout document and build the layout."""
    _require(isinstance(data, Mapping), "layout must be a JSON object")
    for key in ("version", "id", "nodes", "edges", "bays", "spawn", "despawn", "tills"):
        _require(key in data, f"missing key {key!r}")
    _require(
        data["version"] == LAYOUT_VERSION,
        f"unsupported layout version {data['version']!r}",
    )

    nodes: dict[str, Position] = {}
    for raw in data["nodes"]:
        nid = str(raw["id"])
        _require(nid not in nodes, f"duplicate node id {nid!r}")
        nodes[nid] = Position(
            _finite(raw["x"], f"node {nid!r} x"), _finite(raw["y"], f"node {nid!r} y")
        )

    edges: list[tuple[str, str, float]] = []
    seen_edges: set[frozenset[str]] = set()
    for raw in data["edges"]:
        _require(len(raw) == 2, f"edge must name two nodes: {raw!r}")
        a, b = str(raw[0]), str(raw[1])
        for n in (a, b):
            _require(n in nodes, f"edge {raw!r} references unknown node {n!r}")
        _require(a != b, f"self-loop edge at node {a!r}")
        key = frozenset((a, b))
        _require(key not in seen_edges, f"duplicate edge {a!r}-{b!r}")
        seen_edges.add(key)
        length = nodes[a].distance(nodes[b])
        _require(length > 0.0, f"zero-length edge {a!r}-{b!r}")
        edges.append((a, b, length))

    degree = {n: 0 for n in nodes}
    for a, b, _ in edges:
        degree[a] += 1
        degree[b] += 1

    bays: list[Bay] = []
    owner: dict[str, str] = {}
    for raw in data["bays"]:
        bid = str(raw["id"])
        _require(all(b.id != bid for b in bays), f"duplicate bay id {bid!r}")
        node = str(raw["node"])
        _require(node in nodes, f"bay {bid!r} is off-graph: node {node!r} does not exist")
        _require(
            degree[node] > 0, f"bay {bid!r} is off-graph: node {node!r} has no edges"
        )
        products = frozenset(str(p) for p in raw.get("products", ()))
        for p in sorted(products):
            _require(
                p not in owner,
                f"product {p!r} stocked in both bay {owner.get(p)!r} and bay {bid!r}",
            )
            owner[p] = bid
        bays.append(Bay(bid, node, nodes[node], products))

    spawn, despawn = str(data["spawn"]), str(data["despawn"])
    tills = tuple(str(t) for t in data["tills"])
    _require(spawn in nodes, f"spawn node {spawn!r} does not exist")
    _require(despawn in nodes, f"despawn node {despawn!r} does not exist")
    _require(spawn != despawn, "spawn and despawn must differ")
    _require(len(tills) >= 1, "layout needs at least one till")
    for t in tills:
        _require(t in nodes, f"till node {t!r} does not exist")
    _require(len(set(tills)) == len(tills), "duplicate till node")
    _require(len(bays) >= MIN_BAYS, f"layout needs at least {MIN_BAYS} bays, got {len(bays)}")

    layout = StoreLayout(
        id=str(data["id"]),
        nodes=nodes,
        edges=tuple(edges),
        bays=tuple(bays),
        spawn=spawn,
        despawn=despawn,
        tills=tills,
    )
    reach = _component(layout._adj, spawn)
    for b in bays:
        _require(b.node in reach, f"bay {b.id!r} is not reachable from spawn")
    for t in tills:
        _require(t in reach, f"till {t!r} is not reachable from spawn")
        _require(
            despawn in _component(layout._adj, t),
            f"despawn is not reachable from till {t!r}",
        )
    return layout


def load_layout(path: str | Path) -> StoreLayout:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LayoutError(f"cannot parse {path}: {exc}") from exc
    try:
        return layout_from_dict(data)
    except (KeyError, TypeError) as exc:
        raise LayoutError(f"malformed layout {path}: {exc!r}") from exc


def bundled_layout_path(name: str = "grid_3x3") -> Path:
    """Path of a layout fixture shipped with the package."""
    return Path(str(resources.files("retailsim") / "data" / f"{name}.layout.json"))


def _distances_to(
    layout: StoreLayout, dst: str, avoid: frozenset[str], penalty: float
) -> dict[str, float]:
    dist = {dst: 0.0}
    heap = [(0.0, dst)]
    done: set[str] = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in layout.neighbors(u):
            if u in avoid or v in avoid:
                w *= penalty
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def route(
    layout: StoreLayout,
    src: str,
    dst: str,
    avoid: Iterable[str] = (),
    penalty: float = 1.0,
) -> Route:
    """Shortest walkable path from ``src`` to ``dst``.

    Among paths of equal length (to 1e-9 relative) the lexicographically
    smallest node-id sequence is returned. Edges touching a node in ``avoid``
    cost ``penalty`` times their length when choosing the path; the reported
    length is always the true metric length.
    """
    for n in (src, dst):
        if n not in layout.nodes:
            raise KeyError(f"unknown node {n!r}")
    avoid = frozenset(avoid) if penalty != 1.0 else frozenset()
    key = (src, dst, avoid, penalty)
    cached = layout._routes.get(key)
    if cached is not None:
        return cached

    dist = _distances_to(layout, dst, avoid, penalty)
    if src not in dist:
        raise RoutingError(f"{dst!r} unreachable from {src!r}")
    path = [src]
    length = 0.0
    u = src
    while u != dst:
        du = dist[u]
        tol = _EPS * max(1.0, du)
        best = None
        for v, w in layout.neighbors(u):
            cost = w * penalty if (u in avoid or v in avoid) else w
            if v in dist and abs(cost + dist[v] - du) <= tol and dist[v] < du:
                if best is None or v < best[0]:
                    best = (v, w)
        assert best is not None, "shortest-path tree broken"
        u = best[0]
        path.append(u)
        length += best[1]
    result = Route(tuple(path), length)
    layout._routes[key] = result
    return result
