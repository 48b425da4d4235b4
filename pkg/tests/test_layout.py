from __future__ import annotations

import itertools
import json
import math
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retailsim.layout import LayoutError, layout_from_dict, load_layout


def test_minimal_fixture_round_trip(write_json, minimal_doc):
    lay = load_layout(write_json("m.layout.json", minimal_doc))
    assert len(lay.bays) == 5
    again = layout_from_dict(json.loads(json.dumps(lay.to_dict())))
    assert again.to_dict() == lay.to_dict()


def test_edge_lengths_are_euclidean(grid):
    for a, b, length in grid.edges:
        assert length == pytest.approx(grid.nodes[a].distance(grid.nodes[b]), abs=1e-9)


def _bfs(layout, start):
    seen, todo = {start}, deque([start])
    while todo:
        u = todo.popleft()
        for v, _ in layout.neighbors(u):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


def test_grid_fixture_is_connected(grid):
    junctions = [n for n in grid.nodes if n.startswith("j")]
    assert len(junctions) == 9
    for n in grid.nodes:
        assert _bfs(grid, n) == set(grid.nodes)


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d["bays"].append({"id": "BX", "node": "nowhere", "products": []}), "BX"),
        (lambda d: d["nodes"].append({"id": "iso", "x": 50, "y": 50})
         or d["bays"].append({"id": "BY", "node": "iso", "products": []}), "BY"),
        (lambda d: d.update(despawn="in"), "spawn and despawn"),
        (lambda d: d.update(tills=[]), "at least one till"),
        (lambda d: d["bays"].pop(), "at least 5 bays"),
        (lambda d: d["bays"][1]["products"].append("p1"), "p1"),
        (lambda d: d["edges"].append(["a", "a"]), "self-loop"),
        (lambda d: d["edges"].append(["b", "a"]), "duplicate edge"),
        (lambda d: d["nodes"][0].update(x=float("nan")), "finite"),
        (lambda d: d.update(version=2), "version"),
        (lambda d: d.pop("spawn"), "spawn"),
    ],
)
def test_invalid_layouts_name_the_problem(minimal_doc, mutate, fragment):
    mutate(minimal_doc)
    with pytest.raises(LayoutError, match=fragment):
        layout_from_dict(minimal_doc)


def test_disconnected_till_rejected(minimal_doc):
    minimal_doc["nodes"].append({"id": "t2", "x": 40, "y": 40})
    minimal_doc["nodes"].append({"id": "t3", "x": 44, "y": 40})
    minimal_doc["edges"].append(["t2", "t3"])
    minimal_doc["tills"].append("t2")
    with pytest.raises(LayoutError, match="t2"):
        layout_from_dict(minimal_doc)


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope", encoding="utf-8")
    with pytest.raises(LayoutError):
        load_layout(p)


def test_route_identity_and_corridor(minimal_layout):
    r = minimal_layout.route("a", "a")
    assert r.nodes == ("a",) and r.length == 0
    r = minimal_layout.route("in", "c")
    assert r.nodes == ("in", "a", "b", "c")
    assert r.length == pytest.approx(9.0)


def _simple_paths(layout, src, dst):
    out = []

    def walk(path, length):
        u = path[-1]
        if u == dst:
            out.append((length, tuple(path)))
            return
        for v, w in layout.neighbors(u):
            if v not in path:
                walk(path + [v], length + w)

    walk([src], 0.0)
    return out


def test_corner_to_corner_is_lexicographically_smallest_shortest(grid):
    paths = _simple_paths(grid, "j00", "j22")
    best = min(length for length, _ in paths)
    ties = sorted(p for length, p in paths if math.isclose(length, best, rel_tol=1e-9))
    r = grid.route("j00", "j22")
    assert r.length == pytest.approx(best)
    assert r.nodes == ties[0]
    assert len(ties) > 1


def test_required_routes_exist(grid):
    bays = [b.node for b in grid.bays]
    for a, b in itertools.product(bays, bays):
        grid.route(a, b)
    for b in bays:
        grid.route(grid.spawn, b)
        for t in grid.tills:
            grid.route(b, t)
    for t in grid.tills:
        grid.route(t, grid.despawn)


def test_unknown_node(grid):
    with pytest.raises(KeyError):
        grid.route("j00", "zzz")


def test_avoid_penalty_changes_choice_but_not_metric(grid):
    plain = grid.route("j00", "j22")
    avoided = grid.route("j00", "j22", avoid=[plain.nodes[1]], penalty=50.0)
    assert plain.nodes[1] not in avoided.nodes
    assert avoided.length == pytest.approx(plain.length)


@settings(max_examples=80, deadline=None)
@given(data=st.data())
def test_route_properties(grid, data):
    nodes = sorted(grid.nodes)
    a = data.draw(st.sampled_from(nodes))
    b = data.draw(st.sampled_from(nodes))
    r = grid.route(a, b)
    assert r.nodes[0] == a and r.nodes[-1] == b
    total = 0.0
    for u, v in zip(r.nodes, r.nodes[1:]):
        w = dict(grid.neighbors(u))
        assert v in w
        total += w[v]
    assert total == pytest.approx(r.length)
    assert r.length == pytest.approx(grid.route(b, a).length)
    assert r.length >= grid.nodes[a].distance(grid.nodes[b]) - 1e-9
