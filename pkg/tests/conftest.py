from __future__ import annotations

import copy
import json

import pytest

from retailsim.layout import bundled_layout_path, layout_from_dict, load_layout

# five bays along one aisle, one till, spawn and exit at opposite ends
MINIMAL_LAYOUT = {
    "version": 1,
    "id": "minimal",
    "nodes": [
        {"id": "in", "x": 0.0, "y": 0.0},
        {"id": "a", "x": 3.0, "y": 0.0},
        {"id": "b", "x": 6.0, "y": 0.0},
        {"id": "c", "x": 9.0, "y": 0.0},
        {"id": "d", "x": 9.0, "y": 4.0},
        {"id": "e", "x": 6.0, "y": 4.0},
        {"id": "till", "x": 3.0, "y": 4.0},
        {"id": "out", "x": 0.0, "y": 4.0},
    ],
    "edges": [["in", "a"], ["a", "b"], ["b", "c"], ["c", "d"], ["d", "e"], ["e", "till"],
              ["till", "out"]],
    "bays": [
        {"id": "B1", "node": "a", "products": ["p1"]},
        {"id": "B2", "node": "b", "products": ["p2"]},
        {"id": "B3", "node": "c", "products": ["p3"]},
        {"id": "B4", "node": "d", "products": ["p4"]},
        {"id": "B5", "node": "e", "products": ["p5"]},
    ],
    "spawn": "in",
    "despawn": "out",
    "tills": ["till"],
}


@pytest.fixture
def minimal_doc():
    return copy.deepcopy(MINIMAL_LAYOUT)


@pytest.fixture
def minimal_layout():
    return layout_from_dict(copy.deepcopy(MINIMAL_LAYOUT))


@pytest.fixture(scope="session")
def grid():
    return load_layout(bundled_layout_path("grid_3x3"))


@pytest.fixture(scope="session")
def corridor():
    return load_layout(bundled_layout_path("corridor"))


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        p = tmp_path / name
        p.write_text(json.dumps(data), encoding="utf-8")
        return p

    return _write


# acceptance criteria report one verdict line each; printed after the run
_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    def _record(number: int, title: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
