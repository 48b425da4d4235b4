from __future__ import annotations

import json
import math
import subprocess
import sys

import pytest

from retailsim import baskets, experiment, stats, torus
from retailsim.cli import main
from retailsim.engine import SimConfig, run
from retailsim.layout import bundled_layout_path, load_layout


def _json(capsys, argv, code=0):
    assert main([*argv, "--json"]) == code
    return json.loads(capsys.readouterr().out)


# ---------------------------------------------------------------- samplesize


def test_samplesize_examples(capsys):
    assert main(["samplesize", "--z", "1.96", "--sigma", "20", "--halfwidth", "5"]) == 0
    assert capsys.readouterr().out.strip() == "61.4656 → 62"
    assert main(["samplesize", "--alpha", "0.05", "--range", "120", "--halfwidth", "5"]) == 0
    out = capsys.readouterr().out.strip()
    want = stats.min_samples(stats.SampleSizeParams(z=stats.z_from_alpha(0.05), sigma=20.0, l=5.0))
    assert out == f"{want[0]:.4f} → {want[1]}"


def test_samplesize_population_matches_library(capsys):
    got = _json(capsys, ["samplesize", "--z", "1.96", "--sigma", "20", "--halfwidth", "5",
                         "--population", "100"])
    want = stats.min_samples(stats.SampleSizeParams(z=1.96, sigma=20.0, l=5.0, population=100))
    assert (got["n_raw"], got["n"]) == (want[0], want[1])


def test_samplesize_errors(capsys):
    assert main(["samplesize", "--z", "1.96", "--sigma", "20", "--halfwidth", "0"]) == 1
    assert capsys.readouterr().err.startswith("error: ")
    with pytest.raises(SystemExit) as exc:
        main(["samplesize", "--z", "1.96", "--alpha", "0.05", "--sigma", "1", "--halfwidth", "1"])
    assert exc.value.code == 2


# --------------------------------------------------------------------- torus


def test_torus_rotation(capsys):
    assert main(["torus", "rotation", "--p", "3", "--q", "7"]) == 0
    assert capsys.readouterr().out.strip() == "alpha=3/7 recurrent period=7"
    assert main(["torus", "rotation", "--c", str((math.sqrt(5) - 1) / 2)]) == 0
    assert "dense" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["torus", "rotation", "--p", "3"])


def test_torus_embed_and_flow(capsys):
    g = torus.TorusGeometry(2.0, 1.0)
    got = _json(capsys, ["torus", "embed", "--x", "0", "--y", "0"])
    assert got["xyz"] == list(torus.embed(g, torus.TorusPoint(0.0, 0.0))) == [3.0, 0.0, 0.0]
    got = _json(capsys, ["torus", "embed", "--x", "7", "--y", "-1", "--plane", "--R", "3"])
    p = torus.wrap(7.0, -1.0)
    assert got["xyz"] == pytest.approx(list(torus.embed(torus.TorusGeometry(3.0, 1.0), p)))
    assert got["residual"] == pytest.approx(0.0, abs=1e-12)
    f = torus.TorusFlow(0.1, 0.2, 1.0, math.sqrt(2))
    got = _json(capsys, ["torus", "flow", "--flow", "0.1,0.2,1,1.4142135623730951", "--t", "3"])
    assert got["xyz"] == pytest.approx(list(torus.flow_position(g, f, 3.0)))
    with pytest.raises(SystemExit):
        main(["torus", "flow", "--flow", "1,2,3", "--t", "1"])


def test_torus_intersect(capsys):
    g = torus.TorusGeometry(2.0, 1.0)
    a, b = torus.TorusFlow(0, 0, 1, 1), torus.TorusFlow(math.pi, 0, -1, 1)
    got = _json(capsys, ["torus", "intersect", "--a", "0,0,1,1", "--b", f"{math.pi},0,-1,1",
                         "--t1", "20", "--radius", "0.1"])
    rep = torus.count_intersections(g, a, b, 0.0, 20.0, 0.01, 0.1)
    assert got["count"] == rep.count > 0
    assert [e["closest"] for e in got["events"]] == [e.closest for e in rep.events]


# ------------------------------------------------------------------ simulate


def test_simulate_matches_library(tmp_path, capsys):
    out = tmp_path / "run.jsonl"
    got = _json(capsys, ["simulate", "--layout", "grid_3x3", "--seed", "42", "--out", str(out)])
    res = run(load_layout(bundled_layout_path("grid_3x3")), SimConfig(seed=42))
    assert out.read_text() == res.to_jsonl()
    assert got["collisions"] == res.total_collisions and got["sim_id"] == res.sim_id
    out2 = tmp_path / "again.jsonl"
    assert main(["simulate", "--layout", "grid_3x3", "--seed", "42", "--out", str(out2)]) == 0
    assert out2.read_bytes() == out.read_bytes()
    assert "collisions=" in capsys.readouterr().out


def test_simulate_config_file(tmp_path, write_json, capsys):
    cfg = write_json("c.json", {"agents_total": 4, "seed": 5})
    out = tmp_path / "r.jsonl"
    main(["simulate", "--layout", str(bundled_layout_path("corridor")), "--config", str(cfg),
          "--out", str(out)])
    res = run(load_layout(bundled_layout_path("corridor")), SimConfig(agents_total=4, seed=5))
    assert out.read_text() == res.to_jsonl()


def test_simulate_errors(tmp_path, write_json, capsys):
    out = str(tmp_path / "x.jsonl")
    assert main(["simulate", "--layout", "nope.json", "--out", out]) == 1
    assert capsys.readouterr().err.strip() == "error: layout not found: nope.json"
    assert main(["simulate", "--layout", "grid_3x3", "--config", "missing.json", "--out", out]) == 1
    bad = write_json("bad.json", {"agentz": 1})
    assert main(["simulate", "--layout", "grid_3x3", "--config", str(bad), "--out", out]) == 1
    assert "unknown config" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--layout", "grid_3x3", "--out", out, "--frobnicate"])
    assert exc.value.code == 2


# ------------------------------------------------------- experiment / analyze


def _manifest_file(tmp_path, write_json, **kw):
    data = {"experiment_id": "cli", "layout": "grid_3x3", "grid": {"agents_total": [3, 4]},
            "replicates": 2, "sink": "runs"}
    data.update(kw)
    return write_json("manifest.json", data)


def test_experiment_and_analyze(tmp_path, write_json, capsys):
    m = _manifest_file(tmp_path, write_json)
    got = _json(capsys, ["experiment", "--manifest", str(m), "--quiet"])
    assert got["sims"] == 4 and got["failed"] == 0
    direct = experiment.aggregate(tmp_path / "runs" / "cli")
    assert got["aggregate"]["jobs"] == json.loads(json.dumps(direct.to_dict()))["jobs"]
    again = _json(capsys, ["analyze", "--sink", str(tmp_path / "runs")])
    assert again["jobs"] == got["aggregate"]["jobs"]
    assert main(["analyze", "--sink", str(tmp_path / "runs")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("job-0000 [agents_total=3] sims=2/2")
    assert lines[-1].startswith("records=")


def test_experiment_progress_and_partial(tmp_path, write_json, capsys):
    m = _manifest_file(tmp_path, write_json, replicates=1,
                       grid={"trajectory_source": ["random", {"clustered": "missing.json"}]})
    assert main(["experiment", "--manifest", str(m), "--parallelism", "1"]) == 2
    cap = capsys.readouterr()
    assert "[cli] done=1 running=0 failed=1 total=2" in cap.err
    assert "failed " in cap.out
    assert main(["analyze", "--sink", str(tmp_path / "runs")]) == 2


def test_experiment_errors(tmp_path, write_json, capsys):
    assert main(["experiment", "--manifest", str(tmp_path / "none.json")]) == 1
    bad = _manifest_file(tmp_path, write_json, grid={"colour": ["red"]})
    assert main(["experiment", "--manifest", str(bad)]) == 1
    assert "colour" in capsys.readouterr().err


def test_analyze_empty_sink(tmp_path, capsys):
    assert main(["analyze", "--sink", str(tmp_path)]) == 1
    assert capsys.readouterr().err.strip() == "error: no records"
    assert main(["analyze", "--sink", str(tmp_path / "missing")]) == 1


# ------------------------------------------------------------------- cluster


def test_cluster_matches_library(tmp_path, capsys):
    rows = ["customer_id,product_id"]
    trans = []
    for c in range(30):
        basket = ["p1", "p2", "p3"] if c % 2 else ["p7", "p8", "p9"]
        trans.append((f"c{c:02d}", basket))
        rows += [f"c{c:02d},{p}" for p in basket]
    path = tmp_path / "t.csv"
    path.write_text("\n".join(rows) + "\n")
    out = tmp_path / "report.json"
    got = _json(capsys, ["cluster", "--transactions", str(path), "--k-range", "1..4",
                         "--seed", "3", "--out", str(out)])
    matrix = baskets.build_matrix(baskets.read_transactions(path))
    k, _ = baskets.select_k(matrix, range(1, 5), seed=3)
    want = baskets.cluster(matrix, k, seed=3)
    assert got["k"] == k == 2
    assert got["bic"] == pytest.approx(want.bic)
    assert json.loads(out.read_text())["k"] == 2
    assert main(["cluster", "--transactions", str(path), "--k", "1"]) == 0
    assert capsys.readouterr().out.startswith("k=1 ")
    assert main(["cluster", "--transactions", str(tmp_path / "no.csv")]) == 1
    with pytest.raises(SystemExit):
        main(["cluster", "--transactions", str(path), "--k-range", "5..2"])


# ---------------------------------------------------------------------- misc


@pytest.mark.parametrize("argv", [[], ["bogus"], ["simulate", "--help"], ["--help"]])
def test_parser_exits(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == (0 if "--help" in argv else 2)


def test_console_module_runs():
    proc = subprocess.run([sys.executable, "-m", "retailsim.cli", "samplesize", "--z", "1.96",
                           "--sigma", "20", "--halfwidth", "5"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "61.4656 → 62"
