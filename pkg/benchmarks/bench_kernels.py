"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--sim]

Reports the best-of-N wall time per kernel call for each backend, plus
(with --sim) whole-simulation ticks per second on the default scenario.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from retailsim import kernels
from retailsim.engine import SimConfig, run
from retailsim.layout import bundled_layout_path, load_layout


def _best(fn, repeat: int) -> float:
    fn()  # warm-up (JIT compile or cache load)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng: np.random.Generator):
    n = 2000
    xs = rng.uniform(0, 100, n)
    ys = rng.uniform(0, 100, n)
    dist = np.abs(np.sin(np.linspace(0, 400, 200_000))) * 2
    flow_a = np.array([0.0, 0.0, 1.0, 0.618])
    flow_b = np.array([0.5, 3.0, -1.0, 0.3])
    return {
        "pairs_within n=50 r=3": lambda k: k.pairs_within(xs[:50] / 10, ys[:50] / 10, 3.0),
        "pairs_within n=2000 r=2": lambda k: k.pairs_within(xs, ys, 2.0),
        "torus_gap n=200k": lambda k: k.torus_gap(3.0, 1.0, flow_a, flow_b, 0.0, 0.01, 200_000),
        "hit_runs n=200k": lambda k: k.hit_runs(dist, 0.5),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sim", action="store_true", help="also time a full simulation")
    args = ap.parse_args(argv)

    backends = {"numpy": kernels.numpy_backend}
    if kernels.numba_backend is not None:
        backends["numba"] = kernels.numba_backend
    cases = kernel_cases(np.random.default_rng(args.seed))
    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}")
    for name, case in cases.items():
        t = {b: _best(lambda: case(mod), args.repeat) for b, mod in backends.items()}
        speed = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"{name:28s}" + "".join(f"{t[b] * 1e3:10.2f}ms" for b in backends) + f"{speed:9.1f}x")

    if args.sim:
        layout = load_layout(bundled_layout_path())
        cfg = SimConfig(seed=args.seed)
        for b in backends:
            run(layout, SimConfig(agents_total=2, max_sim_time=5.0), backend=b)
            t0 = time.perf_counter()
            res = run(layout, cfg, backend=b)
            dt = time.perf_counter() - t0
            print(f"simulation [{b}]: {res.ticks} ticks in {dt:.2f}s = {res.ticks / dt:,.0f} ticks/s")


if __name__ == "__main__":
    main()
