"""Proximity collisions and the Poisson model of their counts.

A collision is two agents within the collision radius (2 m by default) at
the same tick. Per-tick pairs are merged into events over consecutive ticks;
event counts per time window are compared against the Poisson pmf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence, Sized

import numpy as np
from scipy import stats as _sps

from . import kernels
from .layout import Position

DEFAULT_RADIUS = 2.0
MIN_WINDOWS = 30
MIN_EXPECTED = 5.0


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class CollisionEvent:
    sim_id: str
    agent_a: Hashable
    agent_b: Hashable
    start_tick: int
    end_tick: int
    min_distance: float
    location: Position

    def __post_init__(self) -> None:
        if self.start_tick > self.end_tick:
            raise ValueError("start_tick after end_tick")
        if not self.agent_a < self.agent_b:
            raise ValueError("agent ids must be in canonical order a < b")

    @property
    def duration_ticks(self) -> int:
        return self.end_tick - self.start_tick + 1

    def to_record(self) -> dict:
        return {
            "sim_id": self.sim_id,
            "agent_a": self.agent_a,
            "agent_b": self.agent_b,
            "start_tick": self.start_tick,
            "end_tick": self.end_tick,
            "min_distance": self.min_distance,
            "x": self.location.x,
            "y": self.location.y,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> CollisionEvent:
        return cls(
            rec["sim_id"],
            rec["agent_a"],
            rec["agent_b"],
            int(rec["start_tick"]),
            int(rec["end_tick"]),
            float(rec["min_distance"]),
            Position(float(rec["x"]), float(rec["y"])),
        )


def detect(
    positions: Sequence[tuple[Hashable, Position]], radius: float = DEFAULT_RADIUS
) -> list[tuple[Hashable, Hashable]]:
    """All unordered agent pairs within ``radius`` (inclusive), canonically sorted."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    ids = [aid for aid, _ in positions]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate agent id")
    if len(ids) < 2:
        return []
    xs = np.array([p.x for _, p in positions], dtype=np.float64)
    ys = np.array([p.y for _, p in positions], dtype=np.float64)
    ia, ib, _ = kernels.pairs_within(xs, ys, float(radius))
    pairs = []
    for i, j in zip(ia.tolist(), ib.tolist()):
        a, b = ids[i], ids[j]
        pairs.append((a, b) if a < b else (b, a))
    pairs.sort()
    return pairs


class TickRegression(ValueError):
    pass


@dataclass
class _OpenRuns:
    keys: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    start: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    last: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    dmin: np.ndarray = field(default_factory=lambda: np.empty(0, np.float64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, np.float64))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.float64))

    def take(self, mask: np.ndarray) -> _OpenRuns:
        return _OpenRuns(*(arr[mask] for arr in self.astuple()))

    def astuple(self):
        return (self.keys, self.start, self.last, self.dmin, self.x, self.y)


class PairRunTracker:
    """Merge per-tick pair observations into maximal runs (array core).

    Pairs are integer keys ``a * key_base + b``; a pair absent for more than
    ``bridge`` ticks closes with ``end_tick`` = its last observed tick.
    """

    def __init__(self, key_base: int, bridge: int = 0) -> None:
        if bridge < 0:
            raise ValueError("bridge must be >= 0")
        self.key_base = int(key_base)
        self.bridge = int(bridge)
        self.tick: int | None = None
        self._open = _OpenRuns()

    @property
    def n_open(self) -> int:
        return int(self._open.keys.shape[0])

    def update(self, tick, keys, dist, x, y) -> _OpenRuns:
        """Feed one tick of observations (keys sorted, unique); return closed runs."""
        if self.tick is not None and tick <= self.tick:
            raise TickRegression(f"tick {tick} does not advance past {self.tick}")
        self.tick = tick
        op = self._open
        n_open = op.keys.shape[0]
        pos = np.searchsorted(op.keys, keys)
        matched = np.zeros(keys.shape[0], dtype=bool)
        if n_open:
            inb = pos < n_open
            matched[inb] = op.keys[pos[inb]] == keys[inb]
        mp = pos[matched]
        if mp.size:
            op.last[mp] = tick
            better = dist[matched] < op.dmin[mp]
            bp = mp[better]
            op.dmin[bp] = dist[matched][better]
            op.x[bp] = x[matched][better]
            op.y[bp] = y[matched][better]
        stale = (tick - op.last) > self.bridge
        closed = op.take(stale)
        keep = op.take(~stale)
        new = ~matched
        if new.any():
            nk = keys[new]
            fresh = _OpenRuns(
                nk,
                np.full(nk.shape[0], tick, np.int64),
                np.full(nk.shape[0], tick, np.int64),
                dist[new].astype(np.float64),
                x[new].astype(np.float64),
                y[new].astype(np.float64),
            )
            merged = [np.concatenate((a, b)) for a, b in zip(keep.astuple(), fresh.astuple())]
            order = np.argsort(merged[0], kind="stable")
            keep = _OpenRuns(*(m[order] for m in merged))
        self._open = keep
        return closed

    def close_all(self) -> _OpenRuns:
        closed = self._open
        self._open = _OpenRuns()
        return closed


class DenseRunTracker:
    """Same contract as PairRunTracker for agents numbered ``0..n_agents-1``,
    with per-pair state in flat tables so one tick is one kernel call."""

    def __init__(self, n_agents: int, bridge: int = 0, backend: str | None = None) -> None:
        if bridge < 0:
            raise ValueError("bridge must be >= 0")
        self._step = kernels.get_backend(backend).track_step
        self.key_base = int(n_agents)
        self.bridge = int(bridge)
        self.tick: int | None = None
        size = self.key_base * self.key_base
        self._last = np.full(size, -1, np.int64)
        self._start = np.zeros(size, np.int64)
        self._dmin = np.zeros(size, np.float64)
        self._x = np.zeros(size, np.float64)
        self._y = np.zeros(size, np.float64)
        self._open = np.zeros(size, np.int64)
        self._n_open = 0

    @property
    def n_open(self) -> int:
        return self._n_open

    def update(self, tick, keys, dist, x, y) -> _OpenRuns:
        if self.tick is not None and tick <= self.tick:
            raise TickRegression(f"tick {tick} does not advance past {self.tick}")
        self.tick = tick
        n, *closed = self._step(
            tick, keys, dist, x, y, self.bridge,
            self._last, self._start, self._dmin, self._x, self._y, self._open, self._n_open,
        )
        self._n_open = int(n)
        return _OpenRuns(*closed)

    def close_all(self) -> _OpenRuns:
        tick = (self.tick or 0) + self.bridge + 1
        empty_i = np.empty(0, np.int64)
        empty_f = np.empty(0, np.float64)
        n, *closed = self._step(
            tick, empty_i, empty_f, empty_f, empty_f, self.bridge, *self.tables(),
        )
        self._n_open = int(n)
        return _OpenRuns(*closed)

    def tables(self) -> tuple:
        """Kernel-side state: (last, start, dmin, x, y, open keys, n_open)."""
        return (self._last, self._start, self._dmin, self._x, self._y, self._open, self._n_open)


class ProximityTracker:
    """Contact runs (distance <= ``radius``) and near-miss counting for one
    simulation, agents numbered ``0..n_agents-1``.

    A near miss is a run within ``near_radius`` whose minimum distance
    stayed above ``radius``. With few enough agents a tick is one fused
    kernel call over dense pair tables; otherwise sorted-array trackers.
    """

    DENSE_MAX_AGENTS = 2000

    def __init__(
        self, n_agents: int, radius: float, near_radius: float, bridge: int = 0,
        backend: str | None = None,
    ) -> None:
        if not 0 < radius <= near_radius:
            raise ValueError("need 0 < radius <= near_radius")
        self.key_base = int(n_agents)
        self.radius = float(radius)
        self.near_radius = float(near_radius)
        self.bridge = int(bridge)
        self._k = kernels.get_backend(backend)
        self.dense = n_agents <= self.DENSE_MAX_AGENTS
        if self.dense:
            self._hits = DenseRunTracker(n_agents, bridge, backend)
            self._near = DenseRunTracker(n_agents, bridge, backend)
        else:
            self._hits = PairRunTracker(n_agents, bridge)
            self._near = PairRunTracker(n_agents, bridge)
        self.tick: int | None = None

    def update(self, tick: int, xs, ys, idx) -> tuple[_OpenRuns, int]:
        """Observe agents ``idx`` (ascending) at their positions; return the
        contact runs that closed and the number of near misses that closed."""
        if self.tick is not None and tick <= self.tick:
            raise TickRegression(f"tick {tick} does not advance past {self.tick}")
        self.tick = tick
        idx = np.asarray(idx, dtype=np.int64)
        if not self.dense:
            return self._sparse_update(tick, xs, ys, idx)
        h_n, n_n, *closed, near = self._k.proximity_step(
            tick, xs, ys, idx, self.key_base, self.radius, self.near_radius, self.bridge,
            *self._hits.tables(), *self._near.tables(),
        )
        for tr, n in ((self._hits, h_n), (self._near, n_n)):
            tr._n_open = int(n)
            tr.tick = tick
        return _OpenRuns(*closed), int(near)

    def _sparse_update(self, tick, xs, ys, idx):
        ia, ib, d = self._k.pairs_within(xs[idx], ys[idx], self.near_radius)
        a, b = idx[ia], idx[ib]
        keys = a * self.key_base + b
        mx = 0.5 * (xs[a] + xs[b])
        my = 0.5 * (ys[a] + ys[b])
        hit = d <= self.radius
        closed = self._hits.update(tick, keys[hit], d[hit], mx[hit], my[hit])
        near = self._near.update(tick, keys, d, mx, my)
        return closed, int(np.count_nonzero(near.dmin > self.radius))

    def close_all(self) -> tuple[_OpenRuns, int]:
        closed = self._hits.close_all()
        near = self._near.close_all()
        return closed, int(np.count_nonzero(near.dmin > self.radius))


class CollisionTracker:
    """Turns per-tick pair sets into CollisionEvents for one simulation.

    ``update`` takes ``{(a, b): (distance, location)}`` for the current tick
    and returns the events that closed, sorted by pair.
    """

    def __init__(self, sim_id: str, bridge: int = 0) -> None:
        self.sim_id = sim_id
        self._ids: list[Hashable] = []
        self._index: dict[Hashable, int] = {}
        self._core = PairRunTracker(key_base=1 << 31, bridge=bridge)

    def _idx(self, aid: Hashable) -> int:
        if aid not in self._index:
            self._index[aid] = len(self._ids)
            self._ids.append(aid)
        return self._index[aid]

    def _events(self, runs: _OpenRuns) -> list[CollisionEvent]:
        out = []
        base = self._core.key_base
        for k, s, e, d, x, y in zip(*(a.tolist() for a in runs.astuple())):
            a, b = self._ids[k // base], self._ids[k % base]
            if b < a:
                a, b = b, a
            out.append(CollisionEvent(self.sim_id, a, b, s, e, d, Position(x, y)))
        out.sort(key=lambda ev: (ev.agent_a, ev.agent_b))
        return out

    def update(
        self, tick: int, current: Mapping[tuple, tuple[float, Position]] | Iterable[tuple]
    ) -> list[CollisionEvent]:
        if not isinstance(current, Mapping):
            current = {pair: (0.0, Position(0.0, 0.0)) for pair in current}
        rows = []
        for (a, b), (d, loc) in current.items():
            if b < a:
                a, b = b, a
            rows.append((self._idx(a) * self._core.key_base + self._idx(b), d, loc.x, loc.y))
        rows.sort()
        arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
        keys = np.array([r[0] for r in rows], dtype=np.int64)
        closed = self._core.update(tick, keys, arr[:, 1], arr[:, 2], arr[:, 3])
        return self._events(closed)

    def open_pairs(self) -> list[tuple]:
        base = self._core.key_base
        out = []
        for k in self._core._open.keys.tolist():
            a, b = self._ids[k // base], self._ids[k % base]
            out.append((a, b) if a < b else (b, a))
        return sorted(out)

    def close_all(self) -> list[CollisionEvent]:
        return self._events(self._core.close_all())


@dataclass(frozen=True)
class PoissonModel:
    """Collision counts in a window of length t are Poisson(rate * t).

    ``mu_multi`` is the probability coefficient of simultaneous collisions,
    fixed at zero by the one-collision-at-a-time assumption.
    """

    rate: float
    mu_multi: float = 0.0

    def __post_init__(self) -> None:
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError("rate must be finite and >= 0")
        if self.mu_multi != 0.0:
            raise ValueError("mu_multi is fixed at 0")


def pmf(model: PoissonModel, n: int, t: float) -> float:
    """P(n collisions in a window of length t) = exp(-rate t) (rate t)^n / n!."""
    if n < 0 or int(n) != n:
        raise ValueError("n must be a non-negative integer")
    if t < 0:
        raise ValueError("t must be >= 0")
    n = int(n)
    mean = model.rate * t
    if mean == 0.0:
        return 1.0 if n == 0 else 0.0
    if n > 20:
        return math.exp(-mean + n * math.log(mean) - math.lgamma(n + 1))
    return math.exp(-mean) * mean**n / math.factorial(n)


def estimate_lambda(events: Sized, total_exposure: float) -> PoissonModel:
    """Maximum-likelihood rate: number of events per second of exposure."""
    if not total_exposure > 0:
        raise ValueError("total exposure must be positive")
    return PoissonModel(len(events) / total_exposure)


@dataclass(frozen=True)
class CollisionHistogram:
    window_length: float
    counts: Mapping[int, int]

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("negative window count")
        if self.n_windows < 1:
            raise ValueError("histogram needs at least one window")

    @property
    def n_windows(self) -> int:
        return int(sum(self.counts.values()))

    @property
    def n_events(self) -> int:
        return int(sum(n * c for n, c in self.counts.items()))


def window_counts(times: Iterable[float], window_length: float, total_time: float) -> np.ndarray:
    """Events per complete window of ``window_length`` within [0, total_time)."""
    n_windows = int(math.floor(total_time / window_length + 1e-9))
    t = np.asarray(list(times) if not isinstance(times, np.ndarray) else times, dtype=np.float64)
    idx = np.floor(t / window_length).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < n_windows)]
    return np.bincount(idx, minlength=n_windows)


def histogram(per_window: Iterable[int], window_length: float) -> CollisionHistogram:
    vals, cnts = np.unique(np.asarray(list(per_window), dtype=np.int64), return_counts=True)
    return CollisionHistogram(window_length, dict(zip(vals.tolist(), cnts.tolist())))


@dataclass(frozen=True)
class FitResult:
    chi2: float
    df: int
    p_value: float
    bins: tuple[tuple[int, int | None, float, float], ...]


def fit_test(
    hist: CollisionHistogram, model: PoissonModel, min_expected: float = MIN_EXPECTED
) -> FitResult:
    """Pearson chi-square of window counts against the Poisson pmf.

    Low-expectation cells are pooled into their neighbours; the last bin is
    the open upper tail. Degrees of freedom = bins - 2 (fitted rate plus
    normalisation). Each bin is reported as (lo, hi or None, observed, expected).
    """
    W = hist.n_windows
    if W < MIN_WINDOWS:
        raise FitError(f"too few windows ({W} < {MIN_WINDOWS})")
    mean = model.rate * hist.window_length
    n_max = max(hist.counts)
    top = max(n_max, int(math.ceil(mean + 10 * math.sqrt(mean) + 10)))
    ns = np.arange(top + 1)
    expected = W * _sps.poisson.pmf(ns, mean) if mean > 0 else W * (ns == 0).astype(float)
    tail = W * _sps.poisson.sf(top, mean) if mean > 0 else 0.0
    observed = np.zeros(top + 1)
    for n, c in hist.counts.items():
        observed[n] += c

    bins: list[list] = []
    lo, acc_o, acc_e = 0, 0.0, 0.0
    for n in range(top + 1):
        acc_o += observed[n]
        acc_e += expected[n]
        if acc_e >= min_expected:
            bins.append([lo, n, acc_o, acc_e])
            lo, acc_o, acc_e = n + 1, 0.0, 0.0
    acc_e += tail
    if bins and acc_e < min_expected:
        bins[-1][1] = None
        bins[-1][2] += acc_o
        bins[-1][3] += acc_e
    else:
        bins.append([lo, None, acc_o, acc_e])
    if len(bins) < 3:
        raise FitError(f"too few bins ({len(bins)}) after pooling")
    obs = np.array([b[2] for b in bins])
    exp = np.array([b[3] for b in bins])
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    df = len(bins) - 2
    p = float(_sps.chi2.sf(chi2, df))
    return FitResult(chi2, df, p, tuple((b[0], b[1], float(b[2]), float(b[3])) for b in bins))


def poisson_arrivals(rate: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Event times in [0, duration) from exponential inter-arrival gaps."""
    if rate <= 0:
        return np.empty(0)
    out = []
    t = 0.0
    block = max(16, int(rate * duration * 1.1) + 16)
    while t < duration:
        gaps = rng.exponential(1.0 / rate, size=block)
        times = t + np.cumsum(gaps)
        out.append(times)
        t = float(times[-1])
    times = np.concatenate(out)
    return times[times < duration]
