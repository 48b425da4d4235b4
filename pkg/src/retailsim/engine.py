"""Deterministic fixed-tick simulation of customers shopping in a store.

Each customer spawns at the entrance, walks shortest aisle paths to its bays
(dwelling at each), walks to a randomly chosen till, queues FIFO, is served,
and walks to the exit. Every tick, pairs within the collision radius are
recorded; pairs within 1.5x the radius that never collide are near misses.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import uuid
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .baskets import load_report
from .collisions import CollisionEvent, ProximityTracker
from .features import FeatureFlags
from .layout import Position, StoreLayout

SIM_NAMESPACE = uuid.UUID("5b0e2c4e-8f55-4a55-9a1e-3f1f7d2f6c10")

# agent states
PENDING, SHOPPING, QUEUING, CHECKOUT, DESPAWNED = 0, 1, 2, 3, 4
STATE_NAMES = {
    PENDING: "Spawned",
    SHOPPING: "Shopping",
    QUEUING: "Queuing",
    CHECKOUT: "Checkout",
    DESPAWNED: "Despawned",
}
ALLOWED_TRANSITIONS = frozenset(
    {
        ("Spawned", "Shopping"),
        ("Shopping", "Queuing"),
        ("Queuing", "Checkout"),
        ("Checkout", "Despawned"),
    }
)
# timer columns
T_SHOPPING, T_IDLE, T_WAITING, T_CHECKOUT = 0, 1, 2, 3

# leg goals
GOAL_BAY, GOAL_TILL, GOAL_EXIT = 0, 1, 2


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    tick_length: float = 0.1
    agents_total: int = 50
    spawn_interval: float = 4.0
    bays_per_agent: int = 5
    base_speed: float = 1.2
    collision_radius: float = 2.0
    features: FeatureFlags = field(default_factory=FeatureFlags)
    trajectory_source: str = "random"
    cluster_report: str | None = None
    max_sim_time: float = 14400.0
    dwell_time: float = 5.0
    items_per_bay: int = 1
    checkout_base: float = 30.0
    checkout_per_item: float = 1.0
    speed_spread: float = 0.2
    item_speed_penalty: float = 0.05
    min_speed_factor: float = 0.5
    avoid_nodes: tuple[str, ...] = ()
    avoid_penalty: float = 5.0
    near_miss_factor: float = 1.5
    patience: float = 10.0
    bridge_ticks: int = 0
    frame_every: int = 10
    at_risk_threshold: float = 15.0
    window_length: float = 60.0

    def __post_init__(self) -> None:
        checks = [
            (self.tick_length > 0, "tick_length must be > 0"),
            (self.spawn_interval > 0, "spawn_interval must be > 0"),
            (self.agents_total >= 1, "agents_total must be >= 1"),
            (self.bays_per_agent >= 1, "bays_per_agent must be >= 1"),
            (self.base_speed > 0, "base_speed must be > 0"),
            (self.collision_radius > 0, "collision_radius must be > 0"),
            (self.max_sim_time >= 0, "max_sim_time must be >= 0"),
            (self.dwell_time >= 0, "dwell_time must be >= 0"),
            (self.items_per_bay >= 0, "items_per_bay must be >= 0"),
            (self.checkout_base >= 0 and self.checkout_per_item >= 0, "checkout times must be >= 0"),
            (0 <= self.speed_spread < 1, "speed_spread must be in [0, 1)"),
            (self.item_speed_penalty >= 0, "item_speed_penalty must be >= 0"),
            (0 < self.min_speed_factor <= 1, "min_speed_factor must be in (0, 1]"),
            (self.avoid_penalty >= 1, "avoid_penalty must be >= 1"),
            (self.near_miss_factor >= 1, "near_miss_factor must be >= 1"),
            (self.patience >= 0, "patience must be >= 0"),
            (self.bridge_ticks >= 0, "bridge_ticks must be >= 0"),
            (self.frame_every >= 1, "frame_every must be >= 1"),
            (self.window_length > 0, "window_length must be > 0"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (
                self.trajectory_source in ("random", "clustered"),
                "trajectory_source must be 'random' or 'clustered'",
            ),
            (
                self.trajectory_source != "clustered" or bool(self.cluster_report),
                "clustered trajectories need cluster_report",
            ),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @classmethod
    def from_dict(cls, data: Mapping) -> SimConfig:
        data = dict(data)
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        src = data.get("trajectory_source")
        if isinstance(src, Mapping):
            if set(src) != {"clustered"}:
                raise ValueError("trajectory_source object must be {'clustered': <report path>}")
            data["trajectory_source"] = "clustered"
            data["cluster_report"] = src["clustered"]
        kwargs = {}
        for name, value in data.items():
            kwargs[name] = _coerce(name, value, known[name].default)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, FeatureFlags):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(name: str, value, default):
    if name == "features":
        if isinstance(value, FeatureFlags):
            return value
        if not isinstance(value, Mapping):
            raise TypeError(f"{name} must be an object of flags")
        return FeatureFlags.from_dict(value)
    if name == "avoid_nodes":
        if isinstance(value, str) or not isinstance(value, (list, tuple)):
            raise TypeError(f"{name} must be a list of node ids")
        return tuple(str(v) for v in value)
    if name == "cluster_report":
        if value is not None and not isinstance(value, str):
            raise TypeError(f"{name} must be a path string")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"{name} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not (
            isinstance(value, int) or (isinstance(value, float) and value.is_integer())
        ):
            raise TypeError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{name} must be a number, got {value!r}")
        if not math.isfinite(value):
            raise TypeError(f"{name} must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"{name} must be a string, got {value!r}")
        return value
    return value


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return SimConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class MetricsFrame:
    tick: int
    time: float
    in_store: int
    shopping: int
    queuing: int
    at_checkout: int
    idle: int
    spawned: int
    despawned: int
    near_misses: int
    location_visits: Mapping[str, int]

    def to_record(self) -> dict:
        return {
            "tick": self.tick,
            "in_store": self.in_store,
            "shopping": self.shopping,
            "queuing": self.queuing,
            "at_checkout": self.at_checkout,
            "idle": self.idle,
            "near_misses": self.near_misses,
            "spawned": self.spawned,
            "despawned": self.despawned,
            "location_visits": dict(self.location_visits),
        }


@dataclass
class SimResult:
    sim_id: str
    config_hash: str
    events: list[CollisionEvent]
    timers: list[dict]
    frames: list[MetricsFrame]
    half_empty_customerwise_time: float | None
    at_risk_agents: list[int]
    truncated: bool
    ticks: int
    duration: float
    near_misses: int
    location_visits: dict[str, int]
    transitions: dict[str, int]
    inert_features: list[str]
    records: list[dict]

    @property
    def total_collisions(self) -> int:
        return len(self.events)

    def to_jsonl(self) -> str:
        return "".join(_dumps(r) + "\n" for r in self.records)


def _dumps(rec: Mapping) -> str:
    return json.dumps(rec, separators=(",", ":"))


def half_empty_time(frames: Sequence[MetricsFrame], peak: int) -> float | None:
    """Time of the first frame at or below half of ``peak`` occupancy, counted
    from the first frame that reached ``peak``; None if it never happens."""
    if not frames:
        raise ValueError("no frames")
    reached = False
    for fr in frames:
        if not reached:
            reached = fr.in_store >= peak
            continue
        if fr.in_store <= peak / 2:
            return fr.time
    return None


def assign_trajectory(
    rng: np.random.Generator,
    bay_ids: Sequence[str],
    bays_per_agent: int,
    clusters: Sequence[tuple[float, Sequence[str]]] | None = None,
) -> list[str]:
    """Bays an agent must visit, in order.

    Random mode draws distinct bays uniformly. Clustered mode draws a
    cluster by weight, takes its sequence truncated to ``bays_per_agent`` and
    tops it up with distinct random bays if it is short.
    """
    bay_ids = sorted(bay_ids)
    if len(bay_ids) < bays_per_agent:
        raise SimulationError(
            f"layout has {len(bay_ids)} bays, agents need {bays_per_agent}"
        )
    if not clusters:
        pick = rng.choice(len(bay_ids), size=bays_per_agent, replace=False)
        return [bay_ids[i] for i in pick]
    weights = np.array([w for w, _ in clusters], dtype=np.float64)
    ci = int(rng.choice(len(clusters), p=weights / weights.sum()))
    seq = list(clusters[ci][1])[:bays_per_agent]
    need = bays_per_agent - len(seq)
    if need:
        rest = [b for b in bay_ids if b not in seq]
        extra = rng.choice(len(rest), size=need, replace=False)
        seq.extend(rest[i] for i in extra)
    return seq


def choose_till(rng: np.random.Generator, tills: Sequence[str]) -> str:
    return tills[int(rng.integers(len(tills)))]


def default_sim_id(layout: StoreLayout, config: SimConfig) -> str:
    return str(uuid.uuid5(SIM_NAMESPACE, f"{layout.id}/{config.config_hash()}"))


class _Simulation:
    def __init__(self, layout, config, sim_id, sink, context, backend):
        self.layout = layout
        self.cfg = config
        self.sim_id = sim_id
        self.sink = sink
        self.context = dict(context or {})
        self.k = kernels.get_backend(backend)
        self.records: list[dict] = []

        self.node_ids = sorted(layout.nodes)
        self.node_index = {n: i for i, n in enumerate(self.node_ids)}
        self.node_x = np.array([layout.nodes[n].x for n in self.node_ids])
        self.node_y = np.array([layout.nodes[n].y for n in self.node_ids])
        self.bay_ids = layout.bay_ids
        self.bay_node = {b.id: b.node for b in layout.bays}
        self.tills = list(layout.tills)

        self.clusters = None
        if config.trajectory_source == "clustered":
            self.clusters = load_report(config.cluster_report)
            known = set(self.bay_ids)
            for _, seq in self.clusters:
                bad = [b for b in seq if b not in known]
                if bad:
                    raise SimulationError(f"cluster report names unknown bay {bad[0]!r}")
            if not any(w > 0 for w, _ in self.clusters):
                raise SimulationError("cluster report has no positive weights")

        flags = config.features
        self.inert = flags.warn_inert()
        self.distancing = not flags.violate_social_distancing
        self.avoid = config.avoid_nodes if flags.avoid_aisles else ()
        dt = config.tick_length
        self.dt = dt
        self.dwell_ticks = int(round(config.dwell_time / dt))
        self.max_ticks = int(math.floor(config.max_sim_time / dt + 1e-9))

        N = config.agents_total
        self.N = N
        self.spawn_tick = np.array(
            [int(round(i * config.spawn_interval / dt)) for i in range(N)], dtype=np.int64
        )
        L = len(self.node_ids) + 1
        self.paths = np.zeros((N, L), dtype=np.int64)
        self.path_len = np.zeros(N, dtype=np.int64)
        self.seg = np.zeros(N, dtype=np.int64)
        self.off = np.zeros(N, dtype=np.float64)
        self.moving = np.zeros(N, dtype=np.bool_)
        self.arrived = np.zeros(N, dtype=np.bool_)
        self.paused = np.zeros(N, dtype=np.bool_)
        self.xs = np.zeros(N, dtype=np.float64)
        self.ys = np.zeros(N, dtype=np.float64)
        self.speed = np.zeros(N, dtype=np.float64)
        self.own_speed = np.zeros(N, dtype=np.float64)
        self.state = np.full(N, PENDING, dtype=np.int8)
        self.countdown = np.zeros(N, dtype=np.int64)
        self.timed = np.zeros(N, dtype=np.bool_)
        self.timer_ticks = np.zeros((N, 4), dtype=np.int64)
        self.despawn_tick = np.full(N, -1, dtype=np.int64)
        self.basket = np.zeros(N, dtype=np.int64)
        self.goal = np.zeros(N, dtype=np.int8)
        self.node_at = np.zeros(N, dtype=np.int64)
        self.till_of: list[str | None] = [None] * N
        self.target_bay: list[str | None] = [None] * N
        self.todo: list[list[str]] = [[] for _ in range(N)]
        self.rngs: list[np.random.Generator | None] = [None] * N

        self.wait = np.zeros(N, dtype=np.int64)
        self.patience = int(round(config.patience / dt))
        self.queues = {t: deque() for t in self.tills}
        self.serving: dict[str, int | None] = {t: None for t in self.tills}
        self.visits = {b: 0 for b in self.bay_ids}
        self.transitions: Counter = Counter()
        self.next_spawn = 0
        self.n_gone = 0
        self.near_misses = 0
        self.events: list[CollisionEvent] = []
        self.frames: list[MetricsFrame] = []

        radius = config.collision_radius
        self.radius = radius
        self.prox = ProximityTracker(
            N, radius, radius * config.near_miss_factor, config.bridge_ticks, backend
        )

    # ------------------------------------------------------------ records

    def emit(self, kind: str, payload: dict) -> None:
        rec = {"type": kind, "sim_id": self.sim_id, **self.context, **payload}
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)

    def _transition(self, i: int, new: int) -> None:
        self.transitions[f"{STATE_NAMES[int(self.state[i])]}->{STATE_NAMES[new]}"] += 1
        self.state[i] = new

    # ------------------------------------------------------------ agents

    def _effective_speed(self, i: int) -> float:
        v = self.own_speed[i]
        if self.cfg.features.speed_penalty_per_item:
            factor = 1.0 - self.cfg.item_speed_penalty * self.basket[i]
            v *= max(self.cfg.min_speed_factor, factor)
        return v

    def _start_leg(self, i: int, goal_node: str, goal: int, tick: int) -> None:
        here = self.node_ids[self.node_at[i]]
        r = self.layout.route(here, goal_node, avoid=self.avoid, penalty=self.cfg.avoid_penalty)
        self.goal[i] = goal
        if len(r.nodes) == 1:
            self._arrive(i, tick)
            return
        n = len(r.nodes)
        self.paths[i, :n] = [self.node_index[v] for v in r.nodes]
        self.path_len[i] = n
        self.seg[i] = 0
        self.off[i] = 0.0
        self.moving[i] = True

    def _spawn(self, i: int, tick: int) -> None:
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, i])
        self.rngs[i] = rng
        self.todo[i] = assign_trajectory(rng, self.bay_ids, cfg.bays_per_agent, self.clusters)
        base = cfg.base_speed
        if cfg.features.variable_speed:
            base *= 1.0 + cfg.speed_spread * float(rng.uniform(-1.0, 1.0))
        self.own_speed[i] = base
        self.speed[i] = self._effective_speed(i)
        s = self.node_index[self.layout.spawn]
        self.node_at[i] = s
        self.xs[i] = self.node_x[s]
        self.ys[i] = self.node_y[s]
        self._transition(i, SHOPPING)
        self._next_goal(i, tick)

    def _next_goal(self, i: int, tick: int) -> None:
        if self.todo[i]:
            bay = self.todo[i].pop(0)
            self.target_bay[i] = bay
            self._start_leg(i, self.bay_node[bay], GOAL_BAY, tick)
        else:
            till = choose_till(self.rngs[i], self.tills)
            self.till_of[i] = till
            self._start_leg(i, till, GOAL_TILL, tick)

    def _arrive(self, i: int, tick: int) -> None:
        self.moving[i] = False
        if self.path_len[i] > 0:
            self.node_at[i] = self.paths[i, self.path_len[i] - 1]
            self.path_len[i] = 0
        goal = self.goal[i]
        if goal == GOAL_BAY:
            self.visits[self.target_bay[i]] += 1
            self.basket[i] += self.cfg.items_per_bay
            self.speed[i] = self._effective_speed(i)
            if self.dwell_ticks > 0:
                self.countdown[i] = self.dwell_ticks
                self.timed[i] = True
            else:
                self._next_goal(i, tick)
        elif goal == GOAL_TILL:
            self._transition(i, QUEUING)
            self.queues[self.till_of[i]].append(i)
        else:
            self._transition(i, DESPAWNED)
            self.despawn_tick[i] = tick
            self.n_gone += 1

    def _finish_timer(self, i: int, tick: int) -> None:
        self.timed[i] = False
        if self.state[i] == CHECKOUT:
            till = self.till_of[i]
            self.serving[till] = None
            self._start_leg(i, self.layout.despawn, GOAL_EXIT, tick)
        else:
            self._next_goal(i, tick)

    def _serve_queues(self) -> None:
        cfg = self.cfg
        for till in self.tills:
            if self.serving[till] is None and self.queues[till]:
                i = self.queues[till].popleft()
                self.serving[till] = i
                self._transition(i, CHECKOUT)
                service = cfg.checkout_base + cfg.checkout_per_item * self.basket[i]
                self.countdown[i] = int(round(service / self.dt))
                self.timed[i] = True

    # ------------------------------------------------------------ collisions

    def _runs_to_events(self, runs) -> list[CollisionEvent]:
        out = []
        for key, s, e, d, x, y in zip(*(a.tolist() for a in runs.astuple())):
            out.append(
                CollisionEvent(self.sim_id, key // self.N, key % self.N, s, e, d, Position(x, y))
            )
        return out

    def _collide(self, tick: int, present: np.ndarray) -> None:
        closed, near = self.prox.update(tick, self.xs, self.ys, np.flatnonzero(present))
        self._emit_events(self._runs_to_events(closed))
        self.near_misses += near

    def _emit_events(self, events: list[CollisionEvent]) -> None:
        for ev in events:
            self.events.append(ev)
            rec = ev.to_record()
            del rec["sim_id"]
            self.emit("collision", rec)

    # ------------------------------------------------------------ metrics

    def _frame(self, tick: int, counts) -> None:
        in_store, shopping, queuing, at_checkout, idle = (int(c) for c in counts)
        fr = MetricsFrame(
            tick=tick,
            time=tick * self.dt,
            in_store=in_store,
            shopping=shopping,
            queuing=queuing,
            at_checkout=at_checkout,
            idle=idle,
            spawned=self.next_spawn,
            despawned=self.n_gone,
            near_misses=self.near_misses,
            location_visits=dict(self.visits),
        )
        self.frames.append(fr)
        self.emit("frame", fr.to_record())

    # ------------------------------------------------------------ main loop

    def run(self) -> SimResult:
        cfg = self.cfg
        tick = -1
        last_frame = -1
        finished = False
        counts = (0, 0, 0, 0, 0)
        for tick in range(self.max_ticks):
            while self.next_spawn < self.N and self.spawn_tick[self.next_spawn] <= tick:
                self._spawn(self.next_spawn, tick)
                self.next_spawn += 1

            self.k.advance(
                self.node_x, self.node_y, self.paths, self.path_len, self.seg, self.off,
                self.moving, self.speed, self.dt, self.distancing, self.radius,
                self.wait, self.patience, self.xs, self.ys, self.arrived, self.paused,
            )

            done = self.k.countdown(self.timed, self.countdown)

            for i in np.flatnonzero(self.arrived).tolist():
                self._arrive(i, tick)
            for i in done.tolist():
                self._finish_timer(i, tick)
            self._serve_queues()

            self._collide(tick, (self.state == SHOPPING) | (self.state == CHECKOUT))

            counts = self.k.accumulate_timers(self.state, self.paused, self.timer_ticks)

            finished = self.n_gone == self.N
            if tick % cfg.frame_every == 0 or finished:
                self._frame(tick, counts)
                last_frame = tick
            if finished:
                break

        if tick >= 0 and last_frame != tick:
            self._frame(tick, counts)
        closed, near = self.prox.close_all()
        self._emit_events(self._runs_to_events(closed))
        self.near_misses += near
        return self._result(tick, truncated=not finished)

    def _result(self, last_tick: int, truncated: bool) -> SimResult:
        cfg = self.cfg
        dt = self.dt
        ticks = last_tick + 1
        exposure = np.zeros(self.N)
        for ev in self.events:
            exposure[ev.agent_a] += ev.duration_ticks * dt
            exposure[ev.agent_b] += ev.duration_ticks * dt
        at_risk = [int(i) for i in np.flatnonzero(exposure >= cfg.at_risk_threshold)]

        timers = []
        for i in range(self.next_spawn):
            end = self.despawn_tick[i] if self.despawn_tick[i] >= 0 else ticks
            tt = self.timer_ticks[i]
            timers.append(
                {
                    "agent": i,
                    "checkout": int(tt[T_CHECKOUT]) * dt,
                    "shopping": int(tt[T_SHOPPING]) * dt,
                    "idle": int(tt[T_IDLE]) * dt,
                    "waiting": int(tt[T_WAITING]) * dt,
                    "total": int(end - self.spawn_tick[i]) * dt,
                }
            )
        half_empty = None
        if self.frames:
            peak = max(f.in_store for f in self.frames)
            if peak > 0:
                half_empty = half_empty_time(self.frames, peak)
        summary = {
            "config_hash": self.cfg.config_hash(),
            "timers": timers,
            "at_risk": at_risk,
            "half_empty_s": half_empty,
            "truncated": truncated,
            "ticks": ticks,
            "duration_s": ticks * dt,
            "tick_length": dt,
            "window_length": cfg.window_length,
            "collisions": len(self.events),
            "near_misses": self.near_misses,
            "spawned": self.next_spawn,
            "despawned": self.n_gone,
            "location_visits": dict(self.visits),
            "transitions": dict(sorted(self.transitions.items())),
            "inert_features": self.inert,
        }
        self.emit("summary", summary)
        return SimResult(
            sim_id=self.sim_id,
            config_hash=summary["config_hash"],
            events=self.events,
            timers=timers,
            frames=self.frames,
            half_empty_customerwise_time=half_empty,
            at_risk_agents=at_risk,
            truncated=truncated,
            ticks=ticks,
            duration=ticks * dt,
            near_misses=self.near_misses,
            location_visits=dict(self.visits),
            transitions=summary["transitions"],
            inert_features=self.inert,
            records=self.records,
        )


def run(
    layout: StoreLayout,
    config: SimConfig,
    *,
    sim_id: str | None = None,
    sink: Callable[[dict], None] | None = None,
    context: Mapping | None = None,
    backend: str | None = None,
) -> SimResult:
    """Run one simulation to completion (or ``max_sim_time``).

    ``sink`` receives each output record as soon as it is produced;
    ``context`` keys (e.g. experiment and job ids) are stamped on every
    record. Identical (layout, config) give byte-identical records.
    """
    for n in config.avoid_nodes:
        if n not in layout.nodes:
            raise SimulationError(f"avoid_nodes names unknown node {n!r}")
    sim_id = sim_id or default_sim_id(layout, config)
    return _Simulation(layout, config, sim_id, sink, context, backend).run()
