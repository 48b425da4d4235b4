"""Parameter sweeps: manifest -> jobs -> seeded simulations -> JSONL sinks.

A manifest names a layout, a grid of SimConfig overrides, a replicate count
and a base seed. ``expand`` turns it into one job per grid point with
deterministic seeds and name-based UUIDs; ``execute`` runs every simulation
on a bounded process pool, each streaming records to its own file under
``<sink>/<experiment_id>/<job_id>/<sim_id>.jsonl``; ``aggregate`` reads the
sink back, checks lineage and summarises each job.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
import os
import sys
import time
import uuid
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from . import collisions, stats
from .engine import SimConfig
from .engine import run as run_sim
from .layout import bundled_layout_path, load_layout

EXPERIMENT_NAMESPACE = uuid.UUID("0b6f1d1e-3c1a-5d8e-9a57-6e4a2c7d9f21")
JOBS_FILE = "jobs.jsonl"
FAILURES_FILE = "failures.jsonl"
MERGED_FILE = "merged.jsonl"
# default target half-width, as a multiple of the observed sigma
DEFAULT_HALFWIDTH_SIGMA = 0.25

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

_CONFIG_FIELDS = frozenset(f.name for f in dataclasses.fields(SimConfig))


class ExperimentError(RuntimeError):
    """Fatal experiment problem: bad manifest, unreadable layout, sink I/O."""


@dataclass(frozen=True)
class ExperimentManifest:
    experiment_id: str
    layout: str
    grid: Mapping[str, list]
    replicates: int = 1
    base_seed: int = 0
    parallelism: int = 1
    sink: str = "runs"
    # sample-size check: absolute half-width on collision counts, or None
    # for DEFAULT_HALFWIDTH_SIGMA * observed sigma
    halfwidth: float | None = None
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if not self.experiment_id or "/" in self.experiment_id:
            raise ValueError("experiment_id must be a non-empty name without '/'")
        if not self.grid:
            raise ValueError("grid must not be empty")
        for name, values in self.grid.items():
            if name not in _CONFIG_FIELDS:
                raise ValueError(f"grid parameter {name!r} is not a SimConfig field")
            if name == "seed":
                raise ValueError("seeds are derived from base_seed; 'seed' cannot be a grid parameter")
            if not isinstance(values, list) or not values:
                raise ValueError(f"grid parameter {name!r} needs a non-empty list of values")
        if isinstance(self.replicates, bool) or not isinstance(self.replicates, int) or self.replicates < 1:
            raise ValueError("replicates must be an integer >= 1")
        if isinstance(self.parallelism, bool) or not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise ValueError("parallelism must be an integer >= 1")
        if isinstance(self.base_seed, bool) or not isinstance(self.base_seed, int):
            raise ValueError("base_seed must be an integer")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must fit in 64 bits")
        if self.halfwidth is not None and not self.halfwidth > 0:
            raise ValueError("halfwidth must be positive")
        stats.z_from_alpha(self.alpha)

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: str | Path | None = None) -> ExperimentManifest:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown manifest field(s): {', '.join(unknown)}")
        for key in ("experiment_id", "layout", "grid"):
            if key not in data:
                raise ValueError(f"manifest is missing {key!r}")
        data = dict(data)
        if not isinstance(data["grid"], Mapping):
            raise ValueError("grid must be an object of parameter -> list of values")
        data["grid"] = {k: list(v) if isinstance(v, (list, tuple)) else v for k, v in data["grid"].items()}
        if base_dir is not None:
            data.setdefault("sink", cls.sink)
            for key in ("layout", "sink"):
                if key in data and not Path(data[key]).is_absolute():
                    data[key] = str(Path(base_dir) / data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "layout": self.layout,
            "grid": {k: list(v) for k, v in self.grid.items()},
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "parallelism": self.parallelism,
            "sink": self.sink,
            "halfwidth": self.halfwidth,
            "alpha": self.alpha,
        }

    @property
    def experiment_dir(self) -> Path:
        return Path(self.sink) / self.experiment_id


def load_manifest(path: str | Path) -> ExperimentManifest:
    """Read a JSON manifest; relative layout and sink paths are taken
    relative to the manifest's directory."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ExperimentError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ExperimentError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(data, Mapping):
        raise ExperimentError("manifest must be a JSON object")
    try:
        return ExperimentManifest.from_dict(data, base_dir=path.parent)
    except (ValueError, TypeError) as exc:
        raise ExperimentError(str(exc)) from None


def resolve_layout_path(spec: str) -> Path:
    """A layout file path, or the name of a bundled layout such as grid_3x3."""
    p = Path(spec)
    if p.exists():
        return p
    try:
        bundled = bundled_layout_path(p.name.removesuffix(".layout.json"))
    except (ValueError, FileNotFoundError):
        bundled = None
    if bundled is not None and bundled.exists():
        return bundled
    raise ExperimentError(f"layout not found: {spec}")


# ------------------------------------------------------------------ expand


@dataclass(frozen=True)
class SimSpec:
    sim_id: str
    replicate: int
    seed: int


@dataclass(frozen=True)
class JobRecord:
    experiment_id: str
    job_id: str
    params: Mapping[str, Any]
    config: SimConfig  # seed left at its default; see config_for
    sims: tuple[SimSpec, ...]

    def config_for(self, sim: SimSpec) -> SimConfig:
        return dataclasses.replace(self.config, seed=sim.seed)

    def to_record(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "job_id": self.job_id,
            "params": dict(self.params),
            "config": self.config.to_dict(),
            "sims": [dataclasses.asdict(s) for s in self.sims],
        }


def derive_seed(base_seed: int, job_id: str, replicate: int) -> int:
    """64-bit seed from sha256 of (base seed, job id, replicate index)."""
    blob = f"{base_seed}/{job_id}/{replicate}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def sim_uuid(experiment_id: str, job_id: str, replicate: int) -> str:
    return str(uuid.uuid5(EXPERIMENT_NAMESPACE, f"{experiment_id}/{job_id}/{replicate}"))


def expand(manifest: ExperimentManifest) -> list[JobRecord]:
    """One job per point of the Cartesian grid, parameters ordered by name
    and values in listed order; ids, seeds and UUIDs are deterministic."""
    names = sorted(manifest.grid)
    jobs = []
    for i, values in enumerate(itertools.product(*(manifest.grid[n] for n in names))):
        params = dict(zip(names, values))
        try:
            config = SimConfig.from_dict(params)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"grid point {params}: {exc}") from None
        job_id = f"job-{i:04d}"
        sims = tuple(
            SimSpec(
                sim_uuid(manifest.experiment_id, job_id, r),
                r,
                derive_seed(manifest.base_seed, job_id, r),
            )
            for r in range(manifest.replicates)
        )
        jobs.append(JobRecord(manifest.experiment_id, job_id, params, config, sims))
    return jobs


# ----------------------------------------------------------------- execute


@dataclass(frozen=True)
class _Task:
    layout_path: str
    out_path: str
    experiment_id: str
    job_id: str
    sim_id: str
    config: dict


@dataclass
class SimOutcome:
    sim_id: str
    job_id: str
    ok: bool
    truncated: bool = False
    ticks: int = 0
    elapsed: float = 0.0
    error: str | None = None

    @property
    def ticks_per_second(self) -> float:
        return self.ticks / self.elapsed if self.elapsed > 0 else math.inf


@dataclass
class ExecutionReport:
    experiment_id: str
    outcomes: list[SimOutcome] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def failed(self) -> list[SimOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def truncated(self) -> list[SimOutcome]:
        return [o for o in self.outcomes if o.ok and o.truncated]

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failed else EXIT_OK


@lru_cache(maxsize=8)
def _layout(path: str):
    return load_layout(path)


def _warm_worker(layout_path: str) -> None:
    """Pool initializer: load the layout and compiled kernels once per
    process, so per-sim timings measure simulation only."""
    run_sim(_layout(layout_path), SimConfig(agents_total=2, max_sim_time=5.0))


def _run_task(task: _Task) -> SimOutcome:
    out = Path(task.out_path)
    try:
        layout = _layout(task.layout_path)
        config = SimConfig.from_dict(task.config)
        context = {"experiment_id": task.experiment_id, "job_id": task.job_id}
        # line-buffered: each record reaches the file as it is produced
        with open(out, "w", encoding="utf-8", buffering=1) as fh:
            def sink(rec: dict) -> None:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

            t0 = time.perf_counter()
            res = run_sim(layout, config, sim_id=task.sim_id, sink=sink, context=context)
            elapsed = time.perf_counter() - t0
        return SimOutcome(task.sim_id, task.job_id, True, res.truncated, res.ticks, elapsed)
    except Exception as exc:  # noqa: BLE001 - isolate any per-sim failure
        return SimOutcome(task.sim_id, task.job_id, False, error=f"{type(exc).__name__}: {exc}")


def _stderr_progress(line: str) -> None:
    print(line, file=sys.stderr, flush=True)


def _append_jsonl(path: Path, recs: Iterable[Mapping]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in recs:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def execute(
    manifest: ExperimentManifest,
    jobs: list[JobRecord] | None = None,
    parallelism: int | None = None,
    *,
    progress: Callable[[str], None] | None = _stderr_progress,
    progress_interval: float = 2.0,
) -> ExecutionReport:
    """Run every simulation of ``jobs`` (default: ``expand(manifest)``).

    At most ``parallelism`` simulations run at once. A simulation that raises
    is recorded in failures.jsonl and never affects its siblings. Sink I/O
    problems and an unreadable layout raise ExperimentError.
    """
    jobs = expand(manifest) if jobs is None else jobs
    parallelism = manifest.parallelism if parallelism is None else parallelism
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    report = ExecutionReport(manifest.experiment_id)
    layout_path = str(resolve_layout_path(manifest.layout).resolve())
    try:
        _layout(layout_path)
    except Exception as exc:
        raise ExperimentError(f"cannot load layout {manifest.layout}: {exc}") from None

    root = manifest.experiment_dir
    tasks = []
    try:
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        with open(root / JOBS_FILE, "w", encoding="utf-8") as fh:
            for job in jobs:
                fh.write(json.dumps(job.to_record(), separators=(",", ":")) + "\n")
        (root / FAILURES_FILE).unlink(missing_ok=True)
        (root / MERGED_FILE).unlink(missing_ok=True)
        for job in jobs:
            jdir = root / job.job_id
            jdir.mkdir(exist_ok=True)
            for sim in job.sims:
                tasks.append(
                    _Task(
                        layout_path,
                        str(jdir / f"{sim.sim_id}.jsonl"),
                        manifest.experiment_id,
                        job.job_id,
                        sim.sim_id,
                        job.config_for(sim).to_dict(),
                    )
                )
    except OSError as exc:
        raise ExperimentError(f"sink not writable: {exc}") from None

    total = len(tasks)
    t0 = time.perf_counter()
    last_report = t0

    def tick_progress(running: int, force: bool = False) -> None:
        nonlocal last_report
        now = time.perf_counter()
        if progress is None or not (force or now - last_report >= progress_interval):
            return
        last_report = now
        n_failed = len(report.failed)
        progress(
            f"[{manifest.experiment_id}] done={len(report.outcomes) - n_failed} "
            f"running={running} failed={n_failed} total={total}"
        )

    def record(outcome: SimOutcome) -> None:
        report.outcomes.append(outcome)
        if not outcome.ok:
            try:
                _append_jsonl(
                    root / FAILURES_FILE,
                    [{"sim_id": outcome.sim_id, "job_id": outcome.job_id, "error": outcome.error}],
                )
            except OSError as exc:
                raise ExperimentError(f"sink not writable: {exc}") from None

    if total and parallelism == 1:
        _warm_worker(layout_path)
        for task in tasks:
            tick_progress(1)
            record(_run_task(task))
    elif total:
        with ProcessPoolExecutor(
            max_workers=min(parallelism, total),
            initializer=_warm_worker,
            initargs=(layout_path,),
        ) as pool:
            pending: dict[Future, _Task] = {pool.submit(_run_task, t): t for t in tasks}
            while pending:
                done, _ = wait(pending, timeout=progress_interval, return_when=FIRST_COMPLETED)
                for fut in done:
                    task = pending.pop(fut)
                    try:
                        outcome = fut.result()
                    except Exception as exc:  # worker process died
                        outcome = SimOutcome(
                            task.sim_id, task.job_id, False, error=f"{type(exc).__name__}: {exc}"
                        )
                    record(outcome)
                tick_progress(min(parallelism, len(pending)))
    report.wall_time = time.perf_counter() - t0
    tick_progress(0, force=True)
    return report


# --------------------------------------------------------------- aggregate


@dataclass
class JobAggregate:
    experiment_id: str
    job_id: str
    params: Mapping[str, Any]
    n_sims: int
    n_summaries: int
    collisions_mean: float | None
    collisions_std: float | None
    time_in_store_mean: float | None
    lambda_hat: float | None
    n_windows: int
    fit_p_value: float | None
    fit_skipped: str | None
    sample_size: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AggregateReport:
    jobs: list[JobAggregate] = field(default_factory=list)
    n_records: int = 0
    orphans: list[dict] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "jobs": [j.to_dict() for j in self.jobs],
            "n_records": self.n_records,
            "orphans": self.orphans,
            "problems": self.problems,
            "failures": self.failures,
            "missing": self.missing,
        }


def _experiment_dirs(sink: Path) -> list[Path]:
    if (sink / JOBS_FILE).exists():
        return [sink]
    return sorted(p.parent for p in sink.glob(f"*/{JOBS_FILE}"))


def _read_jsonl(path: Path, problems: list[str]) -> list[dict]:
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    problems.append(f"{path}:{n}: corrupt record")
                    continue
                if not isinstance(rec, dict):
                    problems.append(f"{path}:{n}: record is not an object")
                    continue
                out.append(rec)
    except OSError as exc:
        problems.append(f"{path}: {exc}")
    return out


def _sample_size(counts: list[float], replicates: int, halfwidth: float | None, alpha: float) -> dict:
    z = stats.z_from_alpha(alpha)
    out = {"z": z, "sigma": None, "halfwidth": halfwidth, "n_raw": None, "n_required": None,
           "replicates": replicates, "satisfied": None}
    if len(counts) < 2:
        out["reason"] = "need at least 2 replicates to estimate sigma"
        return out
    _, sigma = stats.mean_std(counts)
    out["sigma"] = sigma
    if sigma == 0:
        out.update(n_raw=0.0, n_required=1, satisfied=replicates >= 1)
        return out
    hw = DEFAULT_HALFWIDTH_SIGMA * sigma if halfwidth is None else halfwidth
    n_raw, n = stats.min_samples(stats.SampleSizeParams(z=z, sigma=sigma, l=hw))
    out.update(halfwidth=hw, n_raw=n_raw, n_required=n, satisfied=replicates >= n)
    return out


def _job_aggregate(exp_id: str, job: Mapping, summaries: list[dict], events: dict[str, list],
                   halfwidth: float | None, alpha: float) -> JobAggregate:
    counts = [float(s["collisions"]) for s in summaries]
    c_mean = c_std = t_mean = None
    if counts:
        c_mean, c_std = stats.mean_std(counts)
        totals = [t["total"] for s in summaries for t in s.get("timers", [])]
        if totals:
            t_mean = stats.mean_std(totals)[0]

    windows = []
    n_events = 0
    duration = 0.0
    for s in summaries:
        dt = float(s["tick_length"])
        w = float(s["window_length"])
        times = [e["start_tick"] * dt for e in events.get(s["sim_id"], [])]
        n_events += len(times)
        duration += float(s["duration_s"])
        windows.append((w, collisions.window_counts(times, w, float(s["duration_s"]))))
    per_window = [c for _, wc in windows for c in wc.tolist()]
    lam = p = None
    skipped = None
    if summaries:
        w_lengths = {w for w, _ in windows}
        if len(w_lengths) > 1:
            skipped = "window lengths differ between replicates"
        elif per_window:
            w = w_lengths.pop()
            lam = collisions.estimate_lambda(range(int(sum(per_window))), len(per_window) * w).rate
            try:
                fit = collisions.fit_test(collisions.histogram(per_window, w), collisions.PoissonModel(lam))
                p = fit.p_value
            except collisions.FitError as exc:
                skipped = str(exc)
        else:
            skipped = f"too few windows (0 < {collisions.MIN_WINDOWS})"
            lam = n_events / duration if duration > 0 else 0.0
    return JobAggregate(
        experiment_id=exp_id,
        job_id=job["job_id"],
        params=job.get("params", {}),
        n_sims=len(job.get("sims", [])),
        n_summaries=len(summaries),
        collisions_mean=c_mean,
        collisions_std=c_std,
        time_in_store_mean=t_mean,
        lambda_hat=lam,
        n_windows=len(per_window),
        fit_p_value=p,
        fit_skipped=skipped,
        sample_size=_sample_size(counts, len(counts), halfwidth, alpha),
    )


def aggregate(sink: str | Path, *, merge: bool = True) -> AggregateReport:
    """Summarise every experiment found under ``sink``.

    ``sink`` is either a manifest's sink directory or one experiment's
    directory within it. Each record must carry an (experiment_id, job_id,
    sim_id) that resolves to exactly one job of jobs.jsonl and sit in that
    job's directory; anything else is reported as an orphan. Corrupt lines,
    failed and missing simulations are listed, not fatal. With ``merge``,
    each experiment also gets a merged.jsonl of all its records in job and
    replicate order.
    """
    sink = Path(sink)
    report = AggregateReport()
    for root in _experiment_dirs(sink):
        manifest = {}
        if (root / "manifest.json").exists():
            try:
                manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                report.problems.append(f"{root / 'manifest.json'}: {exc}")
        halfwidth = manifest.get("halfwidth")
        alpha = manifest.get("alpha", 0.05)

        jobs = _read_jsonl(root / JOBS_FILE, report.problems)
        lineage: dict[str, tuple[str, str]] = {}
        for job in jobs:
            for sim in job.get("sims", []):
                key = sim.get("sim_id")
                if key in lineage:
                    report.problems.append(f"sim {key} listed in more than one job")
                lineage[key] = (job.get("experiment_id"), job.get("job_id"))
        report.failures.extend(_read_jsonl(root / FAILURES_FILE, report.problems)
                               if (root / FAILURES_FILE).exists() else [])

        by_sim: dict[str, list[dict]] = {}
        for path in sorted(root.glob("*/*.jsonl")):
            for rec in _read_jsonl(path, report.problems):
                report.n_records += 1
                ids = (rec.get("experiment_id"), rec.get("job_id"), rec.get("sim_id"))
                home = lineage.get(ids[2])
                if home is None or home != ids[:2] or path.parent.name != ids[1] or path.stem != ids[2]:
                    report.orphans.append({"file": str(path), "experiment_id": ids[0],
                                           "job_id": ids[1], "sim_id": ids[2]})
                    continue
                by_sim.setdefault(ids[2], []).append(rec)

        merged = []
        for job in jobs:
            summaries, events = [], {}
            for sim in job.get("sims", []):
                sid = sim["sim_id"]
                recs = by_sim.get(sid, [])
                merged.extend(recs)
                summ = [r for r in recs if r.get("type") == "summary"]
                if not summ:
                    report.missing.append(sid)
                    continue
                summaries.append(summ[-1])
                events[sid] = [r for r in recs if r.get("type") == "collision"]
            report.jobs.append(
                _job_aggregate(job.get("experiment_id"), job, summaries, events, halfwidth, alpha)
            )
        if merge:
            try:
                with open(root / MERGED_FILE, "w", encoding="utf-8") as fh:
                    for rec in merged:
                        fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            except OSError as exc:
                report.problems.append(f"{root / MERGED_FILE}: {exc}")
    return report


def run_experiment(
    manifest: ExperimentManifest, parallelism: int | None = None, **kwargs
) -> tuple[ExecutionReport, AggregateReport]:
    """expand, execute and aggregate in one call."""
    exec_report = execute(manifest, parallelism=parallelism, **kwargs)
    return exec_report, aggregate(manifest.experiment_dir)


def default_parallelism() -> int:
    return max(1, os.cpu_count() or 1)
