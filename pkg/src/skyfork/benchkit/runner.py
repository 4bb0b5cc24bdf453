"""Benchmark driver: run a job locally or through the dispatcher, emit CSV."""

from __future__ import annotations

import csv
import json
import math
import time
import urllib.request
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from ..codegen import BoundTask
from ..dispatcher import Dispatcher, DispatcherConfig, ResultSlot, Status
from .kernels import combine_estimates, enumerate_prefixes

LOCAL = "local"
SERVERLESS = "serverless"

# one vCPU-hour; used to price host-side dispatch time
HOST_VCPU_RATE_PER_HOUR = 0.0575

CSV_HEADER = ("task_id", "duration_ms", "cold", "init_ms", "cost_usd", "request_id")


class BenchmarkError(RuntimeError):
    def __init__(self, message: str, task_index: int | None = None):
        super().__init__(message)
        self.task_index = task_index


@dataclass(frozen=True)
class PiJob:
    n: int
    np: int
    seed: int = 0

    def __post_init__(self):
        if self.np < 1:
            raise ValueError("np must be >= 1")
        if self.n < self.np:
            raise ValueError(f"n={self.n} gives workers no samples (np={self.np})")
        if self.n % self.np:
            raise ValueError(f"n={self.n} is not divisible by np={self.np}")

    @property
    def samples_per_worker(self) -> int:
        return self.n // self.np

    def tasks(self) -> list[BoundTask]:
        from .tasks import pi_task

        return [pi_task.bind(self.samples_per_worker, self.seed + i) for i in range(self.np)]

    def combine(self, results: list) -> float:
        return combine_estimates(results, [self.samples_per_worker] * self.np)


@dataclass(frozen=True)
class QueensJob:
    board_n: int
    prefix_len: int
    prefixes: tuple = field(default=None, compare=False)

    def __post_init__(self):
        if self.prefixes is None:
            object.__setattr__(self, "prefixes", tuple(enumerate_prefixes(self.board_n, self.prefix_len)))

    def tasks(self) -> list[BoundTask]:
        from .tasks import queens_task

        return [queens_task.bind(self.board_n, list(p)) for p in self.prefixes]

    def combine(self, results: list) -> int:
        return sum(results)


@dataclass(frozen=True)
class TileJob:
    """Image-tile stand-in: ``tiles`` tasks whose cost comes from injected delay."""

    tiles: int

    def __post_init__(self):
        if self.tiles < 1:
            raise ValueError("tiles must be >= 1")

    def tasks(self) -> list[BoundTask]:
        from .tasks import tile_task

        return [tile_task.bind(i) for i in range(self.tiles)]

    def combine(self, results: list) -> int:
        if results != list(range(self.tiles)):
            raise BenchmarkError("tile results out of place")
        return len(results)


@dataclass
class TaskRow:
    task_id: int
    duration_ms: float
    cold: bool | None = None
    init_ms: float = 0.0
    cost_usd: float = 0.0
    request_id: str = ""


@dataclass
class BenchResult:
    mode: str
    value: Any
    results: list
    rows: list[TaskRow]
    wall_ms: float
    host_dispatch_ms: float
    compute_cost_usd: float = 0.0
    request_fees_usd: float = 0.0
    host_cost_usd: float = 0.0

    @property
    def total_cost_usd(self) -> float:
        return math.fsum([self.compute_cost_usd, self.request_fees_usd, self.host_cost_usd])

    def footer(self) -> list[tuple[str, float]]:
        return [
            ("wall_ms", self.wall_ms),
            ("host_dispatch_ms", self.host_dispatch_ms),
            ("total_cost_usd", self.total_cost_usd),
            ("compute_cost_usd", self.compute_cost_usd),
            ("request_fees_usd", self.request_fees_usd),
        ]


def host_cost(ms: float, vcpus: int = 1, rate_per_hour: float = HOST_VCPU_RATE_PER_HOUR) -> float:
    return ms / 3_600_000 * rate_per_hour * vcpus


def _timed_run(bound: BoundTask):
    start = time.perf_counter()
    value = bound.run_local()
    return value, (time.perf_counter() - start) * 1000.0


def _run_local(tasks: list[BoundTask], workers: int, rate: float) -> BenchResult:
    start = time.perf_counter()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        dispatch_start = time.perf_counter()
        futures = [pool.submit(_timed_run, t) for t in tasks]
        dispatch_ms = (time.perf_counter() - dispatch_start) * 1000.0
        results, rows = [], []
        for i, fut in enumerate(futures):
            try:
                value, ms = fut.result()
            except Exception as exc:
                raise BenchmarkError(f"task {i} failed: {exc}", i) from exc
            results.append(value)
            rows.append(TaskRow(i, ms))
    wall_ms = (time.perf_counter() - start) * 1000.0
    # local cost is the host pool held for the whole run
    return BenchResult(LOCAL, None, results, rows, wall_ms, dispatch_ms,
                       host_cost_usd=host_cost(wall_ms, workers, rate))


def fetch_billing(backend: str, timeout: float = 30.0) -> list[dict]:
    with urllib.request.urlopen(backend.rstrip("/") + "/billing", timeout=timeout) as resp:
        return json.loads(resp.read())


def _run_serverless(tasks: list[BoundTask], dispatcher_config: DispatcherConfig, rate: float) -> BenchResult:
    slots = [ResultSlot() for _ in tasks]
    start = time.perf_counter()
    with Dispatcher(dispatcher_config) as dispatcher:
        index_of = {}
        for i, (bound, slot) in enumerate(zip(tasks, slots)):
            index_of[dispatcher.dispatch(bound, result=slot)] = i
        dispatch_ms = (time.perf_counter() - start) * 1000.0
        records = dispatcher.wait(len(tasks))
    wall_ms = (time.perf_counter() - start) * 1000.0

    records.sort(key=lambda r: index_of[r.local_id])
    for rec in records:
        if rec.status is not Status.OK:
            i = index_of[rec.local_id]
            raise BenchmarkError(f"task {i} ended {rec.status}: {rec.error}", i)

    billing = {s["request_id"]: s for s in fetch_billing(dispatcher_config.backend_endpoint)}
    rows, compute, fees = [], [], []
    for rec in records:
        sample = billing.get(rec.request_id)
        if sample is None:
            raise BenchmarkError(f"no billing sample for request {rec.request_id}", index_of[rec.local_id])
        compute.append(sample["compute_cost"])
        fees.append(sample["request_fee"])
        rows.append(TaskRow(index_of[rec.local_id], sample["duration_ms"], sample["cold"],
                            sample["init_ms"], sample["cost"], rec.request_id))
    return BenchResult(SERVERLESS, None, [s.value for s in slots], rows, wall_ms, dispatch_ms,
                       compute_cost_usd=math.fsum(compute), request_fees_usd=math.fsum(fees),
                       host_cost_usd=host_cost(dispatch_ms, 1, rate))


def run_benchmark(job, mode: str = LOCAL, *, workers: int = 4,
                  dispatcher_config: DispatcherConfig | None = None,
                  host_rate_per_hour: float = HOST_VCPU_RATE_PER_HOUR) -> BenchResult:
    """Run every task of ``job`` and combine the results.

    ``local`` uses a process pool of ``workers``; ``serverless`` dispatches one
    invocation per task (the functions must already be deployed) and joins
    per-task cost from the backend's billing log.
    """
    tasks = job.tasks()
    if mode == LOCAL:
        if workers < 1:
            raise ValueError("workers must be >= 1")
        result = _run_local(tasks, workers, host_rate_per_hour)
    elif mode == SERVERLESS:
        if dispatcher_config is None:
            raise ValueError("serverless mode needs a dispatcher configuration")
        result = _run_serverless(tasks, dispatcher_config, host_rate_per_hour)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    result.value = job.combine(result.results)
    return result


def write_csv(result: BenchResult, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in result.rows:
        cold = "" if row.cold is None else int(row.cold)
        writer.writerow([row.task_id, f"{row.duration_ms:.3f}", cold, f"{row.init_ms:.3f}",
                         repr(row.cost_usd), row.request_id])
    for key, value in result.footer():
        writer.writerow([key, repr(float(value))])
