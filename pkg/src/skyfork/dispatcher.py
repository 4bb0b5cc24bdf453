"""Client-side fork-join runtime.

A :class:`Dispatcher` owns ``pool_size`` persistent HTTP/1.1 connections to
the backend, each driven by one thread. Dispatch ``k`` goes to connection
``k mod pool_size``; the call returns at once with a dense local id, and the
decoded result lands in the caller's :class:`ResultSlot` when the response
arrives. :meth:`Dispatcher.wait` and :meth:`Dispatcher.wait_any` join on
completions.

The number of threads is fixed by the pool size, however many invocations are
in flight.

Throttled requests (429) are retried with jittered exponential backoff;
nothing else is retried.
"""

from __future__ import annotations

import http.client
import logging
import queue
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from urllib.parse import quote, urlsplit

from .codegen import BoundTask, HostStub, RemoteError
from .config import DEFAULT_FUNCTION_CONFIG, ConfigError, FunctionConfig
from .wireformat import MAX_PAYLOAD_BYTES, EncodeError, WireError, unwrap_base64_json, wrap_base64_json

log = logging.getLogger(__name__)

POOLED = "pooled"
PER_REQUEST = "per-request"


class UsageError(RuntimeError):
    pass


class Status(str, Enum):
    PENDING = "pending"
    OK = "ok"
    REMOTE_ERROR = "remote-error"
    TRANSPORT_ERROR = "transport-error"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class DispatcherConfig:
    backend_endpoint: str
    pool_size: int = 16
    max_retries_throttle: int = 5
    default_function_config: FunctionConfig = DEFAULT_FUNCTION_CONFIG
    strategy: str = POOLED
    backoff_initial_ms: float = 10.0
    timeout_slack_s: float = 10.0
    max_payload_bytes: int = MAX_PAYLOAD_BYTES

    def __post_init__(self):
        if not self.backend_endpoint:
            raise ConfigError("backend_endpoint must be non-empty")
        if not isinstance(self.pool_size, int) or self.pool_size < 1:
            raise ConfigError(f"pool_size must be >= 1, got {self.pool_size!r}")
        if self.max_retries_throttle < 0:
            raise ConfigError("max_retries_throttle must be >= 0")
        if self.strategy not in (POOLED, PER_REQUEST):
            raise ConfigError(f"strategy must be {POOLED!r} or {PER_REQUEST!r}")


@dataclass
class InvocationRecord:
    local_id: int
    cloud_name: str
    request_id: str | None = None
    cold: bool | None = None
    duration_ms: float | None = None
    init_ms: float | None = None
    status: Status = Status.PENDING
    error: str | None = None
    attempts: int = 0
    connection: int = 0

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


_UNSET = object()


class ResultSlot:
    """Destination for one task result, written once by the dispatcher."""

    __slots__ = ("_value",)

    def __init__(self):
        self._value = _UNSET

    @property
    def filled(self) -> bool:
        return self._value is not _UNSET

    def set(self, value) -> None:
        if self._value is not _UNSET:
            raise UsageError("result slot written twice")
        self._value = value

    @property
    def value(self):
        if self._value is _UNSET:
            raise UsageError("result slot is empty")
        return self._value

    def __repr__(self):
        return f"ResultSlot({self._value!r})" if self.filled else "ResultSlot(<empty>)"


def select_connection(sequence_number: int, pool_size: int) -> int:
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    return sequence_number % pool_size


@dataclass
class _Job:
    record: InvocationRecord
    stub: HostStub
    path: str
    body: bytes
    timeout: float
    slot: ResultSlot | None = None


@dataclass
class _Endpoint:
    scheme: str
    host: str
    port: int
    base_path: str = ""

    @classmethod
    def parse(cls, url: str) -> _Endpoint:
        if "//" not in url:
            url = "http://" + url
        parts = urlsplit(url)
        if parts.scheme not in ("http", "https") or not parts.hostname:
            raise ConfigError(f"unsupported backend endpoint {url!r}")
        port = parts.port or (443 if parts.scheme == "https" else 80)
        return cls(parts.scheme, parts.hostname, port, parts.path.rstrip("/"))

    def connect(self, timeout: float) -> http.client.HTTPConnection:
        cls = http.client.HTTPSConnection if self.scheme == "https" else http.client.HTTPConnection
        return cls(self.host, self.port, timeout=timeout)


class _Connection:
    """One pool slot: a queue, a thread and a keep-alive HTTP connection."""

    def __init__(self, index: int, owner: Dispatcher):
        self.index = index
        self.owner = owner
        self.jobs: queue.SimpleQueue = queue.SimpleQueue()
        self.carried = 0  # dispatches routed here
        self.requests = 0  # HTTP requests sent, retries included
        self._conn: http.client.HTTPConnection | None = None
        self._thread = threading.Thread(target=self._run, name=f"dispatch-conn-{index}", daemon=True)
        self._thread.start()

    def submit(self, job: _Job) -> None:
        self.carried += 1
        self.jobs.put(job)

    def stop(self) -> None:
        self.jobs.put(None)

    def join(self, timeout=None) -> None:
        self._thread.join(timeout)

    def _run(self) -> None:
        while True:
            job = self.jobs.get()
            if job is None:
                break
            try:
                self._execute(job)
            except Exception as exc:  # never lose a record
                log.exception("dispatch of %s failed", job.record.local_id)
                self.owner._finish(job, Status.TRANSPORT_ERROR, error=f"internal error: {exc}")
        if self._conn is not None:
            self._conn.close()

    def _roundtrip(self, job: _Job):
        per_request = self.owner.config.strategy == PER_REQUEST
        headers = {"Content-Type": "application/json"}
        if per_request:
            conn = self.owner._endpoint.connect(job.timeout)
            headers["Connection"] = "close"
        else:
            if self._conn is None:
                self._conn = self.owner._endpoint.connect(job.timeout)
            conn = self._conn
            conn.timeout = job.timeout
            if conn.sock is not None:
                conn.sock.settimeout(job.timeout)
        try:
            self.requests += 1
            conn.request("POST", job.path, body=job.body, headers=headers)
            resp = conn.getresponse()
            data = resp.read()
            return resp.status, {k.lower(): v for k, v in resp.getheaders()}, data
        except BaseException:
            conn.close()
            if not per_request:
                self._conn = None
            raise
        finally:
            if per_request:
                conn.close()

    def _execute(self, job: _Job) -> None:
        config = self.owner.config
        delay_ms = config.backoff_initial_ms
        record = job.record
        for attempt in range(config.max_retries_throttle + 1):
            record.attempts += 1
            try:
                status, headers, data = self._roundtrip(job)
            except (OSError, http.client.HTTPException) as exc:
                self.owner._finish(job, Status.TRANSPORT_ERROR, error=f"{type(exc).__name__}: {exc}")
                return
            if status != 429 or attempt == config.max_retries_throttle:
                break
            time.sleep(delay_ms * random.uniform(0.75, 1.25) / 1000.0)
            delay_ms *= 2
        meta = _response_meta(headers)
        if status != 200:
            detail = data[:200].decode("utf-8", "replace")
            if status == 429:
                detail = f"throttled after {record.attempts} attempts: {detail}"
            self.owner._finish(job, Status.TRANSPORT_ERROR, error=f"HTTP {status}: {detail}", **meta)
            return
        try:
            value = job.stub.decode_response(unwrap_base64_json(data))
        except RemoteError as exc:
            self.owner._finish(job, Status.REMOTE_ERROR, error=str(exc), **meta)
            return
        except WireError as exc:
            self.owner._finish(job, Status.TRANSPORT_ERROR, error=f"undecodable response: {exc}", **meta)
            return
        self.owner._finish(job, Status.OK, value=value, **meta)


def _response_meta(headers: dict) -> dict:
    def number(name):
        raw = headers.get(name)
        try:
            return float(raw) if raw is not None else None
        except ValueError:
            return None

    cold = headers.get("x-cpls-cold")
    return {
        "request_id": headers.get("x-cpls-request-id"),
        "cold": None if cold is None else cold == "1",
        "duration_ms": number("x-cpls-duration-ms"),
        "init_ms": number("x-cpls-init-ms"),
    }


class Dispatcher:
    """Fork-join handle over one backend; safe to share between threads."""

    def __init__(self, config: DispatcherConfig):
        self.config = config
        self._endpoint = _Endpoint.parse(config.backend_endpoint)
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._next_id = 0
        self._pending = 0
        self._completed: deque[InvocationRecord] = deque()
        self._connections: list[_Connection] | None = None
        self._closed = False

    @property
    def pool_size(self) -> int:
        return self.config.pool_size

    @property
    def outstanding(self) -> int:
        """Invocations dispatched and not yet returned by wait/wait_any."""
        with self._lock:
            return self._pending + len(self._completed)

    def connection_loads(self) -> list[int]:
        """Dispatches routed to each connection so far."""
        with self._lock:
            if self._connections is None:
                return [0] * self.config.pool_size
            return [c.carried for c in self._connections]

    def connection_requests(self) -> list[int]:
        """HTTP requests each connection has sent, throttle retries included."""
        with self._lock:
            if self._connections is None:
                return [0] * self.config.pool_size
            return [c.requests for c in self._connections]

    def dispatch(self, task: BoundTask, config: FunctionConfig | None = None,
                 result: ResultSlot | None = None) -> int:
        """Submit ``task``; returns its local id without waiting."""
        if not isinstance(task, BoundTask):
            raise TypeError(f"dispatch needs a bound task (task.bind(...)), got {type(task).__name__}")
        # serialization errors surface here, before an id is consumed
        body = wrap_base64_json(task.encode_request()).encode("ascii")
        if len(body) > self.config.max_payload_bytes:
            raise EncodeError("$", f"request carrier is {len(body)} bytes, over the "
                                   f"{self.config.max_payload_bytes} byte limit")
        cfg = config or task.task.definition.config or self.config.default_function_config
        path = f"{self._endpoint.base_path}/2015-03-31/functions/{quote(task.cloud_name)}/invocations"
        with self._lock:
            if self._closed:
                raise UsageError("dispatcher is closed")
            if self._connections is None:
                self._connections = [_Connection(i, self) for i in range(self.config.pool_size)]
            local_id = self._next_id
            self._next_id += 1
            index = select_connection(local_id, self.config.pool_size)
            record = InvocationRecord(local_id, task.cloud_name, connection=index)
            self._pending += 1
            connection = self._connections[index]
            connection.submit(_Job(record, task.stub, path, body, cfg.timeout + self.config.timeout_slack_s,
                                   result))
        return local_id

    def _finish(self, job: _Job, status: Status, value=None, error=None, **meta) -> None:
        if status is Status.OK and job.slot is not None:
            job.slot.set(value)
        with self._cond:
            record = job.record
            for key, val in meta.items():
                setattr(record, key, val)
            record.error = error
            record.status = status
            self._pending -= 1
            self._completed.append(record)
            self._cond.notify_all()

    def wait(self, n: int, timeout: float | None = None) -> list[InvocationRecord]:
        """Block until ``n`` invocations are terminal; returns them in completion order."""
        if n < 0:
            raise UsageError("wait count must be non-negative")
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            if n > self._pending + len(self._completed):
                raise UsageError(f"wait({n}) but only {self._pending + len(self._completed)} outstanding")
            while len(self._completed) < n:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError(f"wait({n}) timed out with {len(self._completed)} complete")
                self._cond.wait(remaining)
            return [self._completed.popleft() for _ in range(n)]

    def wait_any(self, timeout: float | None = None) -> InvocationRecord:
        """Block until the next invocation is terminal and return its record."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            if not self._pending and not self._completed:
                raise UsageError("wait_any with no outstanding invocations")
            while not self._completed:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError("wait_any timed out")
                self._cond.wait(remaining)
            return self._completed.popleft()

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            connections = self._connections or []
        for c in connections:
            c.stop()
        for c in connections:
            c.join()

    def __enter__(self) -> Dispatcher:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def create_dispatcher(config: DispatcherConfig) -> Dispatcher:
    return Dispatcher(config)
