"""Local FaaS control and data plane.

Each function owns a pool of warm instances. An instance is a worker process
started from the function's package with ``CPLS_ENTRY`` and
``CPLS_RUNTIME_API`` set; the runtime API is served on a loopback port
dedicated to that instance. An invoke takes an idle warm instance or, under
the global concurrency cap, spawns a new one (a cold start). Over the cap the
invoke is rejected with 429 straight away.

Durations are billed from the worker-measured execution time plus any
injected delay, rounded up to the billing granularity. Init time of a cold
start is the measured process start-up plus the configured ``cold_init_ms``.
"""

from __future__ import annotations

import logging
import os
import queue
import random
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..config import FunctionConfig
from ..wireformat import MAX_PAYLOAD_BYTES
from .billing import DEFAULT_RATES, BillingLedger, BillingRates, BillingSample, round_up

log = logging.getLogger(__name__)


class EmulatorError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


class DelaySchedule:
    """Injected execution delay for one function (milliseconds).

    Accepted forms: ``fixed:MS`` (or a bare number), ``uniform:LO:HI``, or
    ``list:A,B,C`` which is consumed cyclically in arrival order.
    """

    def __init__(self, kind: str, values: tuple[float, ...], seed: int = 0):
        if kind not in ("fixed", "uniform", "list"):
            raise ValueError(f"unknown delay distribution {kind!r}")
        if not values or any(v < 0 for v in values):
            raise ValueError("delays must be non-negative")
        if kind == "uniform" and (len(values) != 2 or values[0] > values[1]):
            raise ValueError("uniform delay needs LO:HI with LO <= HI")
        self.kind = kind
        self.values = values
        self._rng = random.Random(seed)
        self._next = 0
        self._lock = threading.Lock()

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> DelaySchedule:
        kind, _, rest = text.partition(":")
        if not rest:
            return cls("fixed", (float(kind),), seed)
        if kind == "fixed":
            return cls("fixed", (float(rest),), seed)
        if kind == "uniform":
            lo, _, hi = rest.partition(":")
            return cls("uniform", (float(lo), float(hi)), seed)
        if kind == "list":
            return cls("list", tuple(float(v) for v in rest.split(",")), seed)
        raise ValueError(f"unknown delay distribution {kind!r}")

    @classmethod
    def fixed(cls, ms: float) -> DelaySchedule:
        return cls("fixed", (float(ms),))

    def sample(self) -> float:
        with self._lock:
            if self.kind == "fixed":
                return self.values[0]
            if self.kind == "uniform":
                return self._rng.uniform(*self.values)
            value = self.values[self._next % len(self.values)]
            self._next += 1
            return value


def parse_delay_option(option: str, seed: int = 0) -> tuple[str, DelaySchedule]:
    """``name=dist`` as given to ``--exec-delay-ms``."""
    name, sep, dist = option.partition("=")
    if not sep or not name:
        raise ValueError(f"expected name=dist, got {option!r}")
    return name, DelaySchedule.parse(dist, seed)


@dataclass
class PlatformConfig:
    max_concurrency: int = 2000
    cold_init_ms: float = 11.0
    exec_delays: dict[str, DelaySchedule] = field(default_factory=dict)
    rates: BillingRates = DEFAULT_RATES
    billing_granularity_ms: float = 1.0
    ready_timeout_s: float = 60.0
    # workers run below the emulator's own priority so that, on a small host,
    # a burst of cold starts cannot starve the front end
    worker_niceness: int = 10
    max_payload_bytes: int = MAX_PAYLOAD_BYTES  # applies to requests and responses

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.cold_init_ms < 0 or self.billing_granularity_ms < 0:
            raise ValueError("cold_init_ms and billing_granularity_ms must be non-negative")


class InstanceFailure(Exception):
    pass


class _RuntimeHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True

    def log_message(self, fmt, *args):
        log.debug("runtime %s " + fmt, self.server.instance.label, *args)

    def _reply(self, status: int, body: bytes = b"", headers: dict | None = None):
        self.send_response(status)
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        instance = self.server.instance
        if self.path != "/runtime/invocation/next":
            return self._reply(404)
        instance.ready.set()
        item = instance.events.get()
        if item is None:
            self.close_connection = True
            return self._reply(410)
        request_id, carrier = item
        self._reply(200, carrier, {"X-Cpls-Request-Id": request_id, "Content-Type": "application/json"})

    def do_POST(self):
        instance = self.server.instance
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        parts = self.path.strip("/").split("/")
        if len(parts) != 4 or parts[:2] != ["runtime", "invocation"] or parts[3] not in ("response", "error"):
            return self._reply(404)
        accepted = instance.complete(parts[2], parts[3], body, self.headers)
        self._reply(202 if accepted else 409)


class _RuntimeServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        # a worker killed mid-poll leaves a broken pipe behind; nothing to report
        log.debug("runtime API error for %s", client_address, exc_info=True)

    def __init__(self, instance):
        self.instance = instance
        super().__init__(("127.0.0.1", 0), _RuntimeHandler)


@dataclass
class _Pending:
    request_id: str
    done: threading.Event = field(default_factory=threading.Event)
    outcome: str = ""
    body: bytes = b""
    exec_ms: float = 0.0
    worker_cold: bool | None = None


class Instance:
    """One worker process plus its dedicated runtime API endpoint."""

    def __init__(self, cloud_name: str, package_path: str, entry_name: str, generation: int,
                 niceness: int = 0):
        self.cloud_name = cloud_name
        self.generation = generation
        self.label = f"{cloud_name}/{uuid.uuid4().hex[:8]}"
        self.ready = threading.Event()
        self.events: queue.Queue = queue.Queue()
        self._pending: _Pending | None = None
        self._lock = threading.Lock()
        self.served = 0
        self.server = _RuntimeServer(self)
        self._thread = threading.Thread(target=self.server.serve_forever, name=f"runtime-{self.label}",
                                        daemon=True)
        self._thread.start()
        env = dict(os.environ)
        env["CPLS_ENTRY"] = entry_name
        env["CPLS_RUNTIME_API"] = f"127.0.0.1:{self.server.server_address[1]}"
        try:
            self.process = subprocess.Popen([package_path], env=env, stdin=subprocess.DEVNULL,
                                            stdout=subprocess.DEVNULL)
        except OSError:
            self._close_server()
            raise
        if niceness:
            try:
                os.setpriority(os.PRIO_PROCESS, self.process.pid, niceness)
            except (OSError, AttributeError):
                pass

    def wait_ready(self, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        while not self.ready.wait(0.01):
            if self.process.poll() is not None:
                raise InstanceFailure(f"instance exited with code {self.process.returncode} during init")
            if time.monotonic() > deadline:
                raise InstanceFailure("instance did not poll for events in time")

    def run(self, request_id: str, carrier: bytes, timeout: float) -> _Pending:
        pending = _Pending(request_id)
        with self._lock:
            self._pending = pending
        self.events.put((request_id, carrier))
        deadline = time.monotonic() + timeout
        while not pending.done.wait(0.05):
            if self.process.poll() is not None:
                raise InstanceFailure(f"instance crashed with code {self.process.returncode}")
            if time.monotonic() > deadline:
                raise InstanceFailure(f"invocation exceeded timeout of {timeout} s")
        self.served += 1
        return pending

    def complete(self, request_id: str, outcome: str, body: bytes, headers) -> bool:
        with self._lock:
            pending = self._pending
            if pending is None or pending.request_id != request_id or pending.done.is_set():
                return False
            self._pending = None
        pending.outcome = outcome
        pending.body = body
        try:
            pending.exec_ms = float(headers.get("X-Cpls-Exec-Ms") or 0.0)
        except ValueError:
            pending.exec_ms = 0.0
        cold = headers.get("X-Cpls-Cold")
        pending.worker_cold = None if cold is None else cold == "1"
        pending.done.set()
        return True

    @property
    def alive(self) -> bool:
        return self.process.poll() is None

    def _close_server(self):
        self.server.shutdown()
        self.server.server_close()

    def terminate(self) -> None:
        self.events.put(None)
        if self.process.poll() is None:
            self.process.terminate()
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()
        self._close_server()


@dataclass
class FunctionRecord:
    cloud_name: str
    config: FunctionConfig
    package_path: str
    entry_name: str
    identifier: str = ""
    generation: int = 0
    warm_instances: list[Instance] = field(default_factory=list)
    in_flight: int = 0
    instances_spawned: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.cloud_name,
            "entry": self.entry_name,
            "identifier": self.identifier,
            "package": self.package_path,
            "config": self.config.to_dict(),
            "warm_instances": len(self.warm_instances),
            "in_flight": self.in_flight,
            "instances_spawned": self.instances_spawned,
        }


@dataclass
class InvokeResult:
    status: int
    headers: dict
    body: bytes


def _json_error(message: str) -> bytes:
    import json

    return json.dumps({"error": message}).encode()


class Platform:
    """Functions, instances, concurrency accounting and billing.

    Thread-safe: the HTTP front end calls :meth:`invoke` from one thread per
    client connection.
    """

    def __init__(self, config: PlatformConfig | None = None):
        self.config = config or PlatformConfig()
        self._lock = threading.Lock()
        self._functions: dict[str, FunctionRecord] = {}
        self._instances: set[Instance] = set()
        self.ledger = BillingLedger()
        self.in_flight = 0
        self.peak_in_flight = 0
        self.throttled = 0
        self.invocations = 0
        self._closed = False

    # -- control plane -------------------------------------------------------

    def create_function(self, name: str, config: FunctionConfig, package_path: str,
                        entry_name: str, identifier: str = "") -> str:
        """Register or update ``name``; returns created, updated or unchanged."""
        if not name:
            raise EmulatorError(400, "function name is required")
        if not package_path or not os.path.isfile(package_path) or not os.access(package_path, os.X_OK):
            raise EmulatorError(400, f"package {package_path!r} does not exist or is not executable")
        if not entry_name:
            raise EmulatorError(400, "entry name is required")
        package_path = os.path.abspath(package_path)
        drained: list[Instance] = []
        with self._lock:
            record = self._functions.get(name)
            if record is None:
                self._functions[name] = FunctionRecord(name, config, package_path, entry_name, identifier)
                return "created"
            same = (record.config, record.package_path, record.entry_name) == (config, package_path, entry_name)
            if same and record.identifier == identifier:
                return "unchanged"
            record.identifier = identifier
            if same:
                return "updated"
            record.config, record.package_path, record.entry_name = config, package_path, entry_name
            record.generation += 1
            drained, record.warm_instances = record.warm_instances, []
        for instance in drained:
            self._retire(instance)
        return "updated"

    def delete_function(self, name: str) -> None:
        with self._lock:
            record = self._functions.pop(name, None)
            if record is None:
                raise EmulatorError(404, f"function {name!r} not found")
            drained, record.warm_instances = record.warm_instances, []
        for instance in drained:
            self._retire(instance)

    def list_functions(self) -> list[dict]:
        with self._lock:
            return [r.to_dict() for r in self._functions.values()]

    def set_exec_delay(self, name: str, schedule: DelaySchedule | None) -> None:
        with self._lock:
            if schedule is None:
                self.config.exec_delays.pop(name, None)
            else:
                self.config.exec_delays[name] = schedule

    # -- data plane ----------------------------------------------------------

    def invoke(self, name: str, carrier: bytes) -> InvokeResult:
        with self._lock:
            if self._closed:
                return InvokeResult(500, {}, _json_error("platform is shutting down"))
            record = self._functions.get(name)
            if record is None:
                return InvokeResult(404, {}, _json_error(f"function {name!r} not found"))
            if len(carrier) > self.config.max_payload_bytes:
                return InvokeResult(413, {}, _json_error(
                    f"request of {len(carrier)} bytes exceeds {self.config.max_payload_bytes}"))
            if self.in_flight >= self.config.max_concurrency:
                self.throttled += 1
                return InvokeResult(429, {}, _json_error("concurrency limit reached"))
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            self.invocations += 1
            record.in_flight += 1
            instance = record.warm_instances.pop() if record.warm_instances else None
            config, generation = record.config, record.generation
            package, entry = record.package_path, record.entry_name
            schedule = self.config.exec_delays.get(name)
        request_id = str(uuid.uuid4())
        cold = instance is None
        init_ms = 0.0
        try:
            try:
                if cold:
                    started = time.perf_counter()
                    instance = Instance(name, package, entry, generation, self.config.worker_niceness)
                    with self._lock:
                        self._instances.add(instance)
                    instance.wait_ready(self.config.ready_timeout_s)
                    if self.config.cold_init_ms:
                        time.sleep(self.config.cold_init_ms / 1000)
                    init_ms = (time.perf_counter() - started) * 1000.0
                    with self._lock:
                        record.instances_spawned += 1
                delay_ms = schedule.sample() if schedule else 0.0
                if delay_ms:
                    time.sleep(delay_ms / 1000)
                pending = instance.run(request_id, carrier, config.timeout)
            except (InstanceFailure, OSError) as exc:
                log.warning("invoke %s failed: %s", name, exc)
                if instance is not None:
                    self._retire(instance)
                    instance = None
                return InvokeResult(500, {"X-Cpls-Request-Id": request_id}, _json_error(str(exc)))
            if pending.worker_cold is not None and pending.worker_cold != cold:
                log.warning("instance %s reported cold=%s, platform saw %s", instance.label,
                            pending.worker_cold, cold)
            if len(pending.body) > self.config.max_payload_bytes:
                return InvokeResult(500, {"X-Cpls-Request-Id": request_id}, _json_error(
                    f"response of {len(pending.body)} bytes exceeds {self.config.max_payload_bytes}"))
            granularity = self.config.billing_granularity_ms
            duration_ms = round_up(pending.exec_ms + delay_ms, granularity)
            init_billed = round_up(init_ms, granularity) if cold else 0.0
            sample = BillingSample.charge(name, request_id, duration_ms, init_billed, config.memory, cold,
                                          self.config.rates)
            self.ledger.append(sample)
            headers = {
                "Content-Type": "application/json",
                "X-Cpls-Request-Id": request_id,
                "X-Cpls-Cold": "1" if cold else "0",
                "X-Cpls-Duration-Ms": repr(sample.duration_ms),
                "X-Cpls-Init-Ms": repr(sample.init_ms),
            }
            return InvokeResult(200, headers, pending.body)
        finally:
            retire = None
            with self._lock:
                current = self._functions.get(name)
                if instance is not None:
                    if (current is record and record.generation == generation and instance.alive
                            and not self._closed):
                        record.warm_instances.append(instance)
                    else:
                        retire = instance
                record.in_flight -= 1
                self.in_flight -= 1
            if retire is not None:
                self._retire(retire)

    def _retire(self, instance: Instance) -> None:
        with self._lock:
            self._instances.discard(instance)
        instance.terminate()

    # -- reporting -----------------------------------------------------------

    def billing_report(self) -> list[BillingSample]:
        return self.ledger.samples()

    def billing_totals(self):
        return self.ledger.totals()

    def stats(self) -> dict:
        with self._lock:
            return {
                "in_flight": self.in_flight,
                "peak_in_flight": self.peak_in_flight,
                "throttled": self.throttled,
                "invocations": self.invocations,
                "live_instances": len(self._instances),
                "instances_spawned": {n: r.instances_spawned for n, r in self._functions.items()},
            }

    def shutdown(self) -> None:
        with self._lock:
            self._closed = True
            instances = list(self._instances)
            self._instances.clear()
            for record in self._functions.values():
                record.warm_instances = []
        for instance in instances:
            instance.terminate()
