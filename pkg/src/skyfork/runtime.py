"""Worker-side invocation loop.

The worker polls its platform's runtime interface for events, runs the entry
selected by ``CPLS_ENTRY`` and posts back a response or error carrier::

    GET  /runtime/invocation/next                -> X-Cpls-Request-Id, carrier
    POST /runtime/invocation/{id}/response       <- carrier(Envelope kind=1)
    POST /runtime/invocation/{id}/error          <- carrier(Envelope kind=2)

One invocation is handled at a time. A failing task body becomes an error
envelope; it never stops the loop.
"""

from __future__ import annotations

import http.client
import importlib
import logging
import os
import sys
import time
from dataclasses import dataclass
from urllib.parse import urlsplit

from .codegen import ENTRY_REGISTRY, EntryWrapper
from .wireformat import (
    REQUEST, RESPONSE_ERR, RESPONSE_OK, Envelope, Str, WireError,
    encode_value, unwrap_base64_json, wrap_base64_json,
)

ENTRY_ENV = "CPLS_ENTRY"
RUNTIME_ENV = "CPLS_RUNTIME_API"

EXIT_CONFIG = 2
EXIT_UNREACHABLE = 3


class InstanceRetired(Exception):
    """The platform no longer wants this instance (runtime API answered 410)."""


class RuntimeUnavailable(ConnectionError):
    pass


@dataclass
class InstanceState:
    entry_name: str
    handled_count: int = 0

    @property
    def cold(self) -> bool:
        return self.handled_count == 0


def _error_envelope(message: str) -> Envelope:
    return Envelope(RESPONSE_ERR, encode_value(message, Str))


def handle_invocation(wrapper: EntryWrapper, payload: bytes | str) -> Envelope:
    """Decode the request carrier, run the task body, encode the outcome."""
    try:
        envelope = Envelope.from_bytes(unwrap_base64_json(payload))
        if envelope.kind != REQUEST:
            raise WireError(f"expected a request envelope, got kind {envelope.kind}")
        captures = wrapper.decode_captures(envelope.body)
    except WireError as exc:
        return _error_envelope(f"decode error: {exc}")
    definition = wrapper.definition
    try:
        result = definition.body(**captures)
    except Exception as exc:
        return _error_envelope(f"{type(exc).__name__}: {exc}")
    try:
        return Envelope(RESPONSE_OK, encode_value(result, definition.return_schema))
    except WireError as exc:
        return _error_envelope(f"result encode error: {exc}")


def _split_endpoint(endpoint: str) -> tuple[str, int]:
    if "//" not in endpoint:
        endpoint = "http://" + endpoint
    parts = urlsplit(endpoint)
    return parts.hostname or "127.0.0.1", parts.port or 80


class _RuntimeClient:
    def __init__(self, endpoint: str, retries: int = 5, backoff: float = 0.05):
        self.host, self.port = _split_endpoint(endpoint)
        self.retries = retries
        self.backoff = backoff
        self._conn: http.client.HTTPConnection | None = None

    def _request(self, method, path, body=None, headers=None):
        for attempt in range(self.retries + 1):
            if self._conn is None:
                self._conn = http.client.HTTPConnection(self.host, self.port)
            try:
                self._conn.request(method, path, body=body, headers=headers or {})
                resp = self._conn.getresponse()
                data = resp.read()
                return resp, data
            except (OSError, http.client.HTTPException) as exc:
                self._conn.close()
                self._conn = None
                if attempt == self.retries:
                    raise RuntimeUnavailable(f"runtime API {self.host}:{self.port} unreachable: {exc}") from exc
                time.sleep(self.backoff * (attempt + 1))

    def next_event(self) -> tuple[str, bytes]:
        resp, data = self._request("GET", "/runtime/invocation/next")
        if resp.status == 410:
            raise InstanceRetired()
        if resp.status != 200:
            raise RuntimeUnavailable(f"/next returned {resp.status}")
        request_id = resp.getheader("X-Cpls-Request-Id")
        if not request_id:
            raise RuntimeUnavailable("/next response without X-Cpls-Request-Id")
        return request_id, data

    def post(self, request_id: str, outcome: str, carrier: str, headers: dict) -> None:
        headers = {"Content-Type": "application/json", **headers}
        self._request("POST", f"/runtime/invocation/{request_id}/{outcome}", carrier.encode(), headers)

    def close(self):
        if self._conn is not None:
            self._conn.close()


def run_entry_loop(registry, runtime_endpoint: str, entry_name: str,
                   max_events: int | None = None, state: InstanceState | None = None) -> InstanceState:
    """Serve events for ``entry_name`` forever, or for ``max_events`` more events (tests)."""
    if entry_name not in registry:
        raise KeyError(f"unknown entry {entry_name!r}; registered: {sorted(registry)}")
    wrapper = registry[entry_name]
    state = state or InstanceState(entry_name)
    client = _RuntimeClient(runtime_endpoint)
    try:
        served = 0
        while max_events is None or served < max_events:
            request_id, payload = client.next_event()
            cold = state.cold
            start = time.perf_counter()
            envelope = handle_invocation(wrapper, payload)
            exec_ms = (time.perf_counter() - start) * 1000.0
            outcome = "response" if envelope.kind == RESPONSE_OK else "error"
            client.post(request_id, outcome, wrap_base64_json(envelope.to_bytes()), {
                "X-Cpls-Cold": "1" if cold else "0",
                "X-Cpls-Exec-Ms": f"{exec_ms:.6f}",
            })
            state.handled_count += 1
            served += 1
    finally:
        client.close()
    return state


def main(modules: list[str]) -> int:
    """Worker process entry: import task modules, then serve ``CPLS_ENTRY``."""
    logging.basicConfig(level=logging.WARNING, format="%(asctime)s worker %(message)s")
    entry = os.environ.get(ENTRY_ENV)
    endpoint = os.environ.get(RUNTIME_ENV)
    if not entry or not endpoint:
        print(f"worker: {ENTRY_ENV} and {RUNTIME_ENV} must be set", file=sys.stderr)
        return EXIT_CONFIG
    for name in modules:
        importlib.import_module(name)
    ENTRY_REGISTRY.freeze()
    if entry not in ENTRY_REGISTRY:
        print(f"worker: unknown entry {entry!r}; this package serves {sorted(ENTRY_REGISTRY)}",
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_entry_loop(ENTRY_REGISTRY, endpoint, entry)
    except InstanceRetired:
        return 0
    except RuntimeUnavailable as exc:
        print(f"worker: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    return 0
