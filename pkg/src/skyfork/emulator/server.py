"""HTTP front end of the emulator.

Routes::

    POST   /functions                                  create or update
    GET    /functions                                  list
    DELETE /functions/{name}
    POST   /2015-03-31/functions/{name}/invocations    invoke
    GET    /billing                                    samples, completion order
    GET    /billing/totals                             totals, overall and per function
    GET    /stats                                      concurrency counters
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote

from ..config import ConfigError, FunctionConfig
from .platform import EmulatorError, Platform, PlatformConfig

log = logging.getLogger(__name__)

INVOKE_PREFIX = "/2015-03-31/functions/"


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    server_version = "skyfork-emulator"

    @property
    def platform(self) -> Platform:
        return self.server.platform

    def log_message(self, fmt, *args):
        log.debug(fmt, *args)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _send(self, status: int, body: bytes = b"", headers: dict | None = None):
        self.send_response(status)
        headers = dict(headers or {})
        headers.setdefault("Content-Type", "application/json")
        for k, v in headers.items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _json(self, status: int, obj) -> None:
        self._send(status, json.dumps(obj).encode())

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/functions":
            return self._json(200, self.platform.list_functions())
        if path == "/billing":
            return self._json(200, [s.to_dict() for s in self.platform.billing_report()])
        if path == "/billing/totals":
            total, per_function = self.platform.billing_totals()
            return self._json(200, {"total": total.to_dict(),
                                    "functions": {k: v.to_dict() for k, v in per_function.items()}})
        if path == "/stats":
            return self._json(200, self.platform.stats())
        self._json(404, {"error": f"no route {path}"})

    def do_POST(self):
        path = self.path.split("?", 1)[0]
        body = self._body()
        if path.startswith(INVOKE_PREFIX) and path.endswith("/invocations"):
            name = unquote(path[len(INVOKE_PREFIX):-len("/invocations")])
            result = self.platform.invoke(name, body)
            return self._send(result.status, result.body, result.headers)
        if path == "/functions":
            return self._create(body)
        self._json(404, {"error": f"no route {path}"})

    def do_DELETE(self):
        path = self.path.split("?", 1)[0]
        if path.startswith("/functions/"):
            try:
                self.platform.delete_function(unquote(path[len("/functions/"):]))
            except EmulatorError as exc:
                return self._json(exc.status, {"error": str(exc)})
            return self._json(200, {"status": "deleted"})
        self._json(404, {"error": f"no route {path}"})

    def _create(self, body: bytes):
        try:
            fn_def = json.loads(body)
            if not isinstance(fn_def, dict):
                raise ValueError("expected a JSON object")
            config = FunctionConfig.from_dict(fn_def.get("config") or {})
            status = self.platform.create_function(
                name=fn_def.get("name", ""), config=config, package_path=fn_def.get("package", ""),
                entry_name=fn_def.get("entry", ""), identifier=fn_def.get("identifier", ""),
            )
        except (ValueError, TypeError, ConfigError) as exc:
            return self._json(400, {"error": str(exc)})
        except EmulatorError as exc:
            return self._json(exc.status, {"error": str(exc)})
        self._json(201 if status == "created" else 200, {"status": status})


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 1024

    def __init__(self, address, platform: Platform):
        self.platform = platform
        super().__init__(address, _Handler)


class Emulator:
    """A :class:`Platform` behind its HTTP front end.

    ``with Emulator(config) as emu:`` serves on a background thread;
    ``emu.url`` is the backend endpoint for dispatchers and the deployer.
    """

    def __init__(self, config: PlatformConfig | None = None, host: str = "127.0.0.1", port: int = 0):
        self.platform = Platform(config)
        self._server = _Server((host, port), self.platform)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        host = self._server.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self) -> Emulator:
        self._thread = threading.Thread(target=self._server.serve_forever, name="emulator", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        try:
            self._server.serve_forever()
        finally:
            self.platform.shutdown()
            self._server.server_close()

    def stop(self) -> None:
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join()
            self._thread = None
        self.platform.shutdown()
        self._server.server_close()

    def __enter__(self) -> Emulator:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
