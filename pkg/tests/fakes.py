"""A scriptable stand-in for the FaaS front end."""

import threading
import time
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from skyfork.wireformat import Envelope, RESPONSE_OK, unwrap_base64_json, wrap_base64_json


class FakeBackend:
    """Echoes each request's capture bytes back as an ok result.

    ``responder(name, attempt)`` may return an HTTP status to send instead.
    Each request is tallied by the client's (host, port), i.e. per connection.
    """

    def __init__(self, responder=None, delay_ms=0.0):
        self.responder = responder
        self.delay_ms = delay_ms
        self.per_connection = Counter()
        self.per_name = Counter()
        self.lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            disable_nagle_algorithm = True

            def log_message(self, *a):
                pass

            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                name = self.path.split("/")[3]
                with outer.lock:
                    outer.per_connection[self.client_address] += 1
                    outer.per_name[name] += 1
                    attempt = outer.per_name[name]
                status = outer.responder(name, attempt) if outer.responder else None
                if outer.delay_ms:
                    time.sleep(outer.delay_ms / 1000)
                if status:
                    payload = b'{"error": "scripted"}'
                    headers = []
                else:
                    status = 200
                    request = Envelope.from_bytes(unwrap_base64_json(body))
                    payload = wrap_base64_json(Envelope(RESPONSE_OK, request.body).to_bytes()).encode()
                    headers = [("X-Cpls-Request-Id", f"fake-{attempt}"), ("X-Cpls-Cold", "0"),
                               ("X-Cpls-Duration-Ms", "1.0"), ("X-Cpls-Init-Ms", "0.0")]
                self.send_response(status)
                for k, v in headers:
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
