"""Register a build's entry points with a backend, package workers, debug-invoke.

Exit codes used by the command line front end:

    0  success
    1  partial failure (some entries failed to deploy)
    2  bad input: manifest schema, missing package, malformed payload
    3  backend unreachable
    4  backend answered 404
    5  backend answered 429
    6  backend answered 500 (or another server error)
"""

from __future__ import annotations

import json
import os
import sys
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote

from .manifest import ManifestEntry, ManifestError, load_manifest
from .wireformat import Envelope, Str, WireError, decode_value, unwrap_base64_json

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INPUT = 2
EXIT_UNREACHABLE = 3
EXIT_NOT_FOUND = 4
EXIT_THROTTLED = 5
EXIT_SERVER = 6

DESCRIPTOR_NAME = "cppless-launch.json"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class DeployError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_INPUT):
        super().__init__(message)
        self.exit_code = exit_code


def exit_code_for_status(status: int) -> int:
    if 200 <= status < 300:
        return EXIT_OK
    if status == 404:
        return EXIT_NOT_FOUND
    if status == 429:
        return EXIT_THROTTLED
    if status >= 500:
        return EXIT_SERVER
    return EXIT_INPUT


def _request(backend: str, method: str, path: str, body: bytes | None = None,
             timeout: float = 30.0) -> tuple[int, dict, bytes]:
    req = urllib.request.Request(backend.rstrip("/") + path, data=body, method=method)
    if body is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, dict(resp.headers.items()), resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, dict(exc.headers.items()), exc.read()
    except (urllib.error.URLError, OSError) as exc:
        reason = getattr(exc, "reason", exc)
        raise DeployError(f"backend {backend} unreachable: {reason}", EXIT_UNREACHABLE) from None


@dataclass
class DeployPlan:
    manifest: list[ManifestEntry]
    package_path: str
    backend_endpoint: str

    def __post_init__(self):
        seen: dict[str, str] = {}
        for entry in self.manifest:
            other = seen.setdefault(entry.cloud_name, entry.identifier)
            if other != entry.identifier:
                raise DeployError(f"identifiers {other!r} and {entry.identifier!r} share cloud name "
                                  f"{entry.cloud_name}")


@dataclass
class DeploySummary:
    created: int = 0
    updated: int = 0
    unchanged: int = 0
    failed: dict[str, str] = field(default_factory=dict)
    report: list[tuple[str, str]] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failed else EXIT_OK


def plan_deploy(manifest_path, package_path, backend_endpoint: str) -> DeployPlan:
    try:
        entries = load_manifest(manifest_path)
    except ManifestError as exc:
        raise DeployError(f"manifest {manifest_path}: {exc}") from None
    except OSError as exc:
        raise DeployError(f"cannot read manifest {manifest_path}: {exc.strerror}") from None
    if not package_path or not os.path.isfile(package_path):
        raise DeployError(f"package {package_path!r} does not exist")
    return DeployPlan(entries, os.path.abspath(package_path), backend_endpoint)


def deploy(manifest_path, package_path, backend_endpoint: str) -> DeploySummary:
    """Create or update one function per manifest entry, sequentially."""
    plan = plan_deploy(manifest_path, package_path, backend_endpoint)
    summary = DeploySummary()
    for entry in plan.manifest:
        body = json.dumps({
            "name": entry.cloud_name,
            "entry": entry.cloud_name,
            "identifier": entry.identifier,
            "config": entry.config.to_dict(),
            "package": plan.package_path,
        }).encode()
        status, _, data = _request(plan.backend_endpoint, "POST", "/functions", body)
        if status in (200, 201):
            outcome = json.loads(data).get("status", "updated")
            if outcome == "created":
                summary.created += 1
            elif outcome == "unchanged":
                summary.unchanged += 1
            else:
                summary.updated += 1
        else:
            outcome = f"failed: HTTP {status} {data.decode('utf-8', 'replace')}"
            summary.failed[entry.cloud_name] = outcome
        summary.report.append((entry.cloud_name, outcome))
    return summary


def list_functions(backend_endpoint: str) -> list[dict]:
    status, _, data = _request(backend_endpoint, "GET", "/functions")
    if status != 200:
        raise DeployError(f"listing failed: HTTP {status}", exit_code_for_status(status))
    return json.loads(data)


def package(binary_path, out_zip) -> Path:
    """Write a deterministic zip holding the worker binary and a launch descriptor."""
    if not binary_path or not str(out_zip):
        raise DeployError("package needs an input binary and an output path")
    src = Path(binary_path)
    if not src.is_file():
        raise DeployError(f"binary {str(src)!r} does not exist")
    descriptor = json.dumps({
        "binary": src.name,
        "entry_env": "CPLS_ENTRY",
        "runtime_env": "CPLS_RUNTIME_API",
    }, indent=2, sort_keys=True) + "\n"
    out = Path(out_zip)
    with zipfile.ZipFile(out, "w", zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo(src.name, _ZIP_EPOCH)
        info.external_attr = 0o100755 << 16
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, src.read_bytes())
        info = zipfile.ZipInfo(DESCRIPTOR_NAME, _ZIP_EPOCH)
        info.external_attr = 0o100644 << 16
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, descriptor)
    return out


@dataclass
class DebugInvocation:
    status: int
    headers: dict
    envelope: Envelope | None
    raw: bytes

    @property
    def exit_code(self) -> int:
        return exit_code_for_status(self.status)


def invoke_debug(backend_endpoint: str, cloud_name: str, payload_file) -> DebugInvocation:
    """One synchronous invocation with a carrier read from ``payload_file``."""
    try:
        text = Path(payload_file).read_text(encoding="utf-8")
        unwrap_base64_json(text)
    except OSError as exc:
        raise DeployError(f"cannot read payload {payload_file}: {exc.strerror}") from None
    except (WireError, UnicodeDecodeError) as exc:
        raise DeployError(f"payload {payload_file}: {exc}") from None
    path = f"/2015-03-31/functions/{quote(cloud_name)}/invocations"
    status, headers, data = _request(backend_endpoint, "POST", path, text.encode("utf-8"))
    envelope = None
    if status == 200:
        try:
            envelope = Envelope.from_bytes(unwrap_base64_json(data))
        except WireError:
            envelope = None
    return DebugInvocation(status, headers, envelope, data)


def print_invocation(result: DebugInvocation, out=None) -> None:
    out = out or sys.stdout
    print(f"status: {result.status}", file=out)
    for key, value in sorted(result.headers.items()):
        if key.lower().startswith("x-cpls-"):
            print(f"{key}: {value}", file=out)
    if result.envelope is not None:
        kinds = {0: "request", 1: "ok", 2: "error"}
        print(f"envelope: {kinds.get(result.envelope.kind, result.envelope.kind)}", file=out)
        if result.envelope.kind == 2:
            try:
                print(f"message: {decode_value(result.envelope.body, Str)}", file=out)
                return
            except WireError:
                pass
        print(f"body: {result.envelope.body.hex()}", file=out)
    else:
        print(f"body: {result.raw.decode('utf-8', 'replace')}", file=out)
