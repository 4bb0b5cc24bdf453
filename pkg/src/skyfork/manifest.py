"""The ``cppless-manifest.json`` catalog of entry points.

Layout::

    {"entry_points": [
        {"original_function_name": ..., "filename": ...,
         "user_meta": {"ephemeral_storage": 512, "memory": 1024,
                       "timeout": 10, "identifier": "<file>@<line>:<col>#<n>"}}
    ]}

Reading is strict: unknown or missing keys are errors that name the JSON path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .config import ConfigError, FunctionConfig

MANIFEST_FILENAME = "cppless-manifest.json"

_ENTRY_KEYS = ("original_function_name", "filename", "user_meta")
_META_KEYS = ("ephemeral_storage", "memory", "timeout", "identifier")


class ManifestError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ManifestEntry:
    original_function_name: str
    filename: str
    config: FunctionConfig
    identifier: str

    @property
    def cloud_name(self) -> str:
        from .codegen import cloud_name_for

        return cloud_name_for(self.identifier)

    def to_json_obj(self) -> dict:
        return {
            "original_function_name": self.original_function_name,
            "filename": self.filename,
            "user_meta": {
                "ephemeral_storage": self.config.ephemeral_storage,
                "memory": self.config.memory,
                "timeout": self.config.timeout,
                "identifier": self.identifier,
            },
        }


def emit_manifest(entries: list[ManifestEntry]) -> str:
    if not entries:
        raise ManifestError("manifest requires at least one entry point", "")
    seen: dict[str, int] = {}
    for i, entry in enumerate(entries):
        if entry.identifier in seen:
            j = seen[entry.identifier]
            raise ManifestError(
                f"duplicate entry point identifier {entry.identifier!r}: "
                f"{entries[j].original_function_name} (entry {j}) and "
                f"{entry.original_function_name} (entry {i}) share one source location",
                "",
            )
        seen[entry.identifier] = i
    doc = {"entry_points": [e.to_json_obj() for e in entries]}
    return json.dumps(doc, indent=2) + "\n"


def _expect_keys(obj, keys, path):
    if not isinstance(obj, dict):
        raise ManifestError(f"expected object, got {type(obj).__name__}", path)
    for key in obj:
        if key not in keys:
            raise ManifestError(f"unknown key {key!r}", path)
    for key in keys:
        if key not in obj:
            raise ManifestError(f"missing key {key!r}", path)


def _expect(value, kind, path):
    if kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ManifestError(f"expected {kind.__name__}, got {type(value).__name__}", path)
    return value


def read_manifest(text: str) -> list[ManifestEntry]:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ManifestError(f"invalid JSON: {exc}") from None
    _expect_keys(doc, ("entry_points",), "$")
    points = doc["entry_points"]
    if not isinstance(points, list):
        raise ManifestError("expected array", "$.entry_points")
    entries = []
    for i, raw in enumerate(points):
        path = f"$.entry_points[{i}]"
        _expect_keys(raw, _ENTRY_KEYS, path)
        meta = raw["user_meta"]
        _expect_keys(meta, _META_KEYS, f"{path}.user_meta")
        for key in ("ephemeral_storage", "memory", "timeout"):
            _expect(meta[key], int, f"{path}.user_meta.{key}")
        try:
            config = FunctionConfig(
                memory=meta["memory"], timeout=meta["timeout"],
                ephemeral_storage=meta["ephemeral_storage"],
            )
        except ConfigError as exc:
            raise ManifestError(str(exc), f"{path}.user_meta") from None
        entries.append(ManifestEntry(
            original_function_name=_expect(raw["original_function_name"], str, f"{path}.original_function_name"),
            filename=_expect(raw["filename"], str, f"{path}.filename"),
            config=config,
            identifier=_expect(meta["identifier"], str, f"{path}.user_meta.identifier"),
        ))
    if not entries:
        raise ManifestError("manifest requires at least one entry point", "$.entry_points")
    ids = [e.identifier for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate entry point identifiers", "$.entry_points")
    return entries


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    return read_manifest(Path(path).read_text(encoding="utf-8"))
