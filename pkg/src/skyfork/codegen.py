"""Dual-mode expansion of offloadable tasks.

A task is a module-level function decorated with :func:`task`. Its parameters
are the capture list: each one is annotated with a wire schema and travels by
value in declaration order. The return annotation is the result schema::

    @task(config=FunctionConfig(memory=512))
    def pi_slice(n: I64, np: I64) -> F64:
        return pi_estimate(n // np)

The decorator reads ``CPLS_MODE`` when the module is imported:

* ``host`` (default): the task becomes a stub whose :meth:`Task.bind` yields a
  value the dispatcher can serialize and submit under the task's cloud name.
* ``serverless``: additionally, an :class:`EntryWrapper` is registered in the
  process-wide :data:`ENTRY_REGISTRY` under the cloud name, for the worker
  runtime to call.

Either way the task gets the same :class:`TaskIdentifier`, derived only from
its annotation site, so host and worker builds agree on names.

Only parameters are transmitted. Module globals read by the body are resolved
on the worker from its own import of the module; closures over enclosing
function locals are rejected because they would be shared references.
"""

from __future__ import annotations

import ast
import hashlib
import importlib
import inspect
import os
import stat
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path, PurePosixPath
from typing import Any, Callable

from .config import DEFAULT_FUNCTION_CONFIG, FunctionConfig
from .manifest import MANIFEST_FILENAME, ManifestEntry, emit_manifest
from .wireformat import (
    RESPONSE_ERR, RESPONSE_OK, REQUEST, DecodeError, Envelope, Record, Schema, Str,
    decode_value, encode_value,
)

MODE_ENV = "CPLS_MODE"
SOURCE_ROOT_ENV = "CPLS_SOURCE_ROOT"
HOST = "host"
SERVERLESS = "serverless"
MODES = (HOST, SERVERLESS)

CLOUD_PREFIX = "cppless-"
WORKER_FILENAME = "cppless-worker"


class CodegenError(TypeError):
    """A task definition that cannot be expanded."""


class RemoteError(RuntimeError):
    """The worker reported a failure (error envelope)."""


def build_mode() -> str:
    mode = os.environ.get(MODE_ENV, HOST) or HOST
    if mode not in MODES:
        raise CodegenError(f"{MODE_ENV} must be one of {MODES}, got {mode!r}")
    return mode


# -- naming ------------------------------------------------------------------

def cloud_name_for(human_id: str) -> str:
    return CLOUD_PREFIX + _stable_hash(human_id)


def _stable_hash(human_id: str) -> str:
    return hashlib.sha256(human_id.encode("utf-8")).hexdigest()[:40]


@dataclass(frozen=True)
class TaskIdentifier:
    human_id: str
    stable_hash: str

    @property
    def cloud_name(self) -> str:
        return CLOUD_PREFIX + self.stable_hash[:40]


def derive_task_identifier(source_file: str, line: int, column: int, ordinal: int) -> TaskIdentifier:
    """Name an annotation site. Pure; the build mode never enters the hash."""
    human_id = f"{source_file}@{line}:{column}#{ordinal}"
    return TaskIdentifier(human_id, _stable_hash(human_id))


# -- definitions -------------------------------------------------------------

@dataclass(frozen=True)
class TaskDefinition:
    source_file: str
    line: int
    column: int
    ordinal: int
    captured_fields: tuple[tuple[str, Schema], ...]
    return_schema: Schema
    config: FunctionConfig
    body: Callable[..., Any] = field(compare=False)
    function_name: str = ""

    def __post_init__(self):
        if self.line < 1 or self.column < 1 or self.ordinal < 0:
            raise CodegenError(f"invalid source position {self.line}:{self.column}#{self.ordinal}")
        if "\\" in self.source_file or PurePosixPath(self.source_file).is_absolute():
            raise CodegenError(f"source_file must be relative with forward slashes: {self.source_file!r}")
        for name, schema in self.captured_fields:
            if not isinstance(schema, Schema):
                raise CodegenError(f"capture {name!r} has no serialization schema (got {schema!r})")
        if not isinstance(self.return_schema, Schema):
            raise CodegenError(f"return value has no serialization schema (got {self.return_schema!r})")

    @property
    def identifier(self) -> TaskIdentifier:
        return derive_task_identifier(self.source_file, self.line, self.column, self.ordinal)

    @property
    def cloud_name(self) -> str:
        return self.identifier.cloud_name

    @property
    def capture_schema(self) -> Record:
        return Record(self.captured_fields)

    def manifest_entry(self) -> ManifestEntry:
        return ManifestEntry(
            original_function_name=self.function_name,
            filename=WORKER_FILENAME,
            config=self.config,
            identifier=self.identifier.human_id,
        )


# -- expansions --------------------------------------------------------------

class HostStub:
    """Host-mode expansion: serializes captures and decodes responses."""

    def __init__(self, definition: TaskDefinition):
        self.definition = definition
        self.cloud_name = definition.cloud_name
        self._capture_schema = definition.capture_schema

    def encode_request(self, values: Mapping[str, Any]) -> bytes:
        body = encode_value(values, self._capture_schema)
        return Envelope(REQUEST, body).to_bytes()

    def decode_response(self, data: bytes) -> Any:
        envelope = Envelope.from_bytes(data)
        if envelope.kind == RESPONSE_ERR:
            raise RemoteError(decode_value(envelope.body, Str))
        if envelope.kind != RESPONSE_OK:
            raise DecodeError(f"expected a response envelope, got kind {envelope.kind}", 6)
        return decode_value(envelope.body, self.definition.return_schema)


class EntryWrapper:
    """Serverless-mode expansion: capture bytes in, result bytes out."""

    def __init__(self, definition: TaskDefinition):
        self.definition = definition
        self.cloud_name = definition.cloud_name
        self._capture_schema = definition.capture_schema

    def decode_captures(self, body: bytes) -> dict:
        return decode_value(body, self._capture_schema)

    def __call__(self, body: bytes) -> bytes:
        captures = self.decode_captures(body)
        result = self.definition.body(**captures)
        return encode_value(result, self.definition.return_schema)


class EntryRegistry(Mapping):
    """cloud_name -> :class:`EntryWrapper`; frozen before the worker loop starts."""

    def __init__(self):
        self._entries: dict[str, EntryWrapper] = {}
        self._frozen = False

    def register(self, wrapper: EntryWrapper) -> None:
        if self._frozen:
            raise CodegenError("entry registry is frozen")
        name = wrapper.cloud_name
        existing = self._entries.get(name)
        if existing is not None and existing.definition.body is not wrapper.definition.body:
            raise CodegenError(
                f"two tasks map to {name}: {existing.definition.function_name} and "
                f"{wrapper.definition.function_name}"
            )
        self._entries[name] = wrapper

    def freeze(self) -> EntryRegistry:
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __getitem__(self, name: str) -> EntryWrapper:
        return self._entries[name]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)


ENTRY_REGISTRY = EntryRegistry()

# every task defined in this process, in definition order
_DEFINED: list[Task] = []
_SITE_COUNTS: dict[tuple[str, int, int], int] = {}


def expand_task(definition: TaskDefinition, mode: str, registry: EntryRegistry | None = None):
    """Expand ``definition`` for ``mode``; serverless expansions are registered."""
    if mode == HOST:
        return HostStub(definition)
    if mode == SERVERLESS:
        wrapper = EntryWrapper(definition)
        (ENTRY_REGISTRY if registry is None else registry).register(wrapper)
        return wrapper
    raise CodegenError(f"unknown build mode {mode!r}")


# -- the decorator -----------------------------------------------------------

class Task:
    """What ``@task`` leaves in the module namespace.

    Calling it runs the body locally. :meth:`bind` snapshots arguments for
    remote dispatch.
    """

    def __init__(self, definition: TaskDefinition, mode: str, registry: EntryRegistry | None = None):
        self.definition = definition
        self.mode = mode
        self.stub = HostStub(definition)
        self.entry = expand_task(definition, SERVERLESS, registry) if mode == SERVERLESS else None
        self._signature = inspect.signature(definition.body)
        self.__wrapped__ = definition.body
        self.__name__ = definition.body.__name__
        self.__qualname__ = definition.body.__qualname__
        self.__module__ = definition.body.__module__
        self.__doc__ = definition.body.__doc__

    @property
    def cloud_name(self) -> str:
        return self.definition.cloud_name

    def __call__(self, *args, **kwargs):
        return self.definition.body(*args, **kwargs)

    def bind(self, *args, **kwargs) -> BoundTask:
        try:
            bound = self._signature.bind(*args, **kwargs)
        except TypeError as exc:
            raise TypeError(f"{self.__name__}: {exc}") from None
        bound.apply_defaults()
        return BoundTask(self, dict(bound.arguments))

    def __reduce__(self):
        # pickled by reference so process pools can run the body
        return (_lookup_task, (self.__module__, self.__qualname__))

    def __repr__(self):
        return f"<task {self.definition.function_name} {self.cloud_name}>"


def _lookup_task(module: str, qualname: str) -> Task:
    obj: Any = importlib.import_module(module)
    for part in qualname.split("."):
        obj = getattr(obj, part)
    return obj


@dataclass(frozen=True)
class BoundTask:
    """A task plus captured values, ready for dispatch."""

    task: Task
    values: dict

    @property
    def cloud_name(self) -> str:
        return self.task.cloud_name

    @property
    def stub(self) -> HostStub:
        return self.task.stub

    def encode_request(self) -> bytes:
        return self.task.stub.encode_request(self.values)

    def run_local(self):
        return self.task.definition.body(**self.values)


def task(fn: Callable | None = None, *, config: FunctionConfig | None = None,
         registry: EntryRegistry | None = None, mode: str | None = None):
    """Mark ``fn`` as an offloadable task (usable bare or with arguments)."""
    caller = sys._getframe(1)
    site_line = caller.f_lineno
    module_name = caller.f_globals.get("__name__", "__main__")
    module_file = caller.f_globals.get("__file__") or caller.f_code.co_filename

    def apply(func: Callable) -> Task:
        return _define(func, module_name, module_file, site_line, config, registry,
                       mode or build_mode())

    if fn is not None:
        return apply(fn)
    return apply


def _define(func, module_name, module_file, site_line, config, registry, mode) -> Task:
    if not inspect.isfunction(func):
        raise CodegenError(f"@task needs a plain function, got {type(func).__name__}")
    if func.__code__.co_freevars:
        names = ", ".join(func.__code__.co_freevars)
        raise CodegenError(
            f"task {func.__qualname__} captures enclosing variables by reference ({names}); "
            "only by-value parameters are transmitted"
        )
    try:
        hints = inspect.get_annotations(func, eval_str=True)
    except Exception as exc:
        raise CodegenError(f"task {func.__qualname__}: cannot evaluate annotations: {exc}") from None
    fields = []
    for param in inspect.signature(func).parameters.values():
        if param.kind in (param.VAR_POSITIONAL, param.VAR_KEYWORD, param.POSITIONAL_ONLY):
            raise CodegenError(f"task {func.__qualname__}: parameter {param.name!r} must be a named capture")
        schema = hints.get(param.name)
        if not isinstance(schema, Schema):
            raise CodegenError(
                f"task {func.__qualname__}: capture {param.name!r} has no serialization schema "
                f"(annotation {schema!r})"
            )
        fields.append((param.name, schema))
    ret = hints.get("return")
    if not isinstance(ret, Schema):
        raise CodegenError(f"task {func.__qualname__}: return value has no serialization schema ({ret!r})")

    source_file = _relative_source(module_name, module_file)
    line, column = _annotation_site(module_file, site_line, func.__name__)
    key = (source_file, line, column)
    ordinal = _SITE_COUNTS.get(key, 0)
    _SITE_COUNTS[key] = ordinal + 1

    definition = TaskDefinition(
        source_file=source_file, line=line, column=column, ordinal=ordinal,
        captured_fields=tuple(fields), return_schema=ret,
        config=config or DEFAULT_FUNCTION_CONFIG, body=func,
        function_name=f"{func.__module__}:{func.__qualname__}",
    )
    handle = Task(definition, mode, registry)
    _DEFINED.append(handle)
    return handle


def _relative_source(module_name: str, module_file: str) -> str:
    path = Path(module_file).resolve()
    root = os.environ.get(SOURCE_ROOT_ENV)
    if root:
        try:
            return path.relative_to(Path(root).resolve()).as_posix()
        except ValueError:
            pass
    if module_name == "__main__":
        return path.name
    depth = len(module_name.split("."))
    if path.name == "__init__.py":
        depth += 1
    return "/".join(path.parts[-depth:])


@lru_cache(maxsize=64)
def _parse(filename: str, mtime: float):
    try:
        return ast.parse(Path(filename).read_text(encoding="utf-8"), filename)
    except (OSError, SyntaxError, UnicodeDecodeError):
        return None


def _decorator_name(node) -> str | None:
    if isinstance(node, ast.Call):
        node = node.func
    if isinstance(node, ast.Name):
        return node.id
    if isinstance(node, ast.Attribute):
        return node.attr
    return None


def _annotation_site(filename: str, line: int, func_name: str) -> tuple[int, int]:
    """(line, 1-based column) of the decorator expression that defined the task."""
    try:
        tree = _parse(filename, os.stat(filename).st_mtime)
    except OSError:
        tree = None
    if tree is not None:
        for node in ast.walk(tree):
            if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) or node.name != func_name:
                continue
            for dec in node.decorator_list:
                if dec.lineno == line:
                    return dec.lineno, dec.col_offset + 1
            if node.lineno == line:
                # bare decorators report the def line
                for dec in node.decorator_list:
                    if _decorator_name(dec) == "task":
                        return dec.lineno, dec.col_offset + 1
    import linecache

    text = linecache.getline(filename, line)
    return line, len(text) - len(text.lstrip()) + 1


def defined_tasks(modules: list[str] | None = None) -> list[Task]:
    if modules is None:
        return list(_DEFINED)
    return [t for t in _DEFINED if t.__module__ in modules]


# -- build -------------------------------------------------------------------

@dataclass
class BuildResult:
    mode: str
    manifest_path: Path
    worker_path: Path | None
    entries: list[ManifestEntry]


def _import_root(module) -> str:
    path = Path(module.__file__).resolve()
    depth = len(module.__name__.split("."))
    if path.name == "__init__.py":
        depth += 1
    return str(path.parents[depth - 1])


_WORKER_TEMPLATE = """#!{python}
# Worker entry point generated by skyfork build. Do not edit.
import os
import sys

sys.path[:0] = {paths!r}
os.environ["{mode_env}"] = "{serverless}"

from skyfork.runtime import main

sys.exit(main({modules!r}))
"""


def generate(modules: list[str], out_dir: str | Path, mode: str | None = None,
             python: str | None = None) -> BuildResult:
    """Import ``modules`` in the current mode and write the build outputs.

    Always writes the manifest; serverless builds also write the worker
    executable. The modules must not have been imported under another mode.
    """
    mode = mode or build_mode()
    if mode != build_mode():
        raise CodegenError(f"{MODE_ENV} is {build_mode()!r} but a {mode!r} build was requested")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imported = [importlib.import_module(m) for m in modules]
    tasks = defined_tasks(modules)
    if not tasks:
        raise CodegenError(f"no tasks defined in {modules}")
    stale = [t for t in tasks if t.mode != mode]
    if stale:
        raise CodegenError(f"{stale[0]!r} was expanded in {stale[0].mode} mode; build in a fresh process")
    entries = [t.definition.manifest_entry() for t in tasks]
    manifest_path = out / MANIFEST_FILENAME
    manifest_path.write_text(emit_manifest(entries), encoding="utf-8")

    worker_path = None
    if mode == SERVERLESS:
        names = {t.cloud_name for t in tasks}
        registered = {n for n in ENTRY_REGISTRY if ENTRY_REGISTRY[n].definition.body.__module__ in modules}
        if names != registered:
            raise CodegenError(f"entry registry does not match manifest: {sorted(names ^ registered)}")
        import skyfork

        paths = []
        for root in [_import_root(m) for m in imported] + [str(Path(skyfork.__file__).resolve().parents[1])]:
            if root not in paths:
                paths.append(root)
        worker_path = out / WORKER_FILENAME
        worker_path.write_text(_WORKER_TEMPLATE.format(
            python=python or sys.executable, paths=paths, modules=list(modules),
            mode_env=MODE_ENV, serverless=SERVERLESS,
        ), encoding="utf-8")
        worker_path.chmod(worker_path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return BuildResult(mode, manifest_path, worker_path, entries)
