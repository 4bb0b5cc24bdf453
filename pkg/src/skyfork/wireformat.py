"""Binary wire format for task captures and results.

Values are described by a small closed schema grammar (see :class:`Schema`).
Encoding is little-endian and untagged: fixed-width primitives are written
verbatim, strings/bytes/sequences carry a u64 length prefix, optionals a
one-byte presence tag, and records their fields in declared order.

Three transports share the grammar:

* raw binary (:func:`encode_value` / :func:`decode_value`),
* the Base64-in-JSON carrier that REST ingress requires
  (:func:`wrap_base64_json` / :func:`unwrap_base64_json`),
* a plain JSON mapping (:func:`encode_json_value` / :func:`decode_json_value`).

Payloads travel inside an :class:`Envelope` frame: ``b"CPLS"``, a u16 version
and a u8 kind, followed by the body.
"""

from __future__ import annotations

import array
import base64
import binascii
import json
import math
import struct
import sys
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Iterable

__all__ = [
    "Schema", "Bool", "I8", "I16", "I32", "I64", "U8", "U16", "U32", "U64",
    "F32", "F64", "Str", "Bytes", "Seq", "Opt", "Record",
    "WireError", "EncodeError", "DecodeError", "CarrierError",
    "Envelope", "REQUEST", "RESPONSE_OK", "RESPONSE_ERR",
    "encode_value", "decode_value", "decode_prefix",
    "wrap_base64_json", "unwrap_base64_json",
    "encode_json_value", "decode_json_value",
    "MAX_PAYLOAD_BYTES",
]

# AWS request cap; also used as the default response cap.
MAX_PAYLOAD_BYTES = 6 * 1024 * 1024

_LITTLE = sys.byteorder == "little"


class WireError(ValueError):
    pass


class EncodeError(WireError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class DecodeError(WireError):
    def __init__(self, message: str, offset: int | None = None, path: str | None = None):
        text = message
        if path is not None and path != "$":
            text = f"{path}: {text}"
        super().__init__(text)
        self.offset = offset
        self.path = path


class CarrierError(WireError):
    pass


def _need(buf, offset: int, size: int) -> None:
    if len(buf) - offset < size:
        raise DecodeError(
            f"truncated input: need {size} bytes at offset {offset}, have {len(buf) - offset}",
            offset,
        )


_ARRAY_CODES = {
    "b": "b", "B": "B", "h": "h", "H": "H",
    "i": "il", "I": "IL", "q": "lq", "Q": "LQ", "f": "f", "d": "d",
}


def _typecode(fmt: str) -> str | None:
    """Native ``array`` typecode with the same width as struct format ``fmt``."""
    size = struct.calcsize("<" + fmt)
    for code in _ARRAY_CODES[fmt]:
        if array.array(code).itemsize == size:
            return code
    return None


class Schema:
    """Base class of the schema grammar. Instances are immutable."""

    # minimum number of bytes one encoded value occupies
    min_size = 0

    def _encode(self, value, out: bytearray, path: str) -> None:
        raise NotImplementedError

    def _decode(self, buf, offset: int, path: str):
        raise NotImplementedError

    def _to_json(self, value, path: str):
        raise NotImplementedError

    def _from_json(self, obj, path: str):
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.name

    name = "schema"


class _Bool(Schema):
    name = "bool"
    min_size = 1

    def _encode(self, value, out, path):
        if not isinstance(value, bool):
            raise EncodeError(path, f"expected bool, got {type(value).__name__}")
        out.append(1 if value else 0)

    def _decode(self, buf, offset, path):
        _need(buf, offset, 1)
        b = buf[offset]
        if b > 1:
            raise DecodeError(f"invalid bool byte {b} at offset {offset}", offset, path)
        return b == 1, offset + 1

    def _to_json(self, value, path):
        if not isinstance(value, bool):
            raise EncodeError(path, f"expected bool, got {type(value).__name__}")
        return value

    def _from_json(self, obj, path):
        if not isinstance(obj, bool):
            raise DecodeError(f"expected bool, got {type(obj).__name__}", path=path)
        return obj


class _Int(Schema):
    def __init__(self, bits: int, signed: bool):
        self.bits = bits
        self.signed = signed
        self.name = f"{'i' if signed else 'u'}{bits}"
        self.fmt = {8: "b", 16: "h", 32: "i", 64: "q"}[bits]
        if not signed:
            self.fmt = self.fmt.upper()
        self.min_size = bits // 8
        self._struct = struct.Struct("<" + self.fmt)
        if signed:
            self.lo, self.hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
        else:
            self.lo, self.hi = 0, (1 << bits) - 1

    def check(self, value, path):
        if not isinstance(value, int) or isinstance(value, bool):
            raise EncodeError(path, f"expected {self.name}, got {type(value).__name__}")
        if not self.lo <= value <= self.hi:
            raise EncodeError(path, f"{value} out of range for {self.name}")
        return value

    def _encode(self, value, out, path):
        out += self._struct.pack(self.check(value, path))

    def _decode(self, buf, offset, path):
        _need(buf, offset, self.min_size)
        return self._struct.unpack_from(buf, offset)[0], offset + self.min_size

    def _to_json(self, value, path):
        return int(self.check(value, path))

    def _from_json(self, obj, path):
        # floats never stand in for integers: 2**63 must survive exactly
        if not isinstance(obj, int) or isinstance(obj, bool):
            raise DecodeError(f"expected integer for {self.name}, got {type(obj).__name__}", path=path)
        if not self.lo <= obj <= self.hi:
            raise DecodeError(f"{obj} out of range for {self.name}", path=path)
        return obj


class _Float(Schema):
    def __init__(self, bits: int):
        self.bits = bits
        self.name = f"f{bits}"
        self.fmt = "f" if bits == 32 else "d"
        self.min_size = bits // 8
        self._struct = struct.Struct("<" + self.fmt)

    def check(self, value, path):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise EncodeError(path, f"expected {self.name}, got {type(value).__name__}")
        return float(value)

    def _encode(self, value, out, path):
        try:
            out += self._struct.pack(self.check(value, path))
        except OverflowError:
            raise EncodeError(path, f"{value} out of range for {self.name}") from None

    def _decode(self, buf, offset, path):
        _need(buf, offset, self.min_size)
        return self._struct.unpack_from(buf, offset)[0], offset + self.min_size

    def _to_json(self, value, path):
        value = self.check(value, path)
        if not math.isfinite(value):
            raise EncodeError(path, "non-finite float has no JSON form")
        if self.bits == 32:
            try:
                self._struct.pack(value)
            except OverflowError:
                raise EncodeError(path, f"{value} out of range for f32") from None
        return value

    def _from_json(self, obj, path):
        if not isinstance(obj, (int, float)) or isinstance(obj, bool):
            raise DecodeError(f"expected number for {self.name}, got {type(obj).__name__}", path=path)
        value = float(obj)
        if self.bits == 32:
            value = self._struct.unpack(self._struct.pack(value))[0]
        return value


class _Str(Schema):
    name = "string"
    min_size = 8

    def _encode(self, value, out, path):
        if not isinstance(value, str):
            raise EncodeError(path, f"expected str, got {type(value).__name__}")
        try:
            raw = value.encode("utf-8")
        except UnicodeEncodeError:
            raise EncodeError(path, "string is not valid UTF-8 (lone surrogate)") from None
        out += struct.pack("<Q", len(raw))
        out += raw

    def _decode(self, buf, offset, path):
        raw, end = _read_blob(buf, offset)
        try:
            return bytes(raw).decode("utf-8"), end
        except UnicodeDecodeError as exc:
            at = offset + 8 + exc.start
            raise DecodeError(f"invalid UTF-8 at offset {at}", at, path) from None

    def _to_json(self, value, path):
        if not isinstance(value, str):
            raise EncodeError(path, f"expected str, got {type(value).__name__}")
        return value

    def _from_json(self, obj, path):
        if not isinstance(obj, str):
            raise DecodeError(f"expected string, got {type(obj).__name__}", path=path)
        return obj


class _Bytes(Schema):
    name = "bytes"
    min_size = 8

    def _encode(self, value, out, path):
        if not isinstance(value, (bytes, bytearray, memoryview)):
            raise EncodeError(path, f"expected bytes, got {type(value).__name__}")
        raw = bytes(value)
        out += struct.pack("<Q", len(raw))
        out += raw

    def _decode(self, buf, offset, path):
        raw, end = _read_blob(buf, offset)
        return bytes(raw), end

    def _to_json(self, value, path):
        if not isinstance(value, (bytes, bytearray, memoryview)):
            raise EncodeError(path, f"expected bytes, got {type(value).__name__}")
        return base64.b64encode(bytes(value)).decode("ascii")

    def _from_json(self, obj, path):
        if not isinstance(obj, str):
            raise DecodeError(f"expected base64 string, got {type(obj).__name__}", path=path)
        try:
            return base64.b64decode(obj, validate=True)
        except binascii.Error as exc:
            raise DecodeError(f"invalid base64: {exc}", path=path) from None


def _read_blob(buf, offset):
    _need(buf, offset, 8)
    (length,) = struct.unpack_from("<Q", buf, offset)
    start = offset + 8
    if length > len(buf) - start:
        raise DecodeError(
            f"length prefix {length} exceeds remaining {len(buf) - start} bytes at offset {offset}",
            offset,
        )
    return memoryview(buf)[start:start + length], start + length


# cap on element count for sequences whose elements may encode to zero bytes
_MAX_EMPTY_ELEMENTS = 1 << 20


class Seq(Schema):
    """Homogeneous sequence. Decodes to a ``list``."""

    min_size = 8

    def __init__(self, element: Schema):
        if not isinstance(element, Schema):
            raise TypeError(f"sequence element must be a Schema, got {element!r}")
        self.element = element
        self.name = f"seq<{element.name}>"
        fmt = getattr(element, "fmt", None)
        self._code = _typecode(fmt) if fmt else None

    def __eq__(self, other):
        return isinstance(other, Seq) and other.element == self.element

    def __hash__(self):
        return hash(("seq", self.element))

    def _fast_bytes(self, value) -> bytes | None:
        """Bulk path for numeric sequences; None means use the checked path."""
        code = self._code
        if code is None:
            return None
        if isinstance(value, array.array):
            if value.typecode != code:
                return None
            arr = value
        elif isinstance(value, (list, tuple)) and self.element.fmt not in "fd":
            try:
                arr = array.array(code, value)
            except (TypeError, OverflowError):
                return None
            if any(type(v) is bool for v in value):
                return None
        else:
            return None
        if not _LITTLE:
            arr = array.array(code, arr)
            arr.byteswap()
        return arr.tobytes()

    def _encode(self, value, out, path):
        fast = self._fast_bytes(value)
        if fast is not None:
            out += struct.pack("<Q", len(value))
            out += fast
            return
        if isinstance(value, (str, bytes, bytearray, Mapping)) or not isinstance(value, Iterable):
            raise EncodeError(path, f"expected sequence, got {type(value).__name__}")
        items = list(value)
        out += struct.pack("<Q", len(items))
        for i, item in enumerate(items):
            self.element._encode(item, out, f"{path}[{i}]")

    def _decode(self, buf, offset, path):
        _need(buf, offset, 8)
        (count,) = struct.unpack_from("<Q", buf, offset)
        pos = offset + 8
        remaining = len(buf) - pos
        size = self.element.min_size
        if size:
            if count * size > remaining:
                raise DecodeError(
                    f"length prefix {count} exceeds remaining {remaining} bytes at offset {offset}",
                    offset, path,
                )
        elif count > _MAX_EMPTY_ELEMENTS:
            raise DecodeError(f"sequence count {count} too large at offset {offset}", offset, path)
        if self._code is not None:
            arr = array.array(self._code)
            arr.frombytes(bytes(memoryview(buf)[pos:pos + count * size]))
            if not _LITTLE:
                arr.byteswap()
            return arr.tolist(), pos + count * size
        items = []
        element = self.element
        for i in range(count):
            item, pos = element._decode(buf, pos, f"{path}[{i}]")
            items.append(item)
        return items, pos

    def _to_json(self, value, path):
        if isinstance(value, array.array):
            fast = self._fast_bytes(value)
            if fast is not None:
                items = value.tolist()
                if self.element.fmt in "fd":
                    return [self.element._to_json(v, f"{path}[{i}]") for i, v in enumerate(items)]
                return items
        if isinstance(value, (str, bytes, bytearray, Mapping)) or not isinstance(value, Iterable):
            raise EncodeError(path, f"expected sequence, got {type(value).__name__}")
        return [self.element._to_json(v, f"{path}[{i}]") for i, v in enumerate(value)]

    def _from_json(self, obj, path):
        if not isinstance(obj, list):
            raise DecodeError(f"expected array, got {type(obj).__name__}", path=path)
        return [self.element._from_json(v, f"{path}[{i}]") for i, v in enumerate(obj)]


class Opt(Schema):
    """Optional value; ``None`` is the absent case."""

    min_size = 1

    def __init__(self, inner: Schema):
        if not isinstance(inner, Schema):
            raise TypeError(f"optional payload must be a Schema, got {inner!r}")
        if isinstance(inner, Opt):
            # None could not tell the two absent levels apart
            raise TypeError("directly nested optionals are not representable")
        self.inner = inner
        self.name = f"optional<{inner.name}>"

    def __eq__(self, other):
        return isinstance(other, Opt) and other.inner == self.inner

    def __hash__(self):
        return hash(("opt", self.inner))

    def _encode(self, value, out, path):
        if value is None:
            out.append(0)
        else:
            out.append(1)
            self.inner._encode(value, out, path)

    def _decode(self, buf, offset, path):
        _need(buf, offset, 1)
        tag = buf[offset]
        if tag == 0:
            return None, offset + 1
        if tag != 1:
            raise DecodeError(f"invalid optional tag {tag} at offset {offset}", offset, path)
        return self.inner._decode(buf, offset + 1, path)

    def _to_json(self, value, path):
        return None if value is None else self.inner._to_json(value, path)

    def _from_json(self, obj, path):
        return None if obj is None else self.inner._from_json(obj, path)


class Record(Schema):
    """Ordered record. Values are mappings keyed by field name.

    ``Record(a=U32, b=Str)`` and ``Record([("a", U32), ("b", Str)])`` are
    equivalent.
    """

    def __init__(self, fields: Iterable[tuple[str, Schema]] | None = None, **kwargs: Schema):
        items = list(fields or ()) + list(kwargs.items())
        seen = set()
        for name, schema in items:
            if not isinstance(name, str) or not name:
                raise TypeError(f"record field names must be non-empty strings, got {name!r}")
            if name in seen:
                raise TypeError(f"duplicate record field {name!r}")
            if not isinstance(schema, Schema):
                raise TypeError(f"field {name!r} has no schema (got {schema!r})")
            seen.add(name)
        self.fields: tuple[tuple[str, Schema], ...] = tuple(items)
        self.min_size = sum(s.min_size for _, s in self.fields)
        self.name = "record{" + ", ".join(f"{n}: {s.name}" for n, s in self.fields) + "}"

    def __eq__(self, other):
        return isinstance(other, Record) and other.fields == self.fields

    def __hash__(self):
        return hash(("record", self.fields))

    def _check_keys(self, value, path, err=EncodeError):
        if not isinstance(value, Mapping):
            if err is EncodeError:
                raise EncodeError(path, f"expected mapping for record, got {type(value).__name__}")
            raise DecodeError(f"expected object, got {type(value).__name__}", path=path)
        names = [n for n, _ in self.fields]
        extra = [k for k in value if k not in names]
        missing = [n for n in names if n not in value]
        if extra or missing:
            parts = []
            if missing:
                parts.append(f"missing fields {missing}")
            if extra:
                parts.append(f"unknown fields {extra}")
            msg = "; ".join(parts)
            if err is EncodeError:
                raise EncodeError(path, msg)
            raise DecodeError(msg, path=path)

    def _encode(self, value, out, path):
        self._check_keys(value, path)
        for name, schema in self.fields:
            schema._encode(value[name], out, f"{path}.{name}")

    def _decode(self, buf, offset, path):
        result = {}
        for name, schema in self.fields:
            result[name], offset = schema._decode(buf, offset, f"{path}.{name}")
        return result, offset

    def _to_json(self, value, path):
        self._check_keys(value, path)
        return {name: schema._to_json(value[name], f"{path}.{name}") for name, schema in self.fields}

    def _from_json(self, obj, path):
        self._check_keys(obj, path, err=DecodeError)
        return {name: schema._from_json(obj[name], f"{path}.{name}") for name, schema in self.fields}


Bool = _Bool()
I8, I16, I32, I64 = (_Int(b, True) for b in (8, 16, 32, 64))
U8, U16, U32, U64 = (_Int(b, False) for b in (8, 16, 32, 64))
F32, F64 = _Float(32), _Float(64)
Str = _Str()
Bytes = _Bytes()


# -- binary ------------------------------------------------------------------

def encode_value(value: Any, schema: Schema) -> bytes:
    """Encode ``value`` under ``schema``. Raises :class:`EncodeError` naming the field path."""
    out = bytearray()
    schema._encode(value, out, "$")
    return bytes(out)


def decode_prefix(data, schema: Schema, offset: int = 0) -> tuple[Any, int]:
    """Decode one value starting at ``offset``; returns ``(value, end_offset)``."""
    return schema._decode(data, offset, "$")


def decode_value(data, schema: Schema) -> Any:
    value, end = schema._decode(data, 0, "$")
    if end != len(data):
        raise DecodeError(f"{len(data) - end} trailing bytes at offset {end}", end)
    return value


# -- envelope ----------------------------------------------------------------

MAGIC = b"CPLS"
VERSION = 1
REQUEST, RESPONSE_OK, RESPONSE_ERR = 0, 1, 2
_HEADER = struct.Struct("<4sHB")
HEADER_SIZE = _HEADER.size  # 7


@dataclass(frozen=True)
class Envelope:
    kind: int
    body: bytes = b""

    def to_bytes(self) -> bytes:
        if self.kind not in (REQUEST, RESPONSE_OK, RESPONSE_ERR):
            raise WireError(f"invalid envelope kind {self.kind}")
        return _HEADER.pack(MAGIC, VERSION, self.kind) + bytes(self.body)

    @classmethod
    def from_bytes(cls, data) -> Envelope:
        if len(data) < HEADER_SIZE:
            raise DecodeError(f"truncated envelope: {len(data)} bytes", 0)
        magic, version, kind = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise DecodeError(f"bad envelope magic {magic!r}", 0)
        if version != VERSION:
            raise DecodeError(f"unsupported envelope version {version}", 4)
        if kind not in (REQUEST, RESPONSE_OK, RESPONSE_ERR):
            raise DecodeError(f"invalid envelope kind {kind}", 6)
        return cls(kind, bytes(data[HEADER_SIZE:]))


# -- Base64 carrier ----------------------------------------------------------

def wrap_base64_json(data: bytes) -> str:
    return json.dumps({"payload": base64.b64encode(data).decode("ascii")})


def unwrap_base64_json(text: str | bytes) -> bytes:
    try:
        obj = json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise CarrierError(f"carrier is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise CarrierError("carrier must be a JSON object")
    if "payload" not in obj:
        raise CarrierError("missing payload key")
    if len(obj) != 1:
        extra = sorted(k for k in obj if k != "payload")
        raise CarrierError(f"unexpected carrier keys {extra}")
    payload = obj["payload"]
    if not isinstance(payload, str):
        raise CarrierError("payload must be a string")
    try:
        return base64.b64decode(payload, validate=True)
    except binascii.Error as exc:
        raise CarrierError(f"invalid base64 payload: {exc}") from None


# -- plain JSON --------------------------------------------------------------

def encode_json_value(value: Any, schema: Schema) -> str:
    return json.dumps(schema._to_json(value, "$"), separators=(",", ":"), allow_nan=False)


def decode_json_value(text: str | bytes, schema: Schema) -> Any:
    try:
        obj = json.loads(text)
    except ValueError as exc:
        raise DecodeError(f"invalid JSON: {exc}", path="$") from None
    return schema._from_json(obj, "$")
