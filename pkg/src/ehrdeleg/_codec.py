"""Byte-level encodings: canonical field maps, length-prefixed lists, strict base64."""

from __future__ import annotations

import base64
import binascii
import struct
from typing import Iterable, Mapping, Sequence, Tuple, Union

from .errors import FormatError

FieldInput = Union[Mapping[str, bytes], Sequence[Tuple[str, bytes]]]

_LEN = struct.Struct(">I")


def canonical_encode(fields: FieldInput) -> bytes:
    """Encode a name -> bytes map deterministically.

    Fields are sorted by name (UTF-8 byte order); each is written as
    ``len(name) || name || len(value) || value`` with 4-byte big-endian
    lengths. A sequence of pairs is accepted so duplicate names can be
    reported instead of silently collapsed.
    """
    items = list(fields.items()) if isinstance(fields, Mapping) else list(fields)
    encoded = []
    seen = set()
    for name, value in items:
        if not isinstance(name, str):
            raise FormatError(f"field name must be str, got {type(name).__name__}")
        raw_name = name.encode("utf-8")
        if raw_name in seen:
            raise FormatError(f"duplicate field name {name!r}")
        seen.add(raw_name)
        if not isinstance(value, (bytes, bytearray)):
            raise FormatError(f"field {name!r} value must be bytes")
        encoded.append((raw_name, bytes(value)))
    encoded.sort(key=lambda kv: kv[0])
    out = bytearray()
    for raw_name, value in encoded:
        out += _LEN.pack(len(raw_name)) + raw_name + _LEN.pack(len(value)) + value
    return bytes(out)


def canonical_decode(data: bytes) -> dict[str, bytes]:
    """Inverse of :func:`canonical_encode`; rejects non-canonical input."""
    fields: dict[str, bytes] = {}
    pos = 0
    last = None
    while pos < len(data):
        name, pos = _take(data, pos)
        value, pos = _take(data, pos)
        if last is not None and name <= last:
            raise FormatError("fields not in strictly ascending order")
        last = name
        try:
            fields[name.decode("utf-8")] = value
        except UnicodeDecodeError as exc:
            raise FormatError("field name is not UTF-8") from exc
    return fields


def _take(data: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 4 > len(data):
        raise FormatError("truncated length prefix")
    (size,) = _LEN.unpack_from(data, pos)
    pos += 4
    if pos + size > len(data):
        raise FormatError("truncated field")
    return data[pos:pos + size], pos + size


def pack_list(items: Iterable[bytes]) -> bytes:
    out = bytearray()
    for item in items:
        out += _LEN.pack(len(item)) + bytes(item)
    return bytes(out)


def unpack_list(data: bytes) -> list[bytes]:
    items = []
    pos = 0
    while pos < len(data):
        item, pos = _take(data, pos)
        items.append(item)
    return items


def u64(value: int) -> bytes:
    if value < 0 or value >= 1 << 64:
        raise FormatError(f"value {value} out of u64 range")
    return value.to_bytes(8, "big")


def from_u64(data: bytes) -> int:
    if len(data) != 8:
        raise FormatError("u64 field must be 8 bytes")
    return int.from_bytes(data, "big")


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64d(text: str) -> bytes:
    """Strict base64: any non-canonical spelling is a format error."""
    if not isinstance(text, str):
        raise FormatError("base64 field must be a string")
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise FormatError(f"invalid base64: {exc}") from exc
    if b64e(raw) != text:
        raise FormatError("non-canonical base64")
    return raw


def hexd(text: str) -> bytes:
    if not isinstance(text, str) or text != text.lower():
        raise FormatError("hex field must be lowercase")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise FormatError(f"invalid hex: {exc}") from exc
    if raw.hex() != text:
        raise FormatError("non-canonical hex")
    return raw
