"""Canonical binary encoding used for digests, signatures and wire messages.

The encoding is deterministic: equal values always produce equal bytes, on
every replica and in every process. Supported values are ``None``, ``bool``,
``int`` (signed 64-bit), ``bytes``, ``str`` and (nested) ``list``/``tuple``.
Tuples and lists encode identically and both decode to tuples.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Any

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")


class DecodeError(ValueError):
    """Raised for truncated or malformed encodings."""


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: Any, out: bytearray) -> None:
    if value is None:
        out += b"N"
    elif value is True:
        out += b"T"
    elif value is False:
        out += b"F"
    elif isinstance(value, int):
        if not -(2**63) <= value < 2**63:
            raise OverflowError(f"integer {value} does not fit in 64 bits")
        out += b"I"
        out += _I64.pack(value)
    elif isinstance(value, (bytes, bytearray, memoryview)):
        data = bytes(value)
        out += b"B"
        out += _U32.pack(len(data))
        out += data
    elif isinstance(value, str):
        data = value.encode("utf-8")
        out += b"S"
        out += _U32.pack(len(data))
        out += data
    elif isinstance(value, (list, tuple)):
        out += b"L"
        out += _U32.pack(len(value))
        for item in value:
            _encode_into(item, out)
    else:
        raise TypeError(f"cannot encode {type(value).__name__}")


def decode(data: bytes) -> Any:
    value, pos = _decode_at(memoryview(data), 0)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes")
    return value


def _take(buf: memoryview, pos: int, size: int) -> tuple[memoryview, int]:
    end = pos + size
    if end > len(buf):
        raise DecodeError("truncated input")
    return buf[pos:end], end


def _decode_at(buf: memoryview, pos: int) -> tuple[Any, int]:
    tag, pos = _take(buf, pos, 1)
    t = bytes(tag)
    if t == b"N":
        return None, pos
    if t == b"T":
        return True, pos
    if t == b"F":
        return False, pos
    if t == b"I":
        raw, pos = _take(buf, pos, 8)
        return _I64.unpack(raw)[0], pos
    if t in (b"B", b"S", b"L"):
        raw, pos = _take(buf, pos, 4)
        size = _U32.unpack(raw)[0]
        if t == b"B":
            raw, pos = _take(buf, pos, size)
            return bytes(raw), pos
        if t == b"S":
            raw, pos = _take(buf, pos, size)
            try:
                return bytes(raw).decode("utf-8"), pos
            except UnicodeDecodeError as exc:
                raise DecodeError("invalid utf-8") from exc
        items = []
        for _ in range(size):
            item, pos = _decode_at(buf, pos)
            items.append(item)
        return tuple(items), pos
    raise DecodeError(f"unknown tag {t!r}")


def digest(domain: str, value: Any) -> bytes:
    """32-byte SHA-256 digest of ``value`` under a domain-separation label."""
    h = hashlib.sha256()
    h.update(domain.encode("ascii"))
    h.update(b"\x00")
    h.update(encode(value))
    return h.digest()
