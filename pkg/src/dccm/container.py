"""Binary container used for datasets and checkpoints.

Layout::

    magic (8 bytes) | header length (uint64 LE) | JSON header (UTF-8) | payload

The payload is a raw little-endian array whose record layout is described in
the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from .errors import ParseError

_LEN = struct.Struct("<Q")


def write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    assert len(magic) == 8
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(magic)
            fh.write(_LEN.pack(len(blob)))
            fh.write(blob)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_container(path, magic: bytes) -> tuple[dict, bytes, int]:
    """Return ``(header, payload, payload_offset)``."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ParseError(f"{path}: truncated preamble at byte offset {len(data)}")
    if data[:8] != magic:
        raise ParseError(f"{path}: bad magic {data[:8]!r}, expected {magic!r}")
    (hlen,) = _LEN.unpack_from(data, 8)
    start = 16 + hlen
    if start > len(data):
        raise ParseError(f"{path}: header claims {hlen} bytes but file ends at byte offset {len(data)}")
    try:
        header = json.loads(data[16:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: malformed JSON header at byte offset 16: {exc}") from exc
    return header, data[start:], start
