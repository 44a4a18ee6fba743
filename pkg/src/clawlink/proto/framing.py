"""Bit-exact wire framing.

Frame layout, little-endian throughout:

    magic "MGCW" | version u8 | topic u16 | seq u32 | timestamp i64 |
    payload_len u32 | payload bytes

Header is exactly 23 bytes.  Every malformed input maps to a distinct typed
error; decode never raises anything outside the ClawError hierarchy.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from ..errors import FormatError, IncompleteError, SizeError, VersionError

MAGIC = b"MGCW"
VERSION = 1
HEADER = struct.Struct("<4sBHIqI")
HEADER_SIZE = HEADER.size  # 23
MAX_PAYLOAD = 16 * 1024 * 1024  # 16 MiB

_U32_MAX = 2**32 - 1
_I64_MIN, _I64_MAX = -(2**63), 2**63 - 1


class Topic(enum.IntEnum):
    """Stable stream identifiers; ids never change across versions."""

    POSE = 1
    RGB = 2
    DEPTH = 3
    MARKERS_L = 4
    MARKERS_R = 5
    WRENCH_L = 6
    WRENCH_R = 7
    GRIP_STATE = 8
    GRIP_CMD = 9
    TELEOP_CMD = 10
    HAPTIC_FB = 11
    CLOCK = 12
    CONTROL = 13


KNOWN_TOPICS = frozenset(int(t) for t in Topic)


@dataclass(frozen=True)
class Message:
    """One wire frame.  ``topic`` stays a plain int so unknown ids survive
    a decode/encode round trip on their way to the dead-letter sink."""

    topic: int
    seq: int
    timestamp: int
    payload: bytes = b""
    version: int = VERSION

    def topic_name(self) -> str:
        try:
            return Topic(self.topic).name
        except ValueError:
            return f"UNKNOWN_{self.topic}"


def encode_message(m: Message) -> bytes:
    if len(m.payload) > MAX_PAYLOAD:
        raise SizeError(f"payload {len(m.payload)} exceeds {MAX_PAYLOAD} bytes")
    if not 0 <= m.topic <= 0xFFFF:
        raise SizeError(f"topic id {m.topic} outside u16 range")
    if not 0 <= m.seq <= _U32_MAX:
        raise SizeError(f"seq {m.seq} outside u32 range")
    if not _I64_MIN <= m.timestamp <= _I64_MAX:
        raise SizeError(f"timestamp {m.timestamp} outside i64 range")
    header = HEADER.pack(MAGIC, m.version, m.topic, m.seq, m.timestamp,
                         len(m.payload))
    return header + m.payload


def decode_message(b: bytes) -> Message:
    """Exact inverse of encode_message on valid input.

    Raises FormatError (bad magic), IncompleteError (truncated),
    VersionError (version != 1) or SizeError (declared payload too large).
    """
    if len(b) < len(MAGIC):
        if MAGIC.startswith(b):
            raise IncompleteError(f"only {len(b)} bytes, header needs {HEADER_SIZE}")
        raise FormatError("bad magic")
    if b[:4] != MAGIC:
        raise FormatError(f"bad magic {b[:4]!r}")
    if len(b) < HEADER_SIZE:
        raise IncompleteError(f"only {len(b)} bytes, header needs {HEADER_SIZE}")
    _, version, topic, seq, timestamp, payload_len = HEADER.unpack_from(b)
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    if payload_len > MAX_PAYLOAD:
        raise SizeError(f"declared payload {payload_len} exceeds {MAX_PAYLOAD}")
    end = HEADER_SIZE + payload_len
    if len(b) < end:
        raise IncompleteError(
            f"payload truncated: declared {payload_len}, got {len(b) - HEADER_SIZE}"
        )
    return Message(topic=topic, seq=seq, timestamp=timestamp,
                   payload=bytes(b[HEADER_SIZE:end]), version=version)


def read_frame(read_exact) -> Message:
    """Decode one frame from a stream via a read_exact(n) -> bytes callable."""
    header = read_exact(HEADER_SIZE)
    magic, version, topic, seq, timestamp, payload_len = HEADER.unpack(header)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    if payload_len > MAX_PAYLOAD:
        raise SizeError(f"declared payload {payload_len} exceeds {MAX_PAYLOAD}")
    payload = read_exact(payload_len) if payload_len else b""
    return Message(topic=topic, seq=seq, timestamp=timestamp,
                   payload=payload, version=version)
