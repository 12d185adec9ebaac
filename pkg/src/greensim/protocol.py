"""Wire protocol: envelopes, framing codec, topic grammar and matching.

Every message on the wire is an Envelope. TCP links carry length-prefixed
frames; the WebSocket bridge carries the identical JSON body, one envelope
per text message. The codec is bit-exact: encode(decode(frame)) == frame for
canonical frames and decode(encode(env)) == env always.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 1 << 20  # 1 MiB body limit

KINDS = ("PUB", "SUB", "UNSUB", "CMD", "ACK", "ERR", "AUTH", "PING", "PONG")

# ack / error status codes
SUCCESS = "SUCCESS"
FAILURE = "FAILURE"
SUPERSEDED = "SUPERSEDED"
REJECTED = "REJECTED"

MAX_TOPIC_DEPTH = 8
_SEGMENT_RE = re.compile(r"^[a-z0-9_]+$")
_CID_RE = re.compile(r"^[0-9a-f]{32}$")

# Topics whose last segment is one of these carry commands; they are routed
# to the gateway filter and are never retained by the broker.
COMMAND_SUFFIXES = ("cmd", "cmd_vel", "estop")

# canonical body key order
_FIELDS = ("version", "kind", "topic", "correlation_id", "seq", "ts_ms", "payload")


class ProtocolError(Exception):
    """Decode/validation failure with a machine-readable code."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


FRAME_TOO_LARGE = "FRAME_TOO_LARGE"
MALFORMED = "MALFORMED"
UNSUPPORTED_VERSION = "UNSUPPORTED_VERSION"


def valid_topic(topic: str) -> bool:
    """Exact topic: '/' separated [a-z0-9_]+ segments, depth 1..8."""
    if not isinstance(topic, str) or not topic.startswith("/"):
        return False
    segs = topic[1:].split("/")
    if not 1 <= len(segs) <= MAX_TOPIC_DEPTH:
        return False
    return all(_SEGMENT_RE.match(s) for s in segs)


def valid_pattern(pattern: str) -> bool:
    """Subscription pattern: exact topic segments, '+' (one level) or a final '#'."""
    if not isinstance(pattern, str) or not pattern.startswith("/"):
        return False
    segs = pattern[1:].split("/")
    if not 1 <= len(segs) <= MAX_TOPIC_DEPTH:
        return False
    for i, s in enumerate(segs):
        if s == "#":
            if i != len(segs) - 1:
                return False
        elif s != "+" and not _SEGMENT_RE.match(s):
            return False
    return True


def topic_matches(pattern: str, topic: str) -> bool:
    psegs = pattern[1:].split("/")
    tsegs = topic[1:].split("/")
    for i, p in enumerate(psegs):
        if p == "#":
            return True
        if i >= len(tsegs):
            return False
        if p != "+" and p != tsegs[i]:
            return False
    return len(psegs) == len(tsegs)


def is_command_topic(topic: str) -> bool:
    return topic.rsplit("/", 1)[-1] in COMMAND_SUFFIXES


@dataclass
class Envelope:
    kind: str
    topic: str
    correlation_id: str
    seq: int
    ts_ms: int
    payload: dict = field(default_factory=dict)
    version: int = PROTOCOL_VERSION

    def body_dict(self) -> dict:
        return {
            "version": self.version,
            "kind": self.kind,
            "topic": self.topic,
            "correlation_id": self.correlation_id,
            "seq": self.seq,
            "ts_ms": self.ts_ms,
            "payload": self.payload,
        }


def _check_finite(obj) -> bool:
    if isinstance(obj, float):
        return math.isfinite(obj)
    if isinstance(obj, dict):
        return all(_check_finite(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return all(_check_finite(v) for v in obj)
    return True


def validate_envelope(env: Envelope) -> None:
    if env.version != PROTOCOL_VERSION:
        raise ProtocolError(UNSUPPORTED_VERSION, f"version {env.version}")
    if env.kind not in KINDS:
        raise ProtocolError(MALFORMED, f"unknown kind {env.kind!r}")
    if not valid_topic(env.topic) and not (env.kind in ("SUB", "UNSUB") and valid_pattern(env.topic)):
        raise ProtocolError(MALFORMED, f"bad topic {env.topic!r}")
    if not isinstance(env.correlation_id, str) or not _CID_RE.match(env.correlation_id):
        raise ProtocolError(MALFORMED, "correlation_id must be 32 hex chars")
    if not isinstance(env.seq, int) or env.seq < 0:
        raise ProtocolError(MALFORMED, "seq must be a non-negative integer")
    if not isinstance(env.ts_ms, int):
        raise ProtocolError(MALFORMED, "ts_ms must be an integer")
    if not isinstance(env.payload, dict):
        raise ProtocolError(MALFORMED, "payload must be an object")
    if not _check_finite(env.payload):
        raise ProtocolError(MALFORMED, "payload contains non-finite number")


def encode_body(env: Envelope) -> bytes:
    """Canonical JSON body (fixed envelope key order, compact separators)."""
    return json.dumps(env.body_dict(), separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode(env: Envelope) -> bytes:
    """Full TCP frame: 4-byte big-endian body length + canonical JSON body."""
    validate_envelope(env)
    body = encode_body(env)
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError(FRAME_TOO_LARGE, f"{len(body)} bytes")
    return struct.pack(">I", len(body)) + body


def decode_body(body: bytes | str) -> Envelope:
    if isinstance(body, bytes):
        if len(body) > MAX_FRAME_BYTES:
            raise ProtocolError(FRAME_TOO_LARGE, f"{len(body)} bytes")
        try:
            text = body.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(MALFORMED, f"invalid utf-8: {e}") from e
    else:
        text = body
        if len(text.encode("utf-8", errors="replace")) > MAX_FRAME_BYTES:
            raise ProtocolError(FRAME_TOO_LARGE, "oversized body")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProtocolError(MALFORMED, f"invalid json: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolError(MALFORMED, "body is not an object")
    missing = [k for k in _FIELDS if k not in obj]
    if missing:
        raise ProtocolError(MALFORMED, f"missing fields: {missing}")
    version = obj["version"]
    if not isinstance(version, int):
        raise ProtocolError(MALFORMED, "version must be an integer")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(UNSUPPORTED_VERSION, f"version {version}")
    env = Envelope(
        kind=obj["kind"],
        topic=obj["topic"],
        correlation_id=obj["correlation_id"],
        seq=obj["seq"],
        ts_ms=obj["ts_ms"],
        payload=obj["payload"],
        version=version,
    )
    validate_envelope(env)
    return env


def decode(frame: bytes) -> Envelope:
    """Decode a full frame (length prefix + body)."""
    if len(frame) < 4:
        raise ProtocolError(MALFORMED, "frame shorter than length prefix")
    (n,) = struct.unpack(">I", frame[:4])
    if n > MAX_FRAME_BYTES:
        raise ProtocolError(FRAME_TOO_LARGE, f"{n} bytes")
    if len(frame) != 4 + n:
        raise ProtocolError(MALFORMED, f"length prefix {n} != body {len(frame) - 4}")
    return decode_body(frame[4:])


def read_frame(sock) -> bytes | None:
    """Read one length-prefixed body from a socket; None on clean EOF."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (n,) = struct.unpack(">I", header)
    if n > MAX_FRAME_BYTES:
        raise ProtocolError(FRAME_TOO_LARGE, f"{n} bytes")
    body = _read_exact(sock, n)
    if body is None:
        raise ProtocolError(MALFORMED, "eof inside frame")
    return body


def _read_exact(sock, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else None
        buf.extend(chunk)
    return bytes(buf)


def canonical_payload_bytes(payload: dict) -> bytes:
    """Stable byte form for change detection and determinism digests."""
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False, sort_keys=True).encode("utf-8")


def make_ack_payload(status: str, reason_code: str | None = None, reason: str | None = None, **extra) -> dict:
    p = {"status": status}
    if reason_code is not None:
        p["reason_code"] = reason_code
    if reason is not None:
        p["reason"] = reason
    p.update(extra)
    return p
