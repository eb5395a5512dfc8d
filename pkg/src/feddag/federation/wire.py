"""Binary frame format exchanged between the center and the sites.

Layout, all integers little-endian::

    u64  length of everything that follows
    4s   magic b"FDAG"
    u16  protocol version
    u32  round
    u8   direction (0 site->center, 1 center->site)
    u16  site id length, then the UTF-8 site id
    u32  d
    f64  d*d payload doubles, row-major
    [f64 d*d beta doubles, f64 rho2]   center->site solver frames only
    u32  CRC32 of the double block

The optional block is detected from the body length.
"""
from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import ChecksumMismatch, ProtocolViolation

MAGIC = b"FDAG"
PROTOCOL_VERSION = 1
TERMINATE_ROUND = 2**32 - 1

_LEN = struct.Struct("<Q")
_HEAD = struct.Struct("<4sHIBH")
_DIM = struct.Struct("<I")
_CRC = struct.Struct("<I")
_F64 = np.dtype("<f8")


class Direction(enum.IntEnum):
    SITE_TO_CENTER = 0
    CENTER_TO_SITE = 1


@dataclass(eq=False)
class RoundMessage:
    round: int
    direction: Direction
    site_id: str
    payload: np.ndarray
    beta: np.ndarray | None = None
    rho: float | None = None
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self):
        self.direction = Direction(self.direction)
        self.payload = np.ascontiguousarray(self.payload, dtype=np.float64)
        if self.payload.ndim != 2 or self.payload.shape[0] != self.payload.shape[1]:
            raise ValueError(f"payload must be a square matrix, got {self.payload.shape}")
        if (self.beta is None) != (self.rho is None):
            raise ValueError("beta and rho must be given together")
        if self.beta is not None:
            self.beta = np.ascontiguousarray(self.beta, dtype=np.float64)
            if self.beta.shape != self.payload.shape:
                raise ValueError("beta must have the payload's shape")
            self.rho = float(self.rho)

    @property
    def dim(self) -> int:
        return self.payload.shape[0]

    @property
    def is_terminate(self) -> bool:
        return self.round == TERMINATE_ROUND

    def double_block(self) -> bytes:
        block = self.payload.astype(_F64, copy=False).tobytes()
        if self.beta is not None:
            block += self.beta.astype(_F64, copy=False).tobytes() + struct.pack("<d", self.rho)
        return block

    @property
    def checksum(self) -> int:
        return zlib.crc32(self.double_block()) & 0xFFFFFFFF

    def __eq__(self, other):
        if not isinstance(other, RoundMessage):
            return NotImplemented
        return (
            self.protocol_version == other.protocol_version
            and self.round == other.round
            and self.direction == other.direction
            and self.site_id == other.site_id
            and self.double_block() == other.double_block()
            and (self.beta is None) == (other.beta is None)
        )


def terminate_message(site_id: str) -> RoundMessage:
    return RoundMessage(TERMINATE_ROUND, Direction.CENTER_TO_SITE, site_id, np.zeros((0, 0)))


def serialize(msg: RoundMessage) -> bytes:
    sid = msg.site_id.encode("utf-8")
    block = msg.double_block()
    body = b"".join((
        _HEAD.pack(MAGIC, msg.protocol_version, msg.round, int(msg.direction), len(sid)),
        sid,
        _DIM.pack(msg.dim),
        block,
        _CRC.pack(zlib.crc32(block) & 0xFFFFFFFF),
    ))
    return _LEN.pack(len(body)) + body


def decode_body(body: bytes) -> RoundMessage:
    """Decode a frame body (everything after the u64 length prefix)."""
    if len(body) < _HEAD.size + _DIM.size + _CRC.size:
        raise ProtocolViolation(f"frame body too short ({len(body)} bytes)")
    magic, version, rnd, direction, sid_len = _HEAD.unpack_from(body, 0)
    if magic != MAGIC:
        raise ProtocolViolation(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolViolation(f"unsupported protocol version {version}")
    if direction not in (0, 1):
        raise ProtocolViolation(f"bad direction byte {direction}")
    off = _HEAD.size
    try:
        site_id = body[off:off + sid_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolViolation("site id is not valid UTF-8") from exc
    off += sid_len
    if len(body) < off + _DIM.size + _CRC.size:
        raise ProtocolViolation("frame truncated in header")
    (d,) = _DIM.unpack_from(body, off)
    off += _DIM.size
    block = body[off:len(body) - _CRC.size]
    (crc,) = _CRC.unpack_from(body, len(body) - _CRC.size)
    plain = 8 * d * d
    if len(block) == plain:
        extended = False
    elif len(block) == 2 * plain + 8:
        extended = True
    else:
        raise ProtocolViolation(f"double block of {len(block)} bytes does not fit d={d}")
    if zlib.crc32(block) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch(f"payload checksum mismatch in round {rnd} frame from {site_id!r}")
    payload = np.frombuffer(block, dtype=_F64, count=d * d).reshape(d, d).astype(np.float64)
    beta = rho = None
    if extended:
        beta = np.frombuffer(block, dtype=_F64, count=d * d, offset=plain).reshape(d, d).astype(np.float64)
        (rho,) = struct.unpack_from("<d", block, 2 * plain)
    return RoundMessage(rnd, Direction(direction), site_id, payload, beta, rho, protocol_version=version)


def deserialize(frame: bytes) -> RoundMessage:
    if len(frame) < _LEN.size:
        raise ProtocolViolation("frame shorter than its length prefix")
    (n,) = _LEN.unpack_from(frame, 0)
    if len(frame) != _LEN.size + n:
        raise ProtocolViolation(f"length prefix says {n} bytes, frame carries {len(frame) - _LEN.size}")
    return decode_body(frame[_LEN.size:])


def read_frame(recv_exact) -> bytes:
    """Read one length-prefixed frame using ``recv_exact(n) -> bytes``."""
    head = recv_exact(_LEN.size)
    (n,) = _LEN.unpack(head)
    return head + recv_exact(n)
