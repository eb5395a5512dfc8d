import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from feddag.errors import ChecksumMismatch, ProtocolViolation
from feddag.federation.wire import (
    MAGIC,
    TERMINATE_ROUND,
    Direction,
    RoundMessage,
    deserialize,
    read_frame,
    serialize,
    terminate_message,
)

site_ids = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-.", min_size=1, max_size=20)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda d: st.tuples(
    arrays(np.float64, (d, d)), arrays(np.float64, (d, d)),
    st.floats(allow_nan=True), st.booleans())),
    st.integers(0, 2**32 - 2), site_ids)
def test_round_trip_bit_exact(parts, rnd, sid):
    payload, beta, rho, with_dual = parts
    msg = RoundMessage(rnd, Direction.CENTER_TO_SITE if with_dual else Direction.SITE_TO_CENTER, sid,
                       payload, beta if with_dual else None, rho if with_dual else None)
    back = deserialize(serialize(msg))
    assert back == msg
    assert back.payload.tobytes() == payload.tobytes()
    if with_dual:
        assert back.beta.tobytes() == beta.tobytes()
        assert struct.pack("<d", back.rho) == struct.pack("<d", rho)


def test_minimal_frame_is_44_bytes():
    frame = serialize(RoundMessage(1, Direction.SITE_TO_CENTER, "site_01", np.zeros((1, 1))))
    assert len(frame) == 44
    assert struct.unpack_from("<Q", frame)[0] == 36
    assert frame[8:12] == MAGIC
    assert struct.unpack_from("<H", frame, 12)[0] == 1


def test_layout_fields():
    frame = serialize(RoundMessage(7, Direction.CENTER_TO_SITE, "ab", np.eye(2), np.ones((2, 2)), 2.5))
    assert struct.unpack_from("<I", frame, 14)[0] == 7
    assert frame[18] == 1
    assert struct.unpack_from("<H", frame, 19)[0] == 2
    assert frame[21:23] == b"ab"
    assert struct.unpack_from("<I", frame, 23)[0] == 2
    assert np.array_equal(np.frombuffer(frame, "<f8", 4, 27).reshape(2, 2), np.eye(2))
    assert struct.unpack_from("<d", frame, 27 + 64)[0] == 2.5


def test_corrupted_payload_byte_is_detected():
    frame = bytearray(serialize(RoundMessage(3, Direction.SITE_TO_CENTER, "s", np.arange(4.0).reshape(2, 2))))
    frame[30] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        deserialize(bytes(frame))


@pytest.mark.parametrize("mutate", ["magic", "version", "direction", "length", "block"])
def test_structural_violations(mutate):
    frame = bytearray(serialize(RoundMessage(3, Direction.SITE_TO_CENTER, "s", np.eye(2))))
    if mutate == "magic":
        frame[8] = ord("X")
    elif mutate == "version":
        frame[12] = 9
    elif mutate == "direction":
        frame[18] = 5
    elif mutate == "length":
        frame = frame[:-1]
    elif mutate == "block":
        frame = frame[:-12] + frame[-4:]
        frame[:8] = struct.pack("<Q", len(frame) - 8)
    with pytest.raises(ProtocolViolation):
        deserialize(bytes(frame))


def test_terminate_frame():
    msg = deserialize(serialize(terminate_message("site_1")))
    assert msg.is_terminate and msg.round == TERMINATE_ROUND and msg.dim == 0
    assert msg.direction == Direction.CENTER_TO_SITE


def test_read_frame_from_stream():
    frames = [serialize(RoundMessage(r, Direction.SITE_TO_CENTER, "s", np.full((2, 2), r))) for r in (1, 2)]
    buf = memoryview(b"".join(frames))
    pos = 0

    def recv_exact(n):
        nonlocal pos
        out = bytes(buf[pos:pos + n])
        pos += n
        return out

    assert read_frame(recv_exact) == frames[0]
    assert read_frame(recv_exact) == frames[1]


def test_message_validation():
    with pytest.raises(ValueError):
        RoundMessage(1, Direction.SITE_TO_CENTER, "s", np.zeros((2, 3)))
    with pytest.raises(ValueError):
        RoundMessage(1, Direction.CENTER_TO_SITE, "s", np.zeros((2, 2)), beta=np.zeros((2, 2)))
