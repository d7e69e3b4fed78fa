"""Length-prefixed wire frames.

Frame: ``length:u32 BE | type:u8 | payload`` where ``length`` counts the type
byte and the payload.  Integers inside payloads are big-endian as well.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from ..errors import ProtocolError

MAX_FRAME = 1 << 30
_LEN = struct.Struct(">I")
_U32 = struct.Struct(">I")
_GRANT = struct.Struct(">II")
_CODE = struct.Struct(">H")


class MsgType(IntEnum):
    HELLO = 1
    PUT_WEIGHTS = 2
    GET_WEIGHTS = 3
    WEIGHTS = 4
    TOKEN_GRANT = 5
    TOKEN_RELEASE = 6
    ACK = 7
    ERROR = 8
    BYE = 9  # run finished; the final weights may be fetched


class ErrorCode(IntEnum):
    BAD_MESSAGE = 1
    NOT_REGISTERED = 2
    DUPLICATE_ID = 3
    NOT_HOLDER = 4
    TIMEOUT = 5
    NO_WEIGHTS = 6
    ABORTED = 7


_EMPTY = {MsgType.GET_WEIGHTS, MsgType.TOKEN_RELEASE, MsgType.ACK, MsgType.BYE}


@dataclass(frozen=True)
class Message:
    kind: MsgType
    payload: bytes = b""

    @classmethod
    def hello(cls, trainer_id):
        return cls(MsgType.HELLO, _U32.pack(trainer_id))

    @classmethod
    def put(cls, data):
        return cls(MsgType.PUT_WEIGHTS, bytes(data))

    @classmethod
    def weights(cls, data):
        return cls(MsgType.WEIGHTS, bytes(data))

    @classmethod
    def grant(cls, round_index, central_epoch):
        return cls(MsgType.TOKEN_GRANT, _GRANT.pack(round_index, central_epoch))

    @classmethod
    def error(cls, code, text=""):
        return cls(MsgType.ERROR, _CODE.pack(int(code)) + text.encode("utf-8"))

    @classmethod
    def simple(cls, kind):
        return cls(MsgType(kind))

    @property
    def trainer_id(self):
        return _U32.unpack(self.payload)[0]

    @property
    def round(self):
        return _GRANT.unpack(self.payload)[0]

    @property
    def central_epoch(self):
        return _GRANT.unpack(self.payload)[1]

    @property
    def code(self):
        return _CODE.unpack_from(self.payload)[0]

    @property
    def text(self):
        return self.payload[_CODE.size :].decode("utf-8", errors="replace")


def _validate(kind, payload):
    if kind == MsgType.HELLO and len(payload) != _U32.size:
        raise ProtocolError("HELLO payload must be 4 bytes")
    if kind == MsgType.TOKEN_GRANT and len(payload) != _GRANT.size:
        raise ProtocolError("TOKEN_GRANT payload must be 8 bytes")
    if kind == MsgType.ERROR and len(payload) < _CODE.size:
        raise ProtocolError("ERROR payload needs a 2-byte code")
    if kind in _EMPTY and payload:
        raise ProtocolError(f"{kind.name} carries no payload")


def encode(msg: Message) -> bytes:
    _validate(msg.kind, msg.payload)
    body_len = 1 + len(msg.payload)
    if body_len > MAX_FRAME:
        raise ProtocolError(f"frame of {body_len} bytes exceeds the limit")
    return _LEN.pack(body_len) + bytes([msg.kind]) + msg.payload


def decode_body(body: bytes) -> Message:
    """Decode ``type | payload`` (the frame without its length prefix)."""
    if not body:
        raise ProtocolError("empty frame")
    try:
        kind = MsgType(body[0])
    except ValueError:
        raise ProtocolError(f"unknown message type {body[0]}") from None
    payload = bytes(body[1:])
    _validate(kind, payload)
    return Message(kind, payload)


def decode(frame: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(frame) < _LEN.size:
        raise ProtocolError("truncated frame header")
    (n,) = _LEN.unpack_from(frame)
    if n > MAX_FRAME:
        raise ProtocolError(f"frame length {n} exceeds the limit")
    if len(frame) != _LEN.size + n:
        raise ProtocolError(f"frame declares {n} bytes but carries {len(frame) - _LEN.size}")
    return decode_body(frame[_LEN.size :])


class FrameDecoder:
    """Incremental decoder for a byte stream; ``feed`` returns completed messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= _LEN.size:
            (n,) = _LEN.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise ProtocolError(f"frame length {n} exceeds the limit")
            if len(self._buf) < _LEN.size + n:
                break
            out.append(decode_body(bytes(self._buf[_LEN.size : _LEN.size + n])))
            del self._buf[: _LEN.size + n]
        return out

    @property
    def pending(self):
        return len(self._buf)
