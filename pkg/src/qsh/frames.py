"""Binary frame format: fixed header plus TLV-encoded payload.

Layout, big-endian throughout::

    magic "QSH1" (4) | version 0x01 (1) | msg_type (1) | payload_len (4) | payload

The payload is a sequence of TLV fields -- field_id (1 byte), field_len
(4 bytes), field bytes -- in strictly ascending field_id order with no
duplicates.  Every variable-size object (keys, ciphertexts, certificate
chains) travels length-prefixed; nothing in the stack may assume a fixed
key size.  Payloads are capped at 1 MiB.

Decoding is total: any input either yields a frame or raises a specific
``FrameError`` subclass (bad magic, bad version, unknown type, oversize,
truncation, trailing bytes, TLV disorder/duplication/overrun).  The decoder
never reads past the declared payload length.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import ProtocolError

MAGIC = b"QSH1"
VERSION = 0x01
HEADER_LEN = 10
MAX_PAYLOAD = 1_048_576


class MsgType(enum.IntEnum):
    CLIENT_HELLO = 0x01
    SERVER_HELLO = 0x02
    CLIENT_KEY_SHARE = 0x03
    ENCRYPTED_CREDENTIALS = 0x04
    AUTH_RESULT = 0x05
    ALERT = 0x06


class FrameError(ProtocolError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class BadMsgType(FrameError):
    pass


class OversizeFrame(FrameError):
    pass


class TruncatedFrame(FrameError):
    pass


class TrailingData(FrameError):
    pass


class TlvError(FrameError):
    pass


class TlvDisorder(TlvError):
    pass


class TlvDuplicate(TlvError):
    pass


class TlvOverrun(TlvError):
    pass


def encode_fields(fields: dict[int, bytes]) -> bytes:
    """Serialize a field map in canonical (ascending field_id) order."""
    parts = []
    for field_id in sorted(fields):
        value = fields[field_id]
        if not 0 <= field_id <= 0xFF:
            raise ValueError(f"field id {field_id} out of range")
        parts.append(struct.pack(">BI", field_id, len(value)))
        parts.append(value)
    return b"".join(parts)


def decode_fields(payload: bytes) -> dict[int, bytes]:
    fields: dict[int, bytes] = {}
    offset = 0
    last_id = -1
    while offset < len(payload):
        if offset + 5 > len(payload):
            raise TlvOverrun("truncated TLV header")
        field_id, field_len = struct.unpack_from(">BI", payload, offset)
        offset += 5
        if offset + field_len > len(payload):
            raise TlvOverrun(f"field {field_id:#04x} overruns payload")
        if field_id == last_id:
            raise TlvDuplicate(f"duplicate field {field_id:#04x}")
        if field_id < last_id:
            raise TlvDisorder(f"field {field_id:#04x} after {last_id:#04x}")
        fields[field_id] = payload[offset : offset + field_len]
        offset += field_len
        last_id = field_id
    return fields


@dataclass(frozen=True)
class Frame:
    msg_type: int
    payload: bytes

    def __post_init__(self) -> None:
        if self.msg_type not in MsgType.__members__.values():
            raise BadMsgType(f"unknown msg_type {self.msg_type:#04x}")
        if len(self.payload) > MAX_PAYLOAD:
            raise OversizeFrame(f"payload of {len(self.payload)} bytes exceeds 1 MiB")

    @property
    def type_name(self) -> str:
        return MsgType(self.msg_type).name

    def fields(self) -> dict[int, bytes]:
        return decode_fields(self.payload)


def frame_encode(frame: Frame) -> bytes:
    decode_fields(frame.payload)  # encoding malformed TLV is a caller bug
    header = MAGIC + struct.pack(">BBI", VERSION, frame.msg_type, len(frame.payload))
    return header + frame.payload


def decode_header(header: bytes) -> tuple[int, int]:
    """Validate a 10-byte header; return (msg_type, payload_len)."""
    if len(header) < HEADER_LEN:
        raise TruncatedFrame(f"header needs {HEADER_LEN} bytes, got {len(header)}")
    if header[:4] != MAGIC:
        raise BadMagic(f"bad magic {header[:4]!r}")
    version, msg_type, payload_len = struct.unpack_from(">BBI", header, 4)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version:#04x}")
    if msg_type not in MsgType.__members__.values():
        raise BadMsgType(f"unknown msg_type {msg_type:#04x}")
    if payload_len > MAX_PAYLOAD:
        raise OversizeFrame(f"declared payload of {payload_len} bytes exceeds 1 MiB")
    return msg_type, payload_len


def frame_decode(data: bytes) -> Frame:
    msg_type, payload_len = decode_header(data[:HEADER_LEN])
    if len(data) < HEADER_LEN + payload_len:
        raise TruncatedFrame(
            f"declared {payload_len} payload bytes, {len(data) - HEADER_LEN} present"
        )
    if len(data) > HEADER_LEN + payload_len:
        raise TrailingData(f"{len(data) - HEADER_LEN - payload_len} bytes after frame")
    payload = data[HEADER_LEN : HEADER_LEN + payload_len]
    decode_fields(payload)
    return Frame(msg_type, payload)


def make_frame(msg_type: int, fields: dict[int, bytes]) -> Frame:
    return Frame(msg_type, encode_fields(fields))


# Alert payload: single field 0x01 holding a 1-byte code.
ALERT_NO_MUTUAL_ALGORITHM = 0x01
ALERT_MALFORMED = 0x02
ALERT_BAD_AUTHENTICITY = 0x03
ALERT_DECRYPT_FAILED = 0x04

_ALERT_NAMES = {
    ALERT_NO_MUTUAL_ALGORITHM: "no-mutual-algorithm",
    ALERT_MALFORMED: "malformed-or-unexpected",
    ALERT_BAD_AUTHENTICITY: "chain-or-signature-invalid",
    ALERT_DECRYPT_FAILED: "decryption-failed",
}


def alert_name(code: int) -> str:
    return _ALERT_NAMES.get(code, f"unknown-{code:#04x}")


def make_alert(code: int) -> Frame:
    if not 0 <= code <= 0xFF:
        raise ValueError("alert code must fit one byte")
    return make_frame(MsgType.ALERT, {0x01: bytes([code])})


def parse_alert(frame: Frame) -> int:
    if frame.msg_type != MsgType.ALERT:
        raise ProtocolError("not an alert frame")
    fields = frame.fields()
    if set(fields) != {0x01} or len(fields[0x01]) != 1:
        raise ProtocolError("malformed alert payload")
    return fields[0x01][0]
