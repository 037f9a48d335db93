"""MQTT remaining-length varint: 7 bits per byte, least significant group first."""

from __future__ import annotations

from amqc.errors import InvalidArgument, MalformedFrame

VARINT_MAX = 268_435_455
MAX_BYTES = 4


def encode_varint(value):
    if not 0 <= value <= VARINT_MAX:
        raise InvalidArgument(f"varint value {value} outside [0, {VARINT_MAX}]")
    out = bytearray()
    while True:
        byte, value = value & 0x7F, value >> 7
        out.append(byte | (0x80 if value else 0))
        if not value:
            return bytes(out)


def decode_varint(data, offset=0):
    """``(value, bytes_consumed)``.

    Returns ``(None, 0)`` if ``data`` ends before the last byte. Encodings
    longer than 4 bytes or with a redundant trailing zero group are rejected.
    """
    value = 0
    for i in range(MAX_BYTES):
        pos = offset + i
        if pos >= len(data):
            return None, 0
        byte = data[pos]
        value |= (byte & 0x7F) << (7 * i)
        if not byte & 0x80:
            if i > 0 and byte == 0:
                raise MalformedFrame("non-minimal remaining-length encoding", offset=pos)
            return value, i + 1
    raise MalformedFrame("remaining length longer than 4 bytes", offset=offset + MAX_BYTES)
