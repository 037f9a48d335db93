"""MQTT 3.1.1 control packets for the supported subset.

Fixed header is ``type << 4 | flags`` followed by the varint remaining
length. Strings and packet ids are big-endian u16 length/value. QoS 2,
wills, credentials and wildcard topic names are outside the subset and
rejected with :class:`MalformedFrame`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from amqc.errors import InvalidArgument, MalformedFrame
from amqc.telemetry.varint import VARINT_MAX, decode_varint, encode_varint

CONNECT, CONNACK, PUBLISH, PUBACK = 1, 2, 3, 4
SUBSCRIBE, SUBACK = 8, 9
PINGREQ, PINGRESP, DISCONNECT = 12, 13, 14

PROTOCOL_NAME = "MQTT"
PROTOCOL_LEVEL = 4
SUBACK_FAILURE = 0x80
MAX_CLIENT_ID = 64


@dataclass(frozen=True)
class Connect:
    client_id: str
    keepalive: int = 60
    clean_session: bool = True


@dataclass(frozen=True)
class Connack:
    return_code: int = 0
    session_present: bool = False


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes = b""
    qos: int = 0
    packet_id: int | None = None
    dup: bool = False
    retain: bool = False


@dataclass(frozen=True)
class Puback:
    packet_id: int


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    topics: tuple = field(default_factory=tuple)  # ((filter, requested_qos), ...)


@dataclass(frozen=True)
class Suback:
    packet_id: int
    return_codes: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class Pingreq:
    pass


@dataclass(frozen=True)
class Pingresp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


PACKET_TYPES = {Connect: CONNECT, Connack: CONNACK, Publish: PUBLISH, Puback: PUBACK,
                Subscribe: SUBSCRIBE, Suback: SUBACK, Pingreq: PINGREQ, Pingresp: PINGRESP,
                Disconnect: DISCONNECT}
# flags every packet type except PUBLISH must carry
FIXED_FLAGS = {CONNECT: 0, CONNACK: 0, PUBACK: 0, SUBSCRIBE: 2, SUBACK: 0, PINGREQ: 0,
               PINGRESP: 0, DISCONNECT: 0}


def has_wildcard(topic):
    return "+" in topic or "#" in topic


# -- encoding -----------------------------------------------------------------

def _string(s):
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvalidArgument(f"string of {len(raw)} bytes exceeds 65535")
    return struct.pack(">H", len(raw)) + raw


def _check_id(packet_id):
    if not isinstance(packet_id, int) or not 1 <= packet_id <= 0xFFFF:
        raise InvalidArgument(f"packet id must be in 1..65535, got {packet_id!r}")


def _body(p):
    """``(flags, variable header + payload)``."""
    if isinstance(p, Connect):
        cid = p.client_id.encode("utf-8")
        if not 1 <= len(cid) <= MAX_CLIENT_ID:
            raise InvalidArgument(f"client id must be 1-{MAX_CLIENT_ID} bytes, got {len(cid)}")
        if not 0 <= p.keepalive <= 0xFFFF:
            raise InvalidArgument(f"keepalive {p.keepalive} outside u16")
        flags = 0x02 if p.clean_session else 0x00
        return 0, (_string(PROTOCOL_NAME) + bytes([PROTOCOL_LEVEL, flags])
                   + struct.pack(">H", p.keepalive) + _string(p.client_id))
    if isinstance(p, Connack):
        if not 0 <= p.return_code <= 5:
            raise InvalidArgument(f"CONNACK return code {p.return_code} outside 0..5")
        return 0, bytes([1 if p.session_present else 0, p.return_code])
    if isinstance(p, Publish):
        if p.qos not in (0, 1):
            raise InvalidArgument(f"QoS {p.qos} is not supported (0 or 1 only)")
        if has_wildcard(p.topic) or not p.topic:
            raise InvalidArgument(f"invalid topic name {p.topic!r}")
        if p.qos == 0 and (p.dup or p.packet_id is not None):
            raise InvalidArgument("QoS 0 PUBLISH carries neither DUP nor a packet id")
        body = _string(p.topic)
        if p.qos == 1:
            _check_id(p.packet_id)
            body += struct.pack(">H", p.packet_id)
        flags = (0x08 if p.dup else 0) | (p.qos << 1) | (0x01 if p.retain else 0)
        return flags, body + bytes(p.payload)
    if isinstance(p, Puback):
        _check_id(p.packet_id)
        return 0, struct.pack(">H", p.packet_id)
    if isinstance(p, Subscribe):
        _check_id(p.packet_id)
        if not p.topics:
            raise InvalidArgument("SUBSCRIBE needs at least one topic filter")
        body = struct.pack(">H", p.packet_id)
        for topic, qos in p.topics:
            if not topic or qos not in (0, 1, 2):
                raise InvalidArgument(f"bad subscription ({topic!r}, {qos})")
            body += _string(topic) + bytes([qos])
        return 2, body
    if isinstance(p, Suback):
        _check_id(p.packet_id)
        if not p.return_codes or any(c not in (0, 1, 2, SUBACK_FAILURE) for c in p.return_codes):
            raise InvalidArgument(f"bad SUBACK return codes {p.return_codes}")
        return 0, struct.pack(">H", p.packet_id) + bytes(p.return_codes)
    if isinstance(p, (Pingreq, Pingresp, Disconnect)):
        return 0, b""
    raise InvalidArgument(f"unsupported packet {p!r}")


def encode_packet(p):
    flags, body = _body(p)
    if len(body) > VARINT_MAX:
        raise InvalidArgument(f"packet body of {len(body)} bytes is too large")
    return bytes([PACKET_TYPES[type(p)] << 4 | flags]) + encode_varint(len(body)) + body


# -- decoding -----------------------------------------------------------------

class _Body:
    def __init__(self, data, base):
        self.data, self.pos, self.base = data, 0, base

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise MalformedFrame(f"{what} runs past the end of the packet",
                                 offset=self.base + self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self, what):
        return struct.unpack(">H", self.take(2, what))[0]

    def string(self, what):
        n = self.u16(f"{what} length")
        start = self.base + self.pos
        raw = self.take(n, what)
        try:
            s = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedFrame(f"{what} is not valid UTF-8", offset=start) from None
        if "\0" in s:
            raise MalformedFrame(f"{what} contains U+0000", offset=start)
        return s

    def packet_id(self, what):
        pos = self.base + self.pos
        pid = self.u16(what)
        if pid == 0:
            raise MalformedFrame(f"{what} must be nonzero", offset=pos)
        return pid

    def rest(self):
        out = self.data[self.pos:]
        self.pos = len(self.data)
        return out

    def done(self, name):
        if self.pos != len(self.data):
            raise MalformedFrame(f"{len(self.data) - self.pos} unexpected bytes at the end "
                                 f"of {name}", offset=self.base + self.pos)


def _parse(ptype, flags, body, base):
    b = _Body(body, base)
    if ptype == PUBLISH:
        qos = (flags >> 1) & 0x03
        if qos == 3:
            raise MalformedFrame("PUBLISH QoS bits 11 are invalid", offset=0)
        if qos == 2:
            raise MalformedFrame("QoS 2 PUBLISH is not supported", offset=0)
        dup = bool(flags & 0x08)
        if dup and qos == 0:
            raise MalformedFrame("DUP set on a QoS 0 PUBLISH", offset=0)
        topic = b.string("topic name")
        if not topic or has_wildcard(topic):
            raise MalformedFrame(f"invalid topic name {topic!r}", offset=base + 2)
        pid = b.packet_id("packet id") if qos == 1 else None
        return Publish(topic, b.rest(), qos, pid, dup, bool(flags & 0x01))
    expected = FIXED_FLAGS[ptype]
    if flags != expected:
        raise MalformedFrame(f"packet type {ptype} needs flags {expected:#x}, got {flags:#x}",
                             offset=0)
    if ptype == CONNECT:
        name = b.string("protocol name")
        if name != PROTOCOL_NAME:
            raise MalformedFrame(f"protocol name {name!r} is not {PROTOCOL_NAME!r}", offset=base)
        level_pos = base + b.pos
        level = b.take(1, "protocol level")[0]
        if level != PROTOCOL_LEVEL:
            raise MalformedFrame(f"protocol level {level} is not {PROTOCOL_LEVEL}",
                                 offset=level_pos)
        cflags_pos = base + b.pos
        cflags = b.take(1, "connect flags")[0]
        if cflags & ~0x02:
            raise MalformedFrame(f"connect flags {cflags:#04x}: only clean-session is supported",
                                 offset=cflags_pos)
        keepalive = b.u16("keepalive")
        cid_pos = base + b.pos
        cid = b.string("client id")
        if not 1 <= len(cid.encode("utf-8")) <= MAX_CLIENT_ID:
            raise MalformedFrame(f"client id must be 1-{MAX_CLIENT_ID} bytes", offset=cid_pos)
        b.done("CONNECT")
        return Connect(cid, keepalive, bool(cflags & 0x02))
    if ptype == CONNACK:
        ack, code = b.take(2, "CONNACK body")
        if ack & ~0x01:
            raise MalformedFrame(f"reserved CONNACK flag bits set: {ack:#04x}", offset=base)
        if code > 5:
            raise MalformedFrame(f"CONNACK return code {code} outside 0..5", offset=base + 1)
        b.done("CONNACK")
        return Connack(code, bool(ack & 0x01))
    if ptype == PUBACK:
        pid = b.packet_id("packet id")
        b.done("PUBACK")
        return Puback(pid)
    if ptype == SUBSCRIBE:
        pid = b.packet_id("packet id")
        topics = []
        while b.pos < len(body):
            topic = b.string("topic filter")
            qpos = base + b.pos
            qos = b.take(1, "requested QoS")[0]
            if not topic or qos > 2:
                raise MalformedFrame(f"bad subscription ({topic!r}, {qos})", offset=qpos)
            topics.append((topic, qos))
        if not topics:
            raise MalformedFrame("SUBSCRIBE without topic filters", offset=base + b.pos)
        return Subscribe(pid, tuple(topics))
    if ptype == SUBACK:
        pid = b.packet_id("packet id")
        codes = tuple(b.rest())
        if not codes:
            raise MalformedFrame("SUBACK without return codes", offset=base + 2)
        for i, c in enumerate(codes):
            if c not in (0, 1, 2, SUBACK_FAILURE):
                raise MalformedFrame(f"SUBACK return code {c:#04x} is invalid",
                                     offset=base + 2 + i)
        return Suback(pid, codes)
    b.done({PINGREQ: "PINGREQ", PINGRESP: "PINGRESP", DISCONNECT: "DISCONNECT"}[ptype])
    return {PINGREQ: Pingreq, PINGRESP: Pingresp, DISCONNECT: Disconnect}[ptype]()


def split_frame(data):
    """``(packet, consumed)`` for the first frame in ``data``, or ``(None, 0)``
    while the frame is still incomplete."""
    if not data:
        return None, 0
    ptype, flags = data[0] >> 4, data[0] & 0x0F
    if ptype not in FIXED_FLAGS and ptype != PUBLISH:
        raise MalformedFrame(f"unsupported packet type {ptype}", offset=0)
    length, n = decode_varint(data, 1)
    if length is None:
        return None, 0
    end = 1 + n + length
    if len(data) < end:
        return None, 0
    return _parse(ptype, flags, bytes(data[1 + n:end]), 1 + n), end


def decode_packet(data):
    """Decode exactly one complete frame."""
    data = bytes(data)
    packet, used = split_frame(data)
    if packet is None:
        raise MalformedFrame(f"incomplete frame ({len(data)} bytes)", offset=len(data))
    if used != len(data):
        raise MalformedFrame(f"{len(data) - used} bytes after the frame", offset=used)
    return packet


class FrameReader:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self.buffer = bytearray()

    def feed(self, chunk):
        self.buffer += chunk
        out = []
        while True:
            packet, used = split_frame(self.buffer)
            if packet is None:
                return out
            del self.buffer[:used]
            out.append(packet)
