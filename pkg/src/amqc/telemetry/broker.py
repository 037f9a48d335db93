"""Threaded broker for the MQTT subset: exact-match topics, QoS 0/1."""

from __future__ import annotations

import socket
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace

from amqc.errors import FormatError, InvalidArgument
from amqc.telemetry.frames import (
    SUBACK_FAILURE,
    Connack,
    Connect,
    Disconnect,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
    has_wildcard,
)
from amqc.telemetry.link import Link, log

DEFAULT_RETRANSMIT_MS = 200
DEFAULT_MAX_ATTEMPTS = 10


@dataclass
class _Inflight:
    packet: Publish
    attempts: int
    deadline: float


@dataclass
class Session:
    client_id: str
    link: Link
    subscriptions: dict = field(default_factory=dict)  # topic -> granted qos
    inflight: dict = field(default_factory=dict)  # packet id -> _Inflight
    next_id: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def fresh_id(self):
        for _ in range(0xFFFF):
            self.next_id = self.next_id % 0xFFFF + 1
            if self.next_id not in self.inflight:
                return self.next_id
        raise InvalidArgument(f"session {self.client_id}: all 65535 packet ids in flight")


class Broker:
    """Use as a context manager, or call :meth:`start` / :meth:`stop`.

    ``drop_hook(direction, client_id, packet) -> bool`` sees every packet the
    broker receives (``"in"``) or is about to send (``"out"``); returning True
    silently discards it. Tests use it to lose PUBACKs.
    """

    def __init__(self, host="127.0.0.1", port=0, retransmit_ms=DEFAULT_RETRANSMIT_MS,
                 max_attempts=DEFAULT_MAX_ATTEMPTS, drop_hook=None):
        if retransmit_ms <= 0 or max_attempts < 1:
            raise InvalidArgument("retransmit_ms must be > 0 and max_attempts >= 1")
        self.host, self.port = host, port
        self.retransmit_s = retransmit_ms / 1000.0
        self.max_attempts = max_attempts
        self.drop_hook = drop_hook
        self.sessions = {}
        self.sequence = Counter()  # (topic, publisher) -> first-time publishes seen
        self.stats = Counter()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._listener = None
        self._threads = []

    # -- lifecycle ------------------------------------------------------------

    def start(self, listen=True):
        if listen:
            self._listener = socket.create_server((self.host, self.port))
            self.port = self._listener.getsockname()[1]
            self._spawn(self._accept_loop, "broker-accept")
        self._spawn(self._retransmit_loop, "broker-retransmit")
        return self

    def stop(self):
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._lock:
            sessions = list(self.sessions.values())
        for s in sessions:
            s.link.close()
        for t in self._threads:
            t.join(timeout=2.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    @property
    def address(self):
        return self.host, self.port

    def attach(self, sock):
        """Serve an already connected socket (e.g. one end of a socketpair)."""
        self._spawn(self._serve, "broker-session", Link(sock))

    def _spawn(self, target, name, *args):
        t = threading.Thread(target=target, args=args, name=name, daemon=True)
        t.start()
        self._threads = [x for x in self._threads if x.is_alive()] + [t]

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self.attach(conn)

    # -- per-connection -------------------------------------------------------

    def _send(self, session, packet):
        if self.drop_hook is not None and self.drop_hook("out", session.client_id, packet):
            self.stats["dropped_out"] += 1
            return
        try:
            session.link.send(packet)
        except OSError:
            pass  # the session's reader notices the dead socket

    def _serve(self, link):
        session = None
        try:
            for packet in link.packets():
                if session is None:
                    session = self._open(link, packet)
                    if session is None:
                        return
                    continue
                if self.drop_hook is not None and self.drop_hook("in", session.client_id, packet):
                    self.stats["dropped_in"] += 1
                    continue
                if isinstance(packet, Disconnect):
                    return
                self._handle(session, packet)
        except FormatError as exc:
            who = session.client_id if session else "unidentified client"
            log.warning("closing %s: malformed frame: %s", who, exc)
            self.stats["malformed"] += 1
        finally:
            link.close()
            if session is not None:
                with self._lock:
                    if self.sessions.get(session.client_id) is session:
                        del self.sessions[session.client_id]

    def _open(self, link, packet):
        if not isinstance(packet, Connect):
            log.warning("closing connection: first packet was %s, not CONNECT",
                        type(packet).__name__)
            return None
        session = Session(packet.client_id, link)
        with self._lock:
            prior = self.sessions.get(packet.client_id)
            self.sessions[packet.client_id] = session
        if prior is not None:
            log.info("client id %r taken over; closing the earlier session", packet.client_id)
            self.stats["takeovers"] += 1
            prior.link.close()
        self._send(session, Connack(0))
        return session

    def _handle(self, session, packet):
        if isinstance(packet, Publish):
            self._route(session, packet)
            if packet.qos == 1:
                self._send(session, Puback(packet.packet_id))
        elif isinstance(packet, Puback):
            with session.lock:
                session.inflight.pop(packet.packet_id, None)
        elif isinstance(packet, Subscribe):
            codes = []
            for topic, qos in packet.topics:
                if has_wildcard(topic):
                    codes.append(SUBACK_FAILURE)
                    continue
                granted = min(qos, 1)
                with session.lock:
                    session.subscriptions[topic] = granted
                codes.append(granted)
            self._send(session, Suback(packet.packet_id, tuple(codes)))
        elif isinstance(packet, Pingreq):
            self._send(session, Pingresp())
        else:
            raise FormatError(f"unexpected {type(packet).__name__} from a client")

    def _route(self, publisher, packet):
        self.stats["received"] += 1
        if not packet.dup:
            self.sequence[(packet.topic, publisher.client_id)] += 1
        with self._lock:
            targets = [(s, s.subscriptions.get(packet.topic)) for s in self.sessions.values()]
        for target, granted in targets:
            if granted is None:
                continue
            qos = min(granted, packet.qos)
            if qos == 0:
                out = Publish(packet.topic, packet.payload)
            else:
                with target.lock:
                    pid = target.fresh_id()
                    # a publisher retransmission is forwarded as a flagged duplicate
                    out = Publish(packet.topic, packet.payload, 1, pid, dup=packet.dup)
                    target.inflight[pid] = _Inflight(out, 1, time.monotonic() + self.retransmit_s)
            self.stats["forwarded"] += 1
            self._send(target, out)

    def _retransmit_loop(self):
        tick = max(self.retransmit_s / 4, 0.005)
        while not self._stop.wait(tick):
            now = time.monotonic()
            with self._lock:
                sessions = list(self.sessions.values())
            for s in sessions:
                resend = []
                with s.lock:
                    for pid, item in list(s.inflight.items()):
                        if item.deadline > now:
                            continue
                        if item.attempts >= self.max_attempts:
                            log.warning("giving up on packet %d to %s after %d attempts",
                                        pid, s.client_id, item.attempts)
                            self.stats["abandoned"] += 1
                            del s.inflight[pid]
                            continue
                        item.attempts += 1
                        item.deadline = now + self.retransmit_s
                        item.packet = replace(item.packet, dup=True)
                        resend.append(item.packet)
                for p in resend:
                    self.stats["retransmitted"] += 1
                    self._send(s, p)
