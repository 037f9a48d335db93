"""Client side of the MQTT subset."""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, replace

from amqc.errors import ConnectionLost, FormatError, InvalidArgument, StateError, SubscriptionError
from amqc.telemetry.broker import DEFAULT_MAX_ATTEMPTS, DEFAULT_RETRANSMIT_MS
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


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    qos: int
    dup: bool
    packet_id: int | None = None


class Client:
    """One session. Handlers run on the client's reader thread."""

    def __init__(self, client_id, sock, retransmit_ms=DEFAULT_RETRANSMIT_MS,
                 max_attempts=DEFAULT_MAX_ATTEMPTS, keepalive=60):
        raw = client_id.encode("utf-8")
        if not 1 <= len(raw) <= 64:
            raise InvalidArgument(f"client id must be 1-64 bytes, got {len(raw)}")
        self.client_id = client_id
        self.keepalive = keepalive
        self.retransmit_s = retransmit_ms / 1000.0
        self.max_attempts = max_attempts
        self.link = Link(sock)
        self.failed = set()  # ids abandoned after max_attempts
        self.retransmissions = 0
        self._handlers = {}
        self._inflight = {}  # pid -> [Publish, attempts, deadline]
        self._next_id = 0
        self._pending = {}  # pid -> (Event, [response]) for SUBACK
        self._cond = threading.Condition()
        self._connack = threading.Event()
        self._connack_code = None
        self._pong = threading.Event()
        self._lost = None
        self._threads = []

    # -- connection -----------------------------------------------------------

    @classmethod
    def connect_tcp(cls, host, port, client_id, timeout=5.0, **kw):
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(client_id, sock, **kw).connect(timeout)

    def connect(self, timeout=5.0):
        for target, name in ((self._read_loop, "client-read"),
                             (self._retransmit_loop, "client-retransmit")):
            t = threading.Thread(target=target, name=f"{name}-{self.client_id}", daemon=True)
            t.start()
            self._threads.append(t)
        self.link.send(Connect(self.client_id, self.keepalive))
        if not self._connack.wait(timeout):
            self.link.close()
            raise ConnectionLost(f"no CONNACK within {timeout}s")
        if self._connack_code:
            self.link.close()
            raise ConnectionLost(f"connection refused, CONNACK code {self._connack_code}")
        return self

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.disconnect()

    def disconnect(self):
        if self.link.closed:
            return
        try:
            self.link.send(Disconnect())
        except OSError:
            pass
        self.link.close()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout=2.0)

    @property
    def connected(self):
        return self._connack.is_set() and self._lost is None and not self.link.closed

    @property
    def unacked(self):
        with self._cond:
            return tuple(sorted(self._inflight))

    def _check_alive(self):
        if self._lost is not None:
            raise ConnectionLost(self._lost, self.unacked)
        if self.link.closed:
            raise StateError("client is disconnected")

    # -- publish --------------------------------------------------------------

    def _fresh_id(self):
        for _ in range(0xFFFF):
            self._next_id = self._next_id % 0xFFFF + 1
            if self._next_id not in self._inflight and self._next_id not in self._pending:
                return self._next_id
        raise StateError("all 65535 packet ids are in flight")

    def publish(self, topic, payload, qos=1, wait=False, timeout=10.0):
        """Send a PUBLISH; returns the packet id (None at QoS 0).

        QoS 1 messages are retransmitted with DUP set until acknowledged.
        ``wait=True`` blocks until this message's PUBACK.
        """
        if qos not in (0, 1):
            raise InvalidArgument(f"QoS {qos} is not supported")
        if not topic or has_wildcard(topic):
            raise InvalidArgument(f"invalid topic name {topic!r}")
        self._check_alive()
        if qos == 0:
            self.link.send(Publish(topic, bytes(payload)))
            return None
        with self._cond:
            pid = self._fresh_id()
            packet = Publish(topic, bytes(payload), 1, pid)
            self._inflight[pid] = [packet, 1, time.monotonic() + self.retransmit_s]
        try:
            self.link.send(packet)
        except OSError:
            self._mark_lost("connection lost while publishing")
            self._check_alive()
        if wait:
            self._wait(lambda: pid not in self._inflight, timeout)
        return pid

    def wait_for_acks(self, timeout=30.0):
        """Block until nothing is in flight. Returns False on timeout."""
        return self._wait(lambda: not self._inflight, timeout)

    def _wait(self, done, timeout):
        deadline = time.monotonic() + timeout
        with self._cond:
            while not done():
                if self._lost is not None:
                    raise ConnectionLost(self._lost, self._inflight)
                left = deadline - time.monotonic()
                if left <= 0:
                    return False
                self._cond.wait(min(left, 0.1))
        return True

    # -- subscribe ------------------------------------------------------------

    def subscribe(self, topic, handler, qos=1, timeout=5.0):
        """Register ``handler(Message)`` for an exact topic; returns the granted QoS."""
        self._check_alive()
        event, box = threading.Event(), []
        with self._cond:
            pid = self._fresh_id()
            self._pending[pid] = (event, box)
        self._handlers[topic] = handler
        self.link.send(Subscribe(pid, ((topic, qos),)))
        if not event.wait(timeout):
            self._pending.pop(pid, None)
            raise SubscriptionError(f"no SUBACK for {topic!r} within {timeout}s")
        code = box[0].return_codes[0]
        if code == SUBACK_FAILURE:
            self._handlers.pop(topic, None)
            raise SubscriptionError(f"broker refused subscription to {topic!r}")
        return code

    def ping(self, timeout=5.0):
        self._pong.clear()
        self.link.send(Pingreq())
        return self._pong.wait(timeout)

    # -- background threads ---------------------------------------------------

    def _mark_lost(self, reason):
        with self._cond:
            if self._lost is None:
                self._lost = reason
            self._cond.notify_all()

    def _read_loop(self):
        reason = "connection closed by peer"
        try:
            for packet in self.link.packets():
                self._dispatch(packet)
        except FormatError as exc:
            reason = f"malformed frame from broker: {exc}"
            log.warning("%s: %s", self.client_id, reason)
        if not self.link.closed or self._inflight:
            self._mark_lost(reason)
        self.link.close()

    def _dispatch(self, packet):
        if isinstance(packet, Connack):
            self._connack_code = packet.return_code
            self._connack.set()
        elif isinstance(packet, Puback):
            with self._cond:
                self._inflight.pop(packet.packet_id, None)
                self._cond.notify_all()
        elif isinstance(packet, Suback):
            with self._cond:
                waiter = self._pending.pop(packet.packet_id, None)
            if waiter is not None:
                waiter[1].append(packet)
                waiter[0].set()
        elif isinstance(packet, Publish):
            handler = self._handlers.get(packet.topic)
            if handler is not None:
                try:
                    handler(Message(packet.topic, packet.payload, packet.qos, packet.dup,
                                    packet.packet_id))
                except Exception:
                    log.exception("%s: handler for %r raised", self.client_id, packet.topic)
            if packet.qos == 1:
                try:
                    self.link.send(Puback(packet.packet_id))
                except OSError:
                    pass
        elif isinstance(packet, Pingresp):
            self._pong.set()

    def _retransmit_loop(self):
        tick = max(self.retransmit_s / 4, 0.005)
        while not self.link.closed and self._lost is None:
            time.sleep(tick)
            now = time.monotonic()
            resend = []
            with self._cond:
                for pid, item in list(self._inflight.items()):
                    if item[2] > now:
                        continue
                    if item[1] >= self.max_attempts:
                        log.warning("%s: giving up on packet %d", self.client_id, pid)
                        self.failed.add(pid)
                        del self._inflight[pid]
                        self._cond.notify_all()
                        continue
                    item[0] = replace(item[0], dup=True)
                    item[1] += 1
                    item[2] = now + self.retransmit_s
                    resend.append(item[0])
            for p in resend:
                self.retransmissions += 1
                try:
                    self.link.send(p)
                except OSError:
                    return


def connect_inprocess(broker, client_id, **kw):
    """Client wired to ``broker`` through a socketpair (no TCP listener needed)."""
    a, b = socket.socketpair()
    broker.attach(a)
    return Client(client_id, b, **kw).connect()
