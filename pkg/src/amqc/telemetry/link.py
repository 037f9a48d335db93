"""Framed packet I/O over a connected stream socket."""

from __future__ import annotations

import logging
import socket
import threading

import numpy as np

from amqc.telemetry.frames import FrameReader, encode_packet

log = logging.getLogger("amqc.telemetry")


class Link:
    """Thread-safe sender plus a blocking frame iterator for one socket."""

    def __init__(self, sock):
        self.sock = sock
        self._send_lock = threading.Lock()
        self._reader = FrameReader()
        self.closed = False

    def send(self, packet):
        data = encode_packet(packet)
        with self._send_lock:
            if self.closed:
                raise OSError("link closed")
            self.sock.sendall(data)

    def packets(self):
        """Yield decoded packets until EOF; MalformedFrame propagates."""
        while True:
            try:
                chunk = self.sock.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            yield from self._reader.feed(chunk)

    def close(self):
        with self._send_lock:
            if self.closed:
                return
            self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class DropInjector:
    """Seeded drop decision for packets of the given types.

    Call signature matches the broker's ``drop_hook(direction, client_id,
    packet)``. ``directions`` limits which way the drops apply.
    """

    def __init__(self, probability, seed=0, kinds=None, directions=("in", "out")):
        if not 0.0 <= probability <= 1.0:
            raise ValueError(f"drop probability must be in [0, 1], got {probability}")
        from amqc.telemetry.frames import Puback

        self.probability = probability
        self.kinds = tuple(kinds) if kinds is not None else (Puback,)
        self.directions = tuple(directions)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self.dropped = 0

    def __call__(self, direction, client_id, packet):
        if direction not in self.directions or not isinstance(packet, self.kinds):
            return False
        with self._lock:
            drop = bool(self._rng.random() < self.probability)
            self.dropped += drop
        return drop
