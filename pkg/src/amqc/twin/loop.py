"""Closed-loop simulator: process model -> (optional CNN + telemetry) -> controller."""

from __future__ import annotations

import json
import queue
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from amqc import NUM_CLASSES
from amqc.datagen.synth import derive_seed, render
from amqc.datagen.transforms import preprocess_batch
from amqc.errors import ConfigError, StateError
from amqc.metrics import correction_rate, defect_reduction_rate
from amqc.telemetry.client import connect_inprocess
from amqc.telemetry.record import DefectRecord, decode_record, encode_record
from amqc.telemetry.topics import control_topic, defects_topic, layers_topic
from amqc.twin.controller import (
    DEFAULT_THRESHOLDS,
    NO_ACTION,
    apply_action,
    decide_action,
    encode_control,
)
from amqc.twin.model import ProcessState, energy_density, sample_layer_outcome

MODES = ("model_only", "full_pipeline")
MARKER_FORMAT = "<II"  # layer index, records published for that layer
REPORT_WINDOW = 10


@dataclass(frozen=True)
class LoopConfig:
    layers: int = 200
    sites: int = 200
    seed: int = 42
    controller: bool = True
    mode: str = "model_only"
    thresholds: tuple = DEFAULT_THRESHOLDS
    start: ProcessState = field(default_factory=ProcessState)
    node_id: int = 1
    queue_size: int = 64
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigError(f"layers must be >= 2, got {self.layers}")
        if self.sites < 1:
            raise ConfigError(f"sites must be >= 1, got {self.sites}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not all(0.0 < t <= 1.0 for t in self.thresholds):
            raise ConfigError(f"thresholds must lie in (0, 1], got {self.thresholds}")

    def as_dict(self):
        return {"layers": self.layers, "sites": self.sites, "seed": self.seed,
                "controller": self.controller, "mode": self.mode,
                "thresholds": list(self.thresholds), "start": self.start.as_dict(),
                "node_id": self.node_id}


@dataclass
class LayerRecord:
    layer: int
    state: ProcessState
    energy: float
    counts: list  # counts the controller saw (classified in full_pipeline)
    true_counts: list
    action: object

    @property
    def defects(self):
        return int(sum(self.counts))

    def as_dict(self):
        return {"kind": "layer", "layer": self.layer, "state": self.state.as_dict(),
                "energy_j_mm3": self.energy, "counts": [int(c) for c in self.counts],
                "true_counts": [int(c) for c in self.true_counts], "defects": self.defects,
                "action": self.action.kind, "deltas": list(self.action.deltas)}


@dataclass
class LoopReport:
    config: LoopConfig
    layers: list
    baseline_defect_rate: float
    final_defect_rate: float
    defect_reduction_pct: float
    correction_rate_pct: float
    actions_taken: int
    successful_actions: int

    def summary(self):
        return {"kind": "summary", "baseline_defect_rate": self.baseline_defect_rate,
                "final_defect_rate": self.final_defect_rate,
                "defect_reduction_pct": self.defect_reduction_pct,
                "correction_rate_pct": self.correction_rate_pct,
                "actions_taken": self.actions_taken,
                "successful_actions": self.successful_actions,
                "config": self.config.as_dict()}

    def to_jsonl(self):
        lines = [r.as_dict() for r in self.layers] + [self.summary()]
        return "".join(json.dumps(x, sort_keys=True, separators=(",", ":")) + "\n" for x in lines)


def window_size(n_layers):
    return REPORT_WINDOW if n_layers >= 2 * REPORT_WINDOW else n_layers // 2


def summarize(config, records):
    """Rates are defects per layer; windows are the first and last ``window_size`` layers."""
    defects = np.array([r.defects for r in records], dtype=np.float64)
    w = window_size(len(records))
    before, after = float(defects[:w].mean()), float(defects[-w:].mean())
    reduction = defect_reduction_rate(before, after) if before > 0 else 0.0
    # the final layer's action has no following layer to judge it by
    taken = [i for i, r in enumerate(records[:-1]) if r.action.taken]
    ok = sum(defects[i + 1] < defects[i] for i in taken)
    return LoopReport(config, list(records), before, after, reduction,
                      correction_rate(int(ok), len(taken)), len(taken), int(ok))


def run_closed_loop(config, network=None, broker=None):
    if config.mode == "model_only":
        return _run_model_only(config)
    if network is None or broker is None:
        raise ConfigError("full_pipeline mode needs both a network and a broker")
    return _FullPipeline(config, network, broker).run()


def _layer_seed(config, layer):
    return derive_seed(config.seed, layer)


def _control(config, counts, state):
    if not config.controller:
        return NO_ACTION
    return decide_action(counts, config.sites, state, config.thresholds)


def _run_model_only(config):
    state, records = config.start, []
    for layer in range(config.layers):
        counts = sample_layer_outcome(state, config.sites, _layer_seed(config, layer))
        action = _control(config, counts, state)
        records.append(LayerRecord(layer, state, energy_density(state), counts.tolist(),
                                   counts.tolist(), action))
        state = apply_action(state, action)
    return summarize(config, records)


def classify(network, x):
    """Class probabilities from a float or quantized network."""
    from amqc.quant.qnet import QuantizedNetwork, qforward

    if isinstance(network, QuantizedNetwork):
        return qforward(network, x)
    return network.forward(x)


_STOP = object()


class _FullPipeline:
    """acquisition -> inference/publish -> broker -> twin subscriber -> controller.

    Stages are threads joined by bounded queues; a full queue blocks its producer.
    The next layer's state comes back from the controller, so layers run in order.
    """

    def __init__(self, config, network, broker):
        self.cfg = config
        self.network = network
        self.broker = broker
        size = config.queue_size
        self.frames = queue.Queue(size)  # (layer, idx, image, annotation) or ("end", layer, n)
        self.inbox = queue.Queue(size)  # (topic, payload) from the subscriber
        self.states = queue.Queue(1)
        self.true_counts = {}
        self.failure = None
        self.halt = threading.Event()

    def _put(self, q, item):
        while not self.halt.is_set():
            try:
                q.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def _get(self, q):
        while not self.halt.is_set():
            try:
                return q.get(timeout=0.1)
            except queue.Empty:
                continue
        return _STOP

    def _guard(self, fn):
        def run():
            try:
                fn()
            except BaseException as exc:  # surfaced by run()
                self.failure = exc
                self.halt.set()
        return run

    def _acquire(self):
        cfg = self.cfg
        for layer in range(cfg.layers):
            state = self._get(self.states)
            if state is _STOP:
                return
            counts = sample_layer_outcome(state, cfg.sites, _layer_seed(cfg, layer))
            self.true_counts[layer] = counts.tolist()
            labels = np.repeat(np.arange(NUM_CLASSES), counts)
            for idx, c in enumerate(labels):
                image, ann, _ = render(int(c), derive_seed(cfg.seed, layer, idx))
                self._put(self.frames, (layer, idx, image, ann))
            self._put(self.frames, ("end", layer, len(labels)))

    def _infer(self, client):
        cfg = self.cfg
        batch = []
        while True:
            item = self._get(self.frames)
            if item is _STOP:
                return
            if item[0] != "end":
                batch.append(item)
                continue
            _, layer, n = item
            if batch:
                probs = classify(self.network, preprocess_batch([b[2] for b in batch]))
                for (lay, idx, _, ann), p in zip(batch, probs):
                    rec = DefectRecord.with_confidence(
                        float(p.max()), timestamp_us=lay * 1_000_000 + idx, layer_index=lay,
                        class_id=int(p.argmax()), bbox=ann.bbox, node_id=cfg.node_id)
                    client.publish(defects_topic(cfg.node_id), encode_record(rec))
            client.publish(layers_topic(cfg.node_id), struct.pack(MARKER_FORMAT, layer, n))
            batch = []
            if layer == cfg.layers - 1:
                return

    def run(self):
        cfg = self.cfg
        on_msg = lambda m: self._put(self.inbox, (m.topic, m.payload))  # noqa: E731
        edge = connect_inprocess(self.broker, f"edge-{cfg.node_id}")
        twin = connect_inprocess(self.broker, f"twin-{cfg.node_id}")
        threads = []
        try:
            twin.subscribe(defects_topic(cfg.node_id), on_msg)
            twin.subscribe(layers_topic(cfg.node_id), on_msg)
            threads = [threading.Thread(target=self._guard(self._acquire), daemon=True),
                       threading.Thread(target=self._guard(lambda: self._infer(edge)),
                                        daemon=True)]
            for t in threads:
                t.start()
            records = self._control_loop(edge)
            edge.wait_for_acks(cfg.timeout_s)
        finally:
            self.halt.set()
            for t in threads:
                t.join(timeout=5.0)
            edge.disconnect()
            twin.disconnect()
        return summarize(cfg, records)

    def _control_loop(self, edge):
        cfg = self.cfg
        state, records = cfg.start, []
        seen, pending = set(), {}  # dedup keys; layer -> per-class counts
        expected = {}
        self.states.put(state)
        layer = 0
        while layer < cfg.layers:
            try:
                topic, payload = self.inbox.get(timeout=cfg.timeout_s)
            except queue.Empty:
                if self.failure is not None:
                    raise self.failure
                raise StateError(f"no telemetry for layer {layer} within {cfg.timeout_s}s") from None
            if self.failure is not None:
                raise self.failure
            if topic == layers_topic(cfg.node_id):
                lay, n = struct.unpack(MARKER_FORMAT, payload)
                expected[lay] = n
            else:
                rec = decode_record(payload)
                key = (rec.layer_index, rec.timestamp_us)
                if key in seen:
                    continue  # QoS 1 duplicate
                seen.add(key)
                pending.setdefault(rec.layer_index, [0] * NUM_CLASSES)[rec.class_id] += 1
            counts = pending.get(layer, [0] * NUM_CLASSES)
            if expected.get(layer) != sum(counts):
                continue
            action = _control(cfg, counts, state)
            records.append(LayerRecord(layer, state, energy_density(state), counts,
                                       self.true_counts[layer], action))
            edge.publish(control_topic(cfg.node_id), encode_control(action))
            state = apply_action(state, action)
            pending.pop(layer, None)
            layer += 1
            if layer < cfg.layers:
                self.states.put(state)
        return records


def defect_rates(report):
    """Per-layer defect fraction of sites."""
    return np.array([r.defects for r in report.layers], dtype=np.float64) / report.config.sites


__all__ = ["LayerRecord", "LoopConfig", "LoopReport", "MODES", "classify", "defect_rates",
           "run_closed_loop", "summarize", "window_size"]
