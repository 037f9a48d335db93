"""26-byte defect record and its canonical JSON baseline."""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass

from amqc.datagen.transforms import round_half_away
from amqc.errors import InvalidArgument, ParseError

RECORD_VERSION = 1
RECORD_FORMAT = "<BQIBH4HH"
RECORD_SIZE = struct.calcsize(RECORD_FORMAT)  # 26
CONF_SCALE = 65535
JSON_KEYS = ("version", "timestamp_us", "layer_index", "class_id", "confidence", "bbox", "node_id")

_LIMITS = {"timestamp_us": 64, "layer_index": 32, "confidence_q": 16, "node_id": 16}


@dataclass(frozen=True)
class DefectRecord:
    timestamp_us: int
    layer_index: int
    class_id: int
    confidence_q: int
    bbox: tuple  # (xmin, ymin, xmax, ymax), pixels
    node_id: int
    version: int = RECORD_VERSION

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
        problem = _check(self)
        if problem:
            raise InvalidArgument(f"{problem[0]}: {problem[1]}")

    @property
    def confidence(self):
        return self.confidence_q / CONF_SCALE

    @classmethod
    def with_confidence(cls, confidence, **fields):
        if not 0.0 <= confidence <= 1.0:
            raise InvalidArgument(f"confidence must be in [0, 1], got {confidence}")
        return cls(confidence_q=int(round_half_away(confidence * CONF_SCALE)), **fields)


def _check(r):
    """First violated invariant as ``(field, message)``, or None."""
    if r.version != RECORD_VERSION:
        return "version", f"expected {RECORD_VERSION}, got {r.version}"
    for name, bits in _LIMITS.items():
        v = getattr(r, name)
        if not 0 <= v < 1 << bits:
            return name, f"{v} does not fit in u{bits}"
    if not 0 <= r.class_id <= 3:
        return "class_id", f"must be in 0..3, got {r.class_id}"
    if len(r.bbox) != 4 or not all(0 <= v <= 0xFFFF for v in r.bbox):
        return "bbox", f"need four u16 values, got {r.bbox}"
    xmin, ymin, xmax, ymax = r.bbox
    if xmin >= xmax:
        return "bbox", f"xmin {xmin} must be < xmax {xmax}"
    if ymin >= ymax:
        return "bbox", f"ymin {ymin} must be < ymax {ymax}"
    return None


def encode_record(r):
    return struct.pack(RECORD_FORMAT, r.version, r.timestamp_us, r.layer_index, r.class_id,
                       r.confidence_q, *r.bbox, r.node_id)


def decode_record(data):
    data = bytes(data)
    if len(data) != RECORD_SIZE:
        raise ParseError(f"expected {RECORD_SIZE} bytes, got {len(data)}", element="length")
    version, ts, layer, cls, conf, x0, y0, x1, y1, node = struct.unpack(RECORD_FORMAT, data)
    if version != RECORD_VERSION:
        raise ParseError(f"expected {RECORD_VERSION}, got {version}", element="version", offset=0)
    if cls > 3:
        raise ParseError(f"must be in 0..3, got {cls}", element="class_id", offset=13)
    if x0 >= x1 or y0 >= y1:
        raise ParseError(f"inverted box {(x0, y0, x1, y1)}", element="bbox", offset=16)
    return DefectRecord(ts, layer, cls, conf, (x0, y0, x1, y1), node, version)


def record_json(r):
    """Canonical JSON: fixed key order, no whitespace, confidence to 6 decimals."""
    return ('{"version":%d,"timestamp_us":%d,"layer_index":%d,"class_id":%d,'
            '"confidence":%.6f,"bbox":[%d,%d,%d,%d],"node_id":%d}'
            % (r.version, r.timestamp_us, r.layer_index, r.class_id, r.confidence, *r.bbox,
               r.node_id))


_CONF_RE = re.compile(r'"confidence":(-?\d+\.\d{6})[,}]')


def parse_record_json(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), element="json") from None
    if not isinstance(d, dict) or tuple(d) != JSON_KEYS:
        raise ParseError(f"keys must be {JSON_KEYS} in order", element="json")
    m = _CONF_RE.search(text)
    if m is None:
        raise ParseError("confidence must have 6 decimals", element="confidence")
    try:
        return DefectRecord.with_confidence(
            float(m.group(1)), timestamp_us=d["timestamp_us"], layer_index=d["layer_index"],
            class_id=d["class_id"], bbox=tuple(d["bbox"]), node_id=d["node_id"],
            version=d["version"])
    except (InvalidArgument, TypeError) as exc:
        raise ParseError(str(exc), element="record") from None
