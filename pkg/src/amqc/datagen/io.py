"""Binary PGM (P5, maxval 255) and Pascal-VOC-style annotation files.

VOC dialect, one object per file::

    <annotation>
      <filename>00001.pgm</filename>
      <size><width>120</width><height>80</height><depth>1</depth></size>
      <object>
        <name>crack</name>
        <bndbox><xmin>..</xmin><ymin>..</ymin><xmax>..</xmax><ymax>..</ymax></bndbox>
      </object>
    </annotation>

Coordinates are integer pixels; ``xmax``/``ymax`` are exclusive.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from amqc import CLASS_NAMES
from amqc.datagen.synth import Annotation, check_image
from amqc.errors import FormatError, InvalidArgument, ParseError

_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def encode_pgm(image):
    image = check_image(image)
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def decode_pgm(data):
    if not data.startswith(b"P5"):
        raise FormatError(f"not a binary PGM: magic {data[:2]!r}", offset=0)
    m = _PGM_HEADER.match(data)
    if m is None:
        raise FormatError("malformed PGM header", offset=2)
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval} (only 255)", offset=m.start(3))
    if width == 0 or height == 0:
        raise FormatError("PGM has zero area", offset=m.start(1))
    start = m.end()
    need = width * height
    payload = data[start:start + need]
    if len(payload) < need:
        raise FormatError(
            f"truncated PGM payload: expected {need} bytes, found {len(payload)}",
            offset=start + len(payload))
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image):
    Path(path).write_bytes(encode_pgm(image))


def read_pgm(path):
    return decode_pgm(Path(path).read_bytes())


def encode_annotation(ann, image_name):
    xmin, ymin, xmax, ymax = ann.bbox
    return (
        "<annotation>\n"
        f"  <filename>{_escape(image_name)}</filename>\n"
        "  <size>\n"
        f"    <width>{ann.image_width}</width>\n"
        f"    <height>{ann.image_height}</height>\n"
        "    <depth>1</depth>\n"
        "  </size>\n"
        "  <object>\n"
        f"    <name>{CLASS_NAMES[ann.class_id]}</name>\n"
        "    <bndbox>\n"
        f"      <xmin>{xmin}</xmin>\n"
        f"      <ymin>{ymin}</ymin>\n"
        f"      <xmax>{xmax}</xmax>\n"
        f"      <ymax>{ymax}</ymax>\n"
        "    </bndbox>\n"
        "  </object>\n"
        "</annotation>\n"
    ).encode("utf-8")


def _escape(text):
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _child(parent, tag):
    found = parent.findall(tag)
    if len(found) != 1:
        raise ParseError(f"expected exactly one <{tag}> in <{parent.tag}>, found {len(found)}",
                         element=tag)
    return found[0]


def _int(parent, tag):
    text = (_child(parent, tag).text or "").strip()
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"not an integer: {text!r}", element=tag) from None


def decode_annotation(data):
    """Parse VOC XML into ``(Annotation, filename)``."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}", element="annotation") from None
    if root.tag != "annotation":
        raise ParseError(f"root element is <{root.tag}>", element="annotation")
    filename = (_child(root, "filename").text or "").strip()
    size = _child(root, "size")
    width, height, depth = _int(size, "width"), _int(size, "height"), _int(size, "depth")
    if depth != 1:
        raise ParseError(f"only single-channel images are supported, got depth {depth}",
                         element="depth")
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid image size {width}x{height}", element="size")
    obj = _child(root, "object")
    name = (_child(obj, "name").text or "").strip()
    if name not in CLASS_NAMES:
        raise ParseError(f"unknown class name {name!r}", element="name")
    box = _child(obj, "bndbox")
    xmin, ymin, xmax, ymax = (_int(box, t) for t in ("xmin", "ymin", "xmax", "ymax"))
    if xmax <= xmin:
        raise ParseError(f"inverted bbox: xmax {xmax} <= xmin {xmin}", element="xmax")
    if ymax <= ymin:
        raise ParseError(f"inverted bbox: ymax {ymax} <= ymin {ymin}", element="ymax")
    for tag, v, hi in (("xmin", xmin, width), ("ymin", ymin, height),
                       ("xmax", xmax, width), ("ymax", ymax, height)):
        if not 0 <= v <= hi:
            raise ParseError(f"coordinate {v} outside image bounds [0, {hi}]", element=tag)
    try:
        ann = Annotation(CLASS_NAMES.index(name), (xmin, ymin, xmax, ymax), width, height)
    except InvalidArgument as exc:
        raise ParseError(str(exc), element="bndbox") from None
    return ann, filename


def write_annotation(path, ann, image_name):
    Path(path).write_bytes(encode_annotation(ann, image_name))


def read_annotation(path):
    return decode_annotation(Path(path).read_bytes())
