"""On-disk layout of run artifacts under the output directory."""

from __future__ import annotations

import json
from pathlib import Path

from amqc import CLASS_NAMES
from amqc.datagen import SampleSet, read_annotation, read_pgm, write_annotation, write_pgm
from amqc.errors import DependencyError, FormatError

SPLIT_RATIO = (4, 1)


class Layout:
    def __init__(self, root):
        self.root = Path(root)
        self.data = self.root / "data"
        self.manifest = self.data / "manifest.json"
        self.model = self.root / "model"
        self.weights = self.model / "weights.amqw"
        self.train_log = self.model / "train_log.jsonl"
        self.qweights = self.model / "weights.amq8"
        self.quant_log = self.model / "quantize.json"
        self.eval_txt = self.root / "eval" / "report.txt"
        self.eval_jsonl = self.root / "eval" / "report.jsonl"
        self.bench = self.root / "bench" / "latency.jsonl"
        self.loop = self.root / "loop" / "loop.jsonl"
        self.report = self.root / "report.txt"


def require(path, producer):
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing {path}; run `amqc {producer}` first")
    return path


def dump_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_jsonl(path, rows):
    write_text(path, "".join(dump_json(r) + "\n" for r in rows))


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_dataset(layout, sample_set, provenance):
    """PGM + VOC XML pair per sample, plus a manifest listing them in order."""
    images = layout.data / "images"
    images.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, ann) in enumerate(sample_set.samples):
        stem = f"{i:05d}_{CLASS_NAMES[ann.class_id]}"
        write_pgm(images / f"{stem}.pgm", img)
        write_annotation(images / f"{stem}.xml", ann, f"{stem}.pgm")
        entries.append({"stem": stem, "class_id": ann.class_id})
    manifest = {"seed": sample_set.seed, "n_samples": len(sample_set),
                "class_counts": list(sample_set.class_counts), "split_ratio": list(SPLIT_RATIO),
                "samples": entries, "provenance": provenance}
    write_text(layout.manifest, json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def read_dataset(layout):
    require(layout.manifest, "gen-data")
    manifest = json.loads(layout.manifest.read_text(encoding="utf-8"))
    samples = []
    for e in manifest["samples"]:
        stem = layout.data / "images" / e["stem"]
        img = read_pgm(require(stem.with_suffix(".pgm"), "gen-data"))
        ann, _ = read_annotation(require(stem.with_suffix(".xml"), "gen-data"))
        if ann.class_id != e["class_id"]:
            raise FormatError(f"{stem}.xml class {ann.class_id} disagrees with the manifest")
        samples.append((img, ann))
    return SampleSet(samples, manifest["seed"]), manifest
