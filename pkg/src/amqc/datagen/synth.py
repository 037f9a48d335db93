"""Procedural 4-class defect images.

Every image is ``base_intensity`` plus horizontal scan-track stripes plus
Gaussian sensor noise. One defect is painted per image:

=======  ============================================================
crack    thin (2 px) dark polyline, 4-5 vertices, gently bending
pinhole  small dark disk, radius 1.5-2.5 px (bbox at most 7x7)
hole     larger dark disk, radius 5-10 px
spatter  4-8 bright blobs (radius 1-2.5 px) scattered in a ~30 px patch
=======  ============================================================

Bounding boxes are half-open pixel ranges: columns ``xmin..xmax-1`` and rows
``ymin..ymax-1`` contain every defect pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from amqc import CLASS_NAMES, IMAGE_H, IMAGE_W, NUM_CLASSES
from amqc.errors import InvalidArgument

CRACK, PINHOLE, HOLE, SPATTER = range(4)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class GeneratorParams:
    height: int = IMAGE_H
    width: int = IMAGE_W
    base_intensity: int = 128
    noise_sigma: float = 6.0
    stripe_amplitude: float = 3.0
    stripe_period: float = 6.0
    dark_contrast: tuple[int, int] = (60, 100)
    bright_contrast: tuple[int, int] = (70, 110)
    pinhole_radius: tuple[float, float] = (1.5, 2.5)
    hole_radius: tuple[float, float] = (5.0, 10.0)

    def __post_init__(self):
        if self.height < 24 or self.width < 24:
            raise InvalidArgument("generator canvas must be at least 24x24")
        if not 0 <= self.base_intensity <= 255:
            raise InvalidArgument("base_intensity must be within [0, 255]")


@dataclass(frozen=True)
class Annotation:
    class_id: int
    bbox: tuple[int, int, int, int]  # xmin, ymin, xmax, ymax (half-open)
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.class_id not in range(NUM_CLASSES):
            raise InvalidArgument(f"class_id must be in 0..{NUM_CLASSES - 1}, got {self.class_id}")
        xmin, ymin, xmax, ymax = self.bbox
        if not (0 <= xmin < xmax <= self.image_width):
            raise InvalidArgument(
                f"bbox x-range [{xmin}, {xmax}) invalid for width {self.image_width}")
        if not (0 <= ymin < ymax <= self.image_height):
            raise InvalidArgument(
                f"bbox y-range [{ymin}, {ymax}) invalid for height {self.image_height}")

    @property
    def class_name(self):
        return CLASS_NAMES[self.class_id]

    @property
    def area(self):
        xmin, ymin, xmax, ymax = self.bbox
        return (xmax - xmin) * (ymax - ymin)


@dataclass
class SampleSet:
    samples: list = field(default_factory=list)  # [(uint8 HxW array, Annotation)]
    seed: int = 0

    @property
    def class_counts(self):
        counts = [0] * NUM_CLASSES
        for _, ann in self.samples:
            counts[ann.class_id] += 1
        return tuple(counts)

    def __len__(self):
        return len(self.samples)

    def labels(self):
        return np.array([ann.class_id for _, ann in self.samples], dtype=np.int64)


def check_image(image):
    """Validate a GrayImage: 2-D uint8 array with nonzero area."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise InvalidArgument(f"gray image must be 2-D, got shape {image.shape}")
    if image.size == 0:
        raise InvalidArgument("image has zero area")
    if image.dtype != np.uint8:
        raise InvalidArgument(f"gray image must be uint8, got {image.dtype}")
    return image


def derive_seed(*parts):
    """Deterministic 64-bit child seed from a tuple of nonnegative integers."""
    ss = np.random.SeedSequence([int(p) & _MASK64 for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _background(rng, p):
    y = np.arange(p.height, dtype=np.float64)[:, None]
    phase = rng.uniform(0.0, 2.0 * np.pi)
    stripes = p.stripe_amplitude * np.sin(2.0 * np.pi * y / p.stripe_period + phase)
    canvas = np.full((p.height, p.width), float(p.base_intensity)) + stripes
    return canvas


def _disk_mask(shape, cy, cx, radius):
    yy, xx = np.ogrid[:shape[0], :shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius


def _crack_mask(rng, p):
    mask = np.zeros((p.height, p.width), dtype=bool)
    margin = 3
    y = rng.uniform(margin + 10, p.height - margin - 10)
    x = rng.uniform(margin + 10, p.width - margin - 10)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    for _ in range(int(rng.integers(3, 5))):  # 3-4 segments => 4-5 vertices
        angle += rng.uniform(-0.6, 0.6)
        length = rng.uniform(12.0, 22.0)
        ny = float(np.clip(y + length * np.sin(angle), margin, p.height - 1 - margin))
        nx = float(np.clip(x + length * np.cos(angle), margin, p.width - 1 - margin))
        steps = int(np.ceil(max(abs(ny - y), abs(nx - x)) * 4)) + 1
        t = np.linspace(0.0, 1.0, steps)
        ys = np.floor(y + (ny - y) * t + 0.5).astype(int)
        xs = np.floor(x + (nx - x) * t + 0.5).astype(int)
        for dy in (0, 1):
            for dx in (0, 1):
                mask[ys + dy, xs + dx] = True
        y, x = ny, nx
    return mask


def _spatter_mask(rng, p):
    mask = np.zeros((p.height, p.width), dtype=bool)
    cy = rng.uniform(18, p.height - 18)
    cx = rng.uniform(18, p.width - 18)
    for _ in range(int(rng.integers(4, 9))):
        by = int(np.floor(cy + rng.uniform(-15, 15) + 0.5))
        bx = int(np.floor(cx + rng.uniform(-15, 15) + 0.5))
        mask |= _disk_mask(mask.shape, by, bx, rng.uniform(1.0, 2.5))
    return mask


def _defect_mask(class_id, rng, p):
    if class_id == CRACK:
        return _crack_mask(rng, p)
    if class_id == SPATTER:
        return _spatter_mask(rng, p)
    lo, hi = p.pinhole_radius if class_id == PINHOLE else p.hole_radius
    radius = rng.uniform(lo, hi)
    pad = int(np.ceil(radius)) + 1
    cy = int(rng.integers(pad, p.height - pad))
    cx = int(rng.integers(pad, p.width - pad))
    return _disk_mask((p.height, p.width), cy, cx, radius)


def render(class_id, seed, params=None):
    """Return ``(image, annotation, defect_mask)``."""
    if class_id not in range(NUM_CLASSES):
        raise InvalidArgument(f"unknown defect class_id {class_id!r}")
    p = params or GeneratorParams()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & _MASK64, class_id]))
    canvas = _background(rng, p)
    mask = _defect_mask(class_id, rng, p)
    if class_id == SPATTER:
        level = p.base_intensity + rng.uniform(*p.bright_contrast)
    else:
        level = p.base_intensity - rng.uniform(*p.dark_contrast)
    canvas[mask] = level
    canvas += rng.normal(0.0, p.noise_sigma, canvas.shape)
    image = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)

    ys, xs = np.nonzero(mask)
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    return image, Annotation(class_id, bbox, p.width, p.height), mask


def synth_image(class_id, seed, params=None):
    """Deterministic ``(GrayImage, Annotation)`` for one defect of ``class_id``."""
    image, ann, _ = render(class_id, seed, params)
    return image, ann


def make_sample_set(n_samples, seed, params=None):
    """Class-balanced set: sample ``i`` has class ``i % 4``."""
    if n_samples < 0:
        raise InvalidArgument("n_samples must be >= 0")
    samples = [synth_image(i % NUM_CLASSES, derive_seed(seed, i), params)
               for i in range(n_samples)]
    return SampleSet(samples, seed)
