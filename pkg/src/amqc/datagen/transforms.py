"""Preprocessing and single-step augmentations for gray images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from amqc import IMAGE_H, IMAGE_W
from amqc.datagen.synth import Annotation, check_image
from amqc.errors import InvalidArgument

PERMUTATIONS = ("flip_h", "flip_v", "rot90", "rot180", "rot270")


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def box_blur3(image):
    """3x3 mean filter with edge replication."""
    a = np.pad(np.asarray(image, dtype=np.float64), 1, mode="edge")
    h, w = a.shape[0] - 2, a.shape[1] - 2
    out = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            out += a[dy:dy + h, dx:dx + w]
    return out / 9.0


def contrast_stretch(a):
    """Min-max stretch to [0, 255]; a constant image is returned unchanged."""
    lo, hi = a.min(), a.max()
    if hi == lo:
        return a.astype(np.float64, copy=True)
    return (a - lo) / (hi - lo) * 255.0


def _axis_coords(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(a, out_h, out_w):
    """Bilinear resize with half-pixel centres (border samples clamp)."""
    y0, y1, wy = _axis_coords(a.shape[0], out_h)
    x0, x1, wx = _axis_coords(a.shape[1], out_w)
    wy = wy[:, None]
    top = a[y0][:, x0] * (1 - wx) + a[y0][:, x1] * wx
    bottom = a[y1][:, x0] * (1 - wx) + a[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def preprocess(image, target_h=IMAGE_H, target_w=IMAGE_W, dtype=np.float32):
    """blur -> contrast stretch -> bilinear resize -> scale to [0, 1].

    Returns an array of shape ``(1, target_h, target_w)``.
    """
    image = check_image(image)
    if target_h < 8 or target_w < 8:
        raise InvalidArgument(f"target size must be at least 8x8, got {target_h}x{target_w}")
    a = contrast_stretch(box_blur3(image))
    a = resize_bilinear(a, target_h, target_w)
    a = np.clip(a / 255.0, 0.0, 1.0)
    return a.astype(dtype)[None, :, :]


def preprocess_batch(images, target_h=IMAGE_H, target_w=IMAGE_W, dtype=np.float32):
    out = np.empty((len(images), 1, target_h, target_w), dtype=dtype)
    for i, img in enumerate(images):
        out[i] = preprocess(img, target_h, target_w, dtype)
    return out


@dataclass(frozen=True)
class Augmentation:
    kind: str
    amount: float = 0

    def __post_init__(self):
        if self.kind in PERMUTATIONS:
            return
        if self.kind == "brightness":
            if self.amount != int(self.amount) or abs(self.amount) > 64:
                raise InvalidArgument(
                    f"brightness delta must be an integer in [-64, 64], got {self.amount}")
        elif self.kind == "gauss_noise":
            if not 0 < self.amount <= 32:
                raise InvalidArgument(f"noise sigma must be in (0, 32], got {self.amount}")
        else:
            raise InvalidArgument(f"unknown augmentation {self.kind!r}")

    @classmethod
    def parse(cls, text):
        """``"rot90"``, ``"brightness:-12"``, ``"gauss_noise:4.5"``."""
        kind, _, arg = text.partition(":")
        if not arg:
            return cls(kind)
        try:
            return cls(kind, float(arg))
        except ValueError:
            raise InvalidArgument(f"bad augmentation argument in {text!r}") from None

    @property
    def is_permutation(self):
        return self.kind in PERMUTATIONS


def augment(image, aug, seed=0):
    """Apply one augmentation. Permutations are exact; others saturate at 0/255."""
    image = check_image(image)
    if isinstance(aug, str):
        aug = Augmentation.parse(aug)
    if aug.kind == "flip_h":
        return image[:, ::-1].copy()
    if aug.kind == "flip_v":
        return image[::-1, :].copy()
    if aug.kind.startswith("rot"):
        # counter-clockwise quarter turns
        return np.ascontiguousarray(np.rot90(image, int(aug.kind[3:]) // 90))
    if aug.kind == "brightness":
        return np.clip(image.astype(np.int32) + int(aug.amount), 0, 255).astype(np.uint8)
    rng = np.random.default_rng(seed)
    noisy = image.astype(np.float64) + rng.normal(0.0, aug.amount, image.shape)
    return np.clip(round_half_away(noisy), 0, 255).astype(np.uint8)


def transform_annotation(ann, aug):
    """Map a bbox through a permutation augmentation (others leave it as is)."""
    if isinstance(aug, str):
        aug = Augmentation.parse(aug)
    if not aug.is_permutation:
        return ann
    w, h = ann.image_width, ann.image_height
    xmin, ymin, xmax, ymax = ann.bbox
    if aug.kind == "flip_h":
        return Annotation(ann.class_id, (w - xmax, ymin, w - xmin, ymax), w, h)
    if aug.kind == "flip_v":
        return Annotation(ann.class_id, (xmin, h - ymax, xmax, h - ymin), w, h)
    for _ in range(int(aug.kind[3:]) // 90):
        # one ccw turn: pixel (y, x) -> (w - 1 - x, y); new image is w rows by h columns
        xmin, ymin, xmax, ymax = ymin, w - xmax, ymax, w - xmin
        w, h = h, w
    return Annotation(ann.class_id, (xmin, ymin, xmax, ymax), w, h)


def augment_sample(image, ann, aug, seed=0):
    return augment(image, aug, seed), transform_annotation(ann, aug)
