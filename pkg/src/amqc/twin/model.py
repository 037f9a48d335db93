"""Reduced-order process model: energy density band and defect probabilities."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from amqc import NUM_CLASSES
from amqc.datagen.synth import CRACK, HOLE, PINHOLE, SPATTER
from amqc.errors import InvalidArgument

POWER_BOUNDS = (150.0, 350.0)  # W
SPEED_BOUNDS = (500.0, 1500.0)  # mm/s
FEED_BOUNDS = (0.8, 1.2)
LAYER_THICKNESS_MM = 0.05
HATCH_SPACING_MM = 0.1

BAND = (35.0, 45.0)  # J/mm^3, lowest defect rate
BASE_RATE = 0.02
DEVIATION_GAIN = 1.5
FEED_GAIN = 0.3
MAX_RATE = 0.95

HOT_SPLIT = {SPATTER: 0.6, HOLE: 0.4}
COLD_SPLIT = {CRACK: 0.6, PINHOLE: 0.4}


def _clip(v, bounds):
    return float(min(max(v, bounds[0]), bounds[1]))


@dataclass(frozen=True)
class ProcessState:
    laser_power_w: float = 200.0
    scan_speed_mm_s: float = 1000.0
    feed_rate_rel: float = 1.0
    layer_thickness_mm: float = LAYER_THICKNESS_MM
    hatch_spacing_mm: float = HATCH_SPACING_MM

    def __post_init__(self):
        for name in ("laser_power_w", "scan_speed_mm_s", "feed_rate_rel",
                     "layer_thickness_mm", "hatch_spacing_mm"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name, bounds in (("laser_power_w", POWER_BOUNDS), ("scan_speed_mm_s", SPEED_BOUNDS),
                             ("feed_rate_rel", FEED_BOUNDS)):
            v = getattr(self, name)
            if not np.isfinite(v) or not bounds[0] <= v <= bounds[1]:
                raise InvalidArgument(f"{name}={v} outside [{bounds[0]:g}, {bounds[1]:g}]")
        if self.layer_thickness_mm != LAYER_THICKNESS_MM or self.hatch_spacing_mm != HATCH_SPACING_MM:
            raise InvalidArgument(f"layer thickness and hatch spacing are fixed at "
                                  f"{LAYER_THICKNESS_MM} and {HATCH_SPACING_MM} mm")

    def shifted(self, d_power=0.0, d_speed=0.0, d_feed=0.0):
        """New state moved by the deltas and clamped to the bounds."""
        return replace(self,
                       laser_power_w=_clip(self.laser_power_w + d_power, POWER_BOUNDS),
                       scan_speed_mm_s=_clip(self.scan_speed_mm_s + d_speed, SPEED_BOUNDS),
                       feed_rate_rel=_clip(self.feed_rate_rel + d_feed, FEED_BOUNDS))

    def as_dict(self):
        return {"laser_power_w": self.laser_power_w, "scan_speed_mm_s": self.scan_speed_mm_s,
                "feed_rate_rel": self.feed_rate_rel,
                "layer_thickness_mm": self.layer_thickness_mm,
                "hatch_spacing_mm": self.hatch_spacing_mm}


def energy_density(state):
    """Volumetric energy density E = P / (v h t) in J/mm^3."""
    return state.laser_power_w / (state.scan_speed_mm_s * state.hatch_spacing_mm
                                  * state.layer_thickness_mm)


def band_deviation(e):
    """Relative distance of ``e`` outside the band (0 inside)."""
    lo, hi = BAND
    return max(0.0, (lo - e) / lo, (e - hi) / hi)


def defect_probability(state):
    """``(p, p_none)``: per-class probabilities (crack, pinhole, hole, spatter) and no-defect."""
    e = energy_density(state)
    total = min(MAX_RATE, BASE_RATE + DEVIATION_GAIN * band_deviation(e)
                + FEED_GAIN * abs(state.feed_rate_rel - 1.0))
    if e > BAND[1]:
        split = HOT_SPLIT
    elif e < BAND[0]:
        split = COLD_SPLIT
    else:
        split = dict.fromkeys(range(NUM_CLASSES), 1.0 / NUM_CLASSES)
    p = np.zeros(NUM_CLASSES)
    for c, share in split.items():
        p[c] = total * share
    return p, 1.0 - float(p.sum())


def sample_layer_outcome(state, sites, seed):
    """Defect counts by class for ``sites`` independent sites; deterministic in ``seed``."""
    if int(sites) != sites or sites < 1:
        raise InvalidArgument(f"sites must be a positive integer, got {sites!r}")
    p, p_none = defect_probability(state)
    rng = np.random.default_rng(seed)
    draw = rng.multinomial(int(sites), np.append(p, max(p_none, 0.0)))
    return draw[:NUM_CLASSES].astype(np.int64)
