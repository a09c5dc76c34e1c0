"""Log-polar pooling regions.

Regions tile a log-polar lattice around a fixation point ``z`` (which may
lie outside the image). The radial coordinate is log eccentricity with
spacing ``asinh(s/2)``, chosen so a region centered at eccentricity ``e``
has radial extent exactly ``s * e``; the angular coordinate is sliced into
windows of matching width. Both axes use cosine-squared profiles with 50%
overlap, so the window weights of all regions sum to exactly 1 at every
pixel.

A central disc below the eccentricity where ``s * e`` would drop under
``min_region_px`` is kept as a single region: statistics pooled over
sub-8-px slivers would be meaningless.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

_SUPPORT_EPS = 1e-9  # a window must reach this weight on the image to count


@dataclass(frozen=True)
class PoolingConfig:
    """Geometry of the pooling lattice for one image size."""

    width: int
    height: int
    scaling: float                      # region diameter / eccentricity
    fixation: tuple[float, float]       # (x, y) px; may be outside the image
    min_region_px: float = 16.0

    def __post_init__(self):
        if self.scaling <= 0:
            raise ValueError("scaling factor must be positive")
        if self.min_region_px < 8:
            raise ValueError("min_region_px must be >= 8")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def floor_eccentricity(self) -> float:
        """Eccentricity below which the diameter floor takes over."""
        return self.min_region_px / self.scaling

    @property
    def log_spacing(self) -> float:
        """Radial lattice spacing in log eccentricity."""
        return math.asinh(self.scaling / 2.0)

    @property
    def n_angular(self) -> int:
        return max(4, int(round(2.0 * math.pi / self.log_spacing)))

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "scaling": self.scaling, "fixation": list(self.fixation),
                "min_region_px": self.min_region_px}

    @classmethod
    def from_dict(cls, d: dict) -> "PoolingConfig":
        return cls(d["width"], d["height"], d["scaling"],
                   tuple(d["fixation"]), d.get("min_region_px", 16.0))


@dataclass
class PoolingRegion:
    """One pooling window: smooth weights over its bounding box."""

    index: tuple[int, int]              # (radial ring, angular slot); fovea = (0, -1)
    center: tuple[float, float]         # (x, y) px
    eccentricity: float                 # of the region center, px from fixation
    nominal_diameter: float
    bbox: tuple[int, int, int, int]     # (y0, y1, x0, x1), half-open
    window: np.ndarray = field(repr=False)

    def full_window(self, height: int, width: int) -> np.ndarray:
        out = np.zeros((height, width))
        y0, y1, x0, x1 = self.bbox
        out[y0:y1, x0:x1] = self.window
        return out


@dataclass
class PoolingLattice:
    """All regions covering one image, plus the degenerate-cover flag."""

    config: PoolingConfig
    regions: list[PoolingRegion]
    single_global: bool = False

    def __len__(self) -> int:
        return len(self.regions)

    def coverage(self) -> np.ndarray:
        """Summed window weight per pixel (1 everywhere by construction)."""
        total = np.zeros((self.config.height, self.config.width))
        for r in self.regions:
            y0, y1, x0, x1 = r.bbox
            total[y0:y1, x0:x1] += r.window
        return total

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config.to_dict(),
            "single_global": self.single_global,
            "regions": [{
                "index": list(r.index),
                "center": [r.center[0], r.center[1]],
                "eccentricity": r.eccentricity,
                "nominal_diameter": r.nominal_diameter,
                "bbox": list(r.bbox),
            } for r in self.regions],
        }, sort_keys=True)


def eccentricity_of(px: tuple[float, float], cfg: PoolingConfig) -> float:
    """Euclidean distance from a pixel position to the fixation point."""
    return math.hypot(px[0] - cfg.fixation[0], px[1] - cfg.fixation[1])


def _cos2_profile(u: np.ndarray) -> np.ndarray:
    """cos^2 bump on |u| < 1, zero outside; adjacent copies at integer
    offsets sum to 1."""
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.cos(0.5 * np.pi * u[inside]) ** 2
    return out


def _bbox_and_crop(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    return (y0, y1, x0, x1), mask[y0:y1, x0:x1]


def build_regions(cfg: PoolingConfig) -> PoolingLattice:
    """Construct the full pooling lattice for ``cfg``.

    Every pixel is covered by at least one region and summed weights equal 1
    up to float rounding. If the central disc alone covers the whole image
    (scaling so coarse that pooling is global) a single uniform region is
    returned with ``single_global`` set.
    """
    xs = np.arange(cfg.width, dtype=float)
    ys = np.arange(cfg.height, dtype=float)
    xv, yv = np.meshgrid(xs - cfg.fixation[0], ys - cfg.fixation[1])
    ecc = np.hypot(xv, yv)
    theta = np.arctan2(yv, xv)

    e0 = cfg.floor_eccentricity
    delta = cfg.log_spacing
    with np.errstate(divide="ignore"):
        tau = np.maximum(0.0, np.log(ecc / e0)) / delta
    tau[~np.isfinite(tau)] = 0.0        # ecc == 0 sits at the lattice origin

    if float(tau.max()) <= 0.0:
        window = np.ones((cfg.height, cfg.width))
        region = PoolingRegion(
            index=(0, -1), center=cfg.fixation,
            eccentricity=eccentricity_of(
                (cfg.width / 2.0, cfg.height / 2.0), cfg),
            nominal_diameter=max(cfg.min_region_px,
                                 cfg.scaling * float(ecc.max())),
            bbox=(0, cfg.height, 0, cfg.width), window=window)
        return PoolingLattice(cfg, [region], single_global=True)

    n_ang = cfg.n_angular
    dtheta = 2.0 * math.pi / n_ang
    n_max = int(math.floor(float(tau.max()))) + 1

    regions: list[PoolingRegion] = []

    fovea_profile = _cos2_profile(np.minimum(tau, 1.0))
    fovea_profile[tau >= 1.0] = 0.0
    if fovea_profile.max() > _SUPPORT_EPS:
        bbox, crop = _bbox_and_crop(fovea_profile)
        regions.append(PoolingRegion(
            index=(0, -1), center=cfg.fixation, eccentricity=e0,
            nominal_diameter=max(cfg.scaling * e0, cfg.min_region_px),
            bbox=bbox, window=crop))

    for n in range(1, n_max + 1):
        radial = _cos2_profile(tau - n)
        if radial.max() <= _SUPPORT_EPS:
            continue
        e_center = e0 * math.exp(n * delta)
        for m in range(n_ang):
            u = (theta - m * dtheta + math.pi) % (2.0 * math.pi) - math.pi
            mask = radial * _cos2_profile(u / dtheta)
            if mask.max() <= _SUPPORT_EPS:
                continue
            cx = cfg.fixation[0] + e_center * math.cos(m * dtheta)
            cy = cfg.fixation[1] + e_center * math.sin(m * dtheta)
            bbox, crop = _bbox_and_crop(mask)
            regions.append(PoolingRegion(
                index=(n, m), center=(cx, cy), eccentricity=e_center,
                nominal_diameter=max(cfg.scaling * e_center, cfg.min_region_px),
                bbox=bbox, window=crop))

    return PoolingLattice(cfg, regions)
