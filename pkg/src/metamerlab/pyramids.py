"""Multiscale image decompositions.

Two decompositions live here:

* a Gaussian (and implicitly Laplacian-style) pyramid built by 5-tap binomial
  blur and 2x downsampling, used for coarse-structure comparison and the
  simulated fovea/periphery quality reports;
* an oriented frequency-domain pyramid with raised-cosine radial windows and
  cos^(K-1) angular windows, the substrate for texture summary statistics.

The oriented pyramid keeps every subband at full resolution and uses
single-lobe (analytic) angular masks, so oriented coefficients are complex
and their magnitudes vary smoothly with the input - which is what makes the
statistic gradients in :mod:`metamerlab.stats` exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .image import ImageBuffer, ImageDimensionError, center_crop_pow2, is_pow2, to_grayscale

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


# ---------------------------------------------------------------------------
# Gaussian pyramid
# ---------------------------------------------------------------------------

@dataclass
class GaussianPyramid:
    """Ordered list of levels; level 0 is the source image."""

    levels: list[ImageBuffer]

    def __len__(self) -> int:
        return len(self.levels)

    def level(self, k: int) -> ImageBuffer:
        return self.levels[k]


def _blur_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    padded = np.pad(arr, [(2, 2) if a == axis else (0, 0) for a in range(arr.ndim)],
                    mode="reflect")
    out = np.zeros_like(arr)
    sl = [slice(None)] * arr.ndim
    n = arr.shape[axis]
    for i, w in enumerate(BINOMIAL5):
        sl[axis] = slice(i, i + n)
        out += w * padded[tuple(sl)]
    return out


def blur5(arr: np.ndarray) -> np.ndarray:
    """Separable 5-tap binomial blur with reflective boundary."""
    return _blur_axis(_blur_axis(arr, 0), 1)


def reduce_once(arr: np.ndarray) -> np.ndarray:
    """Blur then keep every second sample per axis (ceil(n/2) sizes).

    Edge folding under reflective padding slightly rebalances pixel weights,
    which would let the level mean drift; re-center so all levels share the
    source mean.
    """
    blurred = blur5(arr)
    sub = blurred[::2, ::2] if arr.ndim == 2 else blurred[::2, ::2, :]
    return sub + (arr.mean() - sub.mean())


def gaussian_pyramid(img: ImageBuffer, levels: int) -> GaussianPyramid:
    """Build a ``levels``-deep Gaussian pyramid (level 0 = input).

    Requires min(width, height) / 2**(levels-1) >= 4 so the top level keeps
    enough support for the blur kernel.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(img.width, img.height) / 2 ** (levels - 1) < 4:
        raise ImageDimensionError(
            f"{img.width}x{img.height} image too small for {levels} pyramid levels")
    out = [img.copy()]
    cur = img.data
    for _ in range(levels - 1):
        cur = reduce_once(cur)
        out.append(ImageBuffer(cur))
    return GaussianPyramid(out)


def gaussian_level(img: ImageBuffer, k: int) -> ImageBuffer:
    """Convenience: level ``k`` of the Gaussian pyramid of ``img``."""
    return gaussian_pyramid(img, k + 1).levels[k]


# ---------------------------------------------------------------------------
# Oriented frequency-domain pyramid
# ---------------------------------------------------------------------------

def _polar_grid(h: int, w: int):
    fy = (np.arange(h) - h // 2) / (h / 2.0)
    fx = (np.arange(w) - w // 2) / (w / 2.0)
    xv, yv = np.meshgrid(fx, fy)
    radius = np.sqrt(xv ** 2 + yv ** 2)
    radius[h // 2, w // 2] = radius[h // 2, w // 2 - 1] * 1e-8  # keep log finite at DC
    angle = np.arctan2(yv, xv)
    return angle, radius


def _radial_masks(radius: np.ndarray, cutoff: float):
    """Raised-cosine high/low split at ``cutoff`` (one-octave transition)."""
    log_rad = np.log2(radius) - np.log2(cutoff)
    hi = np.cos(np.clip(log_rad, -1.0, 0.0) * np.pi / 2.0)
    hi = np.abs(hi)
    lo = np.sqrt(np.maximum(0.0, 1.0 - hi ** 2))
    return lo, hi


class FilterBank:
    """Frequency-domain filters for one (height, width, scales, orientations).

    All masks are real arrays laid out fftshift-style and applied to the
    shifted spectrum. ``band[s][o]`` masks are single-lobe, so filtering a
    real image yields complex (analytic) band coefficients. The set is a
    tight frame: highpass^2 + lowpass^2 + sum over both lobes of band^2 = 1
    at every frequency, which gives exact linear reconstruction.
    """

    def __init__(self, height: int, width: int, scales: int, orientations: int):
        self.height, self.width = height, width
        self.scales, self.orientations = scales, orientations
        angle, radius = _polar_grid(height, width)

        order = orientations - 1
        const = (2.0 ** (2 * order)) * factorial(order) ** 2 / (
            orientations * factorial(2 * order))

        lo_prev, hi0 = _radial_masks(radius, 1.0)
        self.highpass = hi0
        self.band: list[list[np.ndarray]] = []
        self.low_cum: list[np.ndarray] = []
        for s in range(1, scales + 1):
            lo, hi = _radial_masks(radius, 2.0 ** (-s))
            rad_mask = hi * lo_prev
            row = []
            for b in range(orientations):
                theta = np.mod(np.pi + angle - np.pi * b / orientations,
                               2 * np.pi) - np.pi
                ang = 2.0 * np.sqrt(const) * np.power(np.abs(np.cos(theta)), order) \
                    * (np.abs(theta) < np.pi / 2)
                row.append(rad_mask * ang / 2.0)
            self.band.append(row)
            self.low_cum.append(lo)
            lo_prev = lo
        self.lowpass = lo_prev

    # -- forward / inverse ---------------------------------------------------

    def decompose(self, data: np.ndarray) -> "SteerablePyramid":
        u = np.fft.fftshift(np.fft.fft2(data))
        bands = [[np.fft.ifft2(np.fft.ifftshift(u * f)) for f in row]
                 for row in self.band]
        low_scales = [np.fft.ifft2(np.fft.ifftshift(u * f)).real
                      for f in self.low_cum]
        high = np.fft.ifft2(np.fft.ifftshift(u * self.highpass)).real
        return SteerablePyramid(scales=self.scales, orientations=self.orientations,
                                bands=bands, highpass=high,
                                lowpass=low_scales[-1], low_scales=low_scales,
                                bank=self)

    def reconstruct(self, pyr: "SteerablePyramid") -> np.ndarray:
        shape = (self.height, self.width)
        if pyr.highpass.shape != shape or pyr.lowpass.shape != shape:
            raise ValueError("pyramid residual dimensions do not match the filter bank")
        acc = np.fft.fftshift(np.fft.fft2(pyr.highpass)) * self.highpass
        acc = acc + np.fft.fftshift(np.fft.fft2(pyr.lowpass)) * self.lowpass
        for row_b, row_f in zip(pyr.bands, self.band):
            for band, f in zip(row_b, row_f):
                if band.shape != shape:
                    raise ValueError("band dimensions do not match the filter bank")
                acc = acc + 2.0 * np.fft.fftshift(np.fft.fft2(band)) * f
        return np.fft.ifft2(np.fft.ifftshift(acc)).real

    # -- adjoints used by statistic gradients ---------------------------------

    def adjoint_band(self, g: np.ndarray, s: int, o: int) -> np.ndarray:
        """Pull a (complex) gradient on band (s, o) back to image space."""
        return np.fft.ifft2(np.fft.ifftshift(
            np.fft.fftshift(np.fft.fft2(g)) * self.band[s][o])).real

    def adjoint_low(self, g: np.ndarray, s: int) -> np.ndarray:
        """Pull a gradient on the scale-``s`` cumulative lowpass back to image space."""
        return np.fft.ifft2(np.fft.ifftshift(
            np.fft.fftshift(np.fft.fft2(g)) * self.low_cum[s])).real


_BANK_CACHE: dict[tuple, FilterBank] = {}


def get_filter_bank(height: int, width: int, scales: int, orientations: int) -> FilterBank:
    key = (height, width, scales, orientations)
    bank = _BANK_CACHE.get(key)
    if bank is None:
        bank = FilterBank(height, width, scales, orientations)
        _BANK_CACHE[key] = bank
    return bank


@dataclass
class SteerablePyramid:
    """Oriented subbands plus residuals, all at source resolution.

    ``bands[s][o]`` are complex analytic coefficients; ``low_scales[s]`` is
    the real cumulative lowpass remaining after scale ``s``.
    """

    scales: int
    orientations: int
    bands: list[list[np.ndarray]]
    highpass: np.ndarray
    lowpass: np.ndarray
    low_scales: list[np.ndarray]
    bank: FilterBank = field(repr=False)
    cache: dict = field(default_factory=dict, repr=False)

    def band_energy(self) -> float:
        """Total energy, counting both lobes of each oriented band."""
        e = float(np.sum(self.highpass ** 2) + np.sum(self.lowpass ** 2))
        for row in self.bands:
            for b in row:
                e += 2.0 * float(np.sum(np.abs(b) ** 2))
        return e


def min_steerable_size(scales: int) -> int:
    """Smallest square side supporting ``scales`` oriented scales."""
    return 2 ** (scales + 1)


def steerable_decompose(img: ImageBuffer, scales: int = 4, orientations: int = 4,
                        on_nonsquare: str = "crop") -> SteerablePyramid:
    """Decompose into ``scales`` x ``orientations`` oriented subbands.

    The input must be a square power-of-two image (after grayscale
    conversion) of side >= 2**(scales+1); 32 for the default 4-scale
    configuration. Non-conforming inputs are center-cropped to the largest
    power-of-two square when ``on_nonsquare == "crop"`` and rejected when
    ``on_nonsquare == "reject"``.
    """
    if scales < 1 or orientations < 1:
        raise ValueError("scales and orientations must be >= 1")
    gray = to_grayscale(img)
    if gray.height != gray.width or not is_pow2(gray.width):
        if on_nonsquare == "reject":
            raise ImageDimensionError(
                f"{gray.width}x{gray.height} is not a power-of-two square")
        gray = center_crop_pow2(gray)
    if gray.width < min_steerable_size(scales):
        raise ImageDimensionError(
            f"side {gray.width} below minimum {min_steerable_size(scales)} "
            f"for {scales} scales")
    bank = get_filter_bank(gray.height, gray.width, scales, orientations)
    return bank.decompose(gray.data)


def steerable_reconstruct(pyr: SteerablePyramid) -> ImageBuffer:
    """Invert :func:`steerable_decompose` (exact up to float rounding)."""
    return ImageBuffer(pyr.bank.reconstruct(pyr))
