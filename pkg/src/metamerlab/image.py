"""Float image containers and PNG import/export.

Everything downstream (synthesis, pooling, quality metrics) operates on
``ImageBuffer``: a row-major float array of intensities nominally in [0, 1].
Values are allowed to leave that range while an optimizer is running; they
are clamped only when an image is exported to disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class ImageDimensionError(ValueError):
    """Raised when an image's shape violates an operation's requirements."""


@dataclass
class ImageBuffer:
    """A 2-D intensity grid with 1 (grayscale) or 3 (RGB) channels.

    ``data`` has shape (height, width) for single-channel images and
    (height, width, 3) otherwise. Entries are float64 and must be finite.
    """

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] in (1, 3):
            if arr.shape[2] == 1:
                arr = arr[:, :, 0]
        else:
            raise ImageDimensionError(f"expected HxW or HxWx3 data, got shape {arr.shape}")
        if arr.size == 0:
            raise ImageDimensionError("empty image")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.data.copy())

    def clamped(self) -> "ImageBuffer":
        return ImageBuffer(np.clip(self.data, 0.0, 1.0))

    @classmethod
    def constant(cls, height: int, width: int, value: float = 0.0) -> "ImageBuffer":
        return cls(np.full((height, width), float(value)))


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """Collapse RGB to a single luma channel (0.299/0.587/0.114 weights).

    Single-channel input is returned unchanged (same object).
    """
    if img.channels == 1:
        return img
    r, g, b = GRAY_WEIGHTS
    gray = r * img.data[:, :, 0] + g * img.data[:, :, 1] + b * img.data[:, :, 2]
    return ImageBuffer(gray)


def load_png(path: str | Path) -> ImageBuffer:
    """Read an 8- or 16-bit PNG, mapping intensities linearly onto [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif im.mode in ("LA", "RGBA", "P"):
            conv = im.convert("RGB")
            arr = np.asarray(conv, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def save_png(img: ImageBuffer, path: str | Path, bit_depth: int = 8) -> None:
    """Write a PNG, clamping intensities to [0, 1] at export time only."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    data = np.clip(img.data, 0.0, 1.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if bit_depth == 8:
        quant = np.round(data * 255.0).astype(np.uint8)
        PILImage.fromarray(quant).save(path)
    else:
        if data.ndim == 3:
            # Pillow has no 16-bit RGB mode; collapse to luma for 16-bit export.
            data = to_grayscale(ImageBuffer(data)).data
        quant = np.round(data * 65535.0).astype(np.uint16)
        im = PILImage.new("I;16", (quant.shape[1], quant.shape[0]))
        im.frombytes(quant.tobytes())
        im.save(path)


def center_crop_pow2(img: ImageBuffer) -> ImageBuffer:
    """Center-crop to the largest power-of-two square that fits."""
    side = min(img.height, img.width)
    pow2 = 1 << (side.bit_length() - 1)
    top = (img.height - pow2) // 2
    left = (img.width - pow2) // 2
    return ImageBuffer(img.data[top:top + pow2, left:left + pow2])


def is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0
