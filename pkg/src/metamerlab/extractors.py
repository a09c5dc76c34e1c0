"""Feature extractors for image inversion.

An extractor exposes ``evaluate(img) -> feature vector`` and
``gradient(img, target_features) -> pixel gradient`` of the inversion loss
``0.5 * ||g(x) - t||^2``. Three extractors ship:

* ``GlobalStatExtractor`` - the full-image texture statistic vector, scaled
  by sqrt of the group weights so the feature-space L2 distance equals the
  statistic distance;
* ``PooledStatExtractor`` - per-region weighted statistics over a pooling
  lattice, concatenated (the texform feature map);
* ``ConvFeatureExtractor`` - a small fixed-seed convolutional network
  standing in for learned-network feature inversion at desk scale.

All are deterministic and safe to share read-only across workers.
"""

from __future__ import annotations

import numpy as np

from .image import ImageBuffer
from .pooling import PoolingLattice
from .pyramids import get_filter_bank
from .stats import StatConfig, StatWork, _check_input


class IdentityExtractor:
    """Features are the pixels themselves; inversion reproduces the target."""

    name = "identity"

    def evaluate(self, img: ImageBuffer) -> np.ndarray:
        return img.data.ravel().copy()

    def gradient(self, img: ImageBuffer, target: np.ndarray) -> np.ndarray:
        return img.data - target.reshape(img.data.shape)


class GlobalStatExtractor:
    """Whole-image texture statistics as the feature vector.

    The most recent forward pass is memoized on the exact input array, so an
    optimizer evaluating the loss and then asking for the gradient at the
    same iterate pays for one decomposition. (The memo makes instances
    stateful; share across processes, not threads.)
    """

    def __init__(self, cfg: StatConfig):
        self.cfg = cfg
        self.name = f"stats-global-{cfg.scales}x{cfg.orientations}m{cfg.autocorr_window}"
        self._sqrt_w = np.sqrt(cfg.weight_vector())
        self._memo: tuple | None = None

    def _work(self, img: ImageBuffer) -> StatWork:
        data = _check_input(img, self.cfg)
        if self._memo is not None and self._memo[0] is data:
            return self._memo[1]
        work = StatWork(data, self.cfg)
        self._memo = (data, work)
        return work

    def evaluate(self, img: ImageBuffer) -> np.ndarray:
        return self._sqrt_w * self._work(img).stat_vector().values()

    def gradient(self, img: ImageBuffer, target: np.ndarray) -> np.ndarray:
        work = self._work(img)
        feat = self._sqrt_w * work.stat_vector().values()
        return work.gradient(self._sqrt_w * (feat - target))


class PooledStatExtractor:
    """Region-pooled texture statistics over a log-polar lattice.

    With a single all-ones region this reduces exactly to
    :class:`GlobalStatExtractor` (same code path, same numbers).
    """

    def __init__(self, lattice: PoolingLattice, cfg: StatConfig):
        self.cfg = cfg
        self.lattice = lattice
        self.name = f"stats-pooled-{len(lattice.regions)}r"
        self._sqrt_w = np.sqrt(cfg.weight_vector())
        shape = (lattice.config.height, lattice.config.width)
        self._windows = [r.full_window(*shape) for r in lattice.regions]
        self._memo: tuple | None = None

    def _works(self, img: ImageBuffer) -> list[StatWork]:
        data = _check_input(img, self.cfg)
        if self._memo is not None and self._memo[0] is data:
            return self._memo[1]
        bank = get_filter_bank(data.shape[0], data.shape[1],
                               self.cfg.scales, self.cfg.orientations)
        pyr = bank.decompose(data)
        works = [StatWork(data, self.cfg, window=w, pyr=pyr) for w in self._windows]
        self._memo = (data, works)
        return works

    def evaluate(self, img: ImageBuffer) -> np.ndarray:
        return np.concatenate([self._sqrt_w * w.stat_vector().values()
                               for w in self._works(img)])

    def gradient(self, img: ImageBuffer, target: np.ndarray) -> np.ndarray:
        works = self._works(img)
        m = self.cfg.total_count()
        bank = works[0].bank
        grad = np.zeros_like(img.data, dtype=float)
        glow_acc = [np.zeros_like(img.data) for _ in range(self.cfg.scales)]
        gband_acc = [[np.zeros_like(b) for b in row] for row in works[0].pyr.bands]
        for i, work in enumerate(works):
            feat = self._sqrt_w * work.stat_vector().values()
            err = self._sqrt_w * (feat - target[i * m:(i + 1) * m])
            gx, glow, gband = work.gradient_parts(err)
            grad += gx
            for s in range(self.cfg.scales):
                glow_acc[s] += glow[s]
                for o in range(self.cfg.orientations):
                    gband_acc[s][o] += gband[s][o]
        # same accumulation order as the single-window path, so one uniform
        # region reproduces the global gradient bit for bit
        for s in range(self.cfg.scales):
            if np.any(glow_acc[s]):
                grad += bank.adjoint_low(glow_acc[s], s)
        for s in range(self.cfg.scales):
            for o in range(self.cfg.orientations):
                if np.any(gband_acc[s][o]):
                    grad += bank.adjoint_band(gband_acc[s][o], s, o)
        return grad


def _conv_stride2(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution with zero padding 1 and stride 2 over (C, H, W)."""
    c, h, ww = x.shape
    h2, w2 = (h + 1) // 2, (ww + 1) // 2
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.tile(b[:, None, None], (1, h2, w2))
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, ky:ky + 2 * h2 - 1:2, kx:kx + 2 * w2 - 1:2]
            out += np.einsum("oc,chw->ohw", w[:, :, ky, kx], patch)
    return out


def _conv_stride2_adjoint(d: np.ndarray, w: np.ndarray, x_shape) -> np.ndarray:
    """Adjoint of :func:`_conv_stride2` with respect to its input."""
    c, h, ww = x_shape
    _, h2, w2 = d.shape
    gxp = np.zeros((c, h + 2, ww + 2))
    for ky in range(3):
        for kx in range(3):
            gxp[:, ky:ky + 2 * h2 - 1:2, kx:kx + 2 * w2 - 1:2] += \
                np.einsum("oc,ohw->chw", w[:, :, ky, kx], d)
    return gxp[:, 1:-1, 1:-1]


class ConvFeatureExtractor:
    """Fixed random 3-layer convolutional feature map with exact gradients.

    Architecture: the input (centered around mid-gray) passes through three
    3x3 stride-2 convolutions with tanh nonlinearities and channel widths
    1 -> 4 -> 8 -> 8; the final activation map, flattened, is the feature
    vector. Weights are drawn once from a seeded generator and never change,
    so the extractor is deterministic and shareable.
    """

    CHANNELS = (1, 4, 8, 8)

    def __init__(self, seed: int = 1234):
        self.seed = seed
        self.name = f"conv3-seed{seed}"
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for cin, cout in zip(self.CHANNELS[:-1], self.CHANNELS[1:]):
            fan_in = cin * 9
            self.weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in),
                                           size=(cout, cin, 3, 3)))
            self.biases.append(np.zeros(cout))

    def _forward(self, data: np.ndarray):
        a = (data - 0.5)[None, :, :]
        acts = [a]
        for w, b in zip(self.weights, self.biases):
            a = np.tanh(_conv_stride2(a, w, b))
            acts.append(a)
        return acts

    def evaluate(self, img: ImageBuffer) -> np.ndarray:
        if img.channels != 1:
            raise ValueError("extractor expects a grayscale image")
        return self._forward(img.data)[-1].ravel().copy()

    def gradient(self, img: ImageBuffer, target: np.ndarray) -> np.ndarray:
        acts = self._forward(img.data)
        d = (acts[-1].ravel() - target).reshape(acts[-1].shape)
        for i in range(len(self.weights) - 1, -1, -1):
            d = d * (1.0 - acts[i + 1] ** 2)       # through tanh
            d = _conv_stride2_adjoint(d, self.weights[i], acts[i].shape)
        return d[0]
