"""Analysis-by-synthesis: gradient-based image inversion.

The engine minimizes ``0.5 * ||g(x) - g(target)||^2`` for a feature
extractor ``g`` starting from a seeded noise pre-image, using plain gradient
descent with a backtracking line search (monotone loss trace at every
accepted step). Texform synthesis adds a coarse-structure prior: an L2 match
of a deep Gaussian-pyramid level, which pins global layout while the pooled
statistics scramble local detail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import ImageBuffer, to_grayscale
from .pooling import PoolingConfig, PoolingLattice, build_regions
from .pyramids import BINOMIAL5, gaussian_pyramid
from .stats import StatConfig
from .extractors import PooledStatExtractor


@dataclass
class SynthesisConfig:
    seed: int = 0
    max_steps: int = 4000
    step_size: float = 1.0          # initial line-search step
    min_step: float = 1e-12
    tol: float = 1e-3               # stop when loss <= tol * initial loss
    lambda_structural: float = 1.0
    structural_level: int = 3
    optimizer: str = "linesearch"   # "linesearch" | "adam"
    shrink: float = 0.5
    grow: float = 1.3
    adam_lr: float = 0.05

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.lambda_structural < 0:
            raise ValueError("structural weight must be >= 0")
        if self.optimizer not in ("linesearch", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "seed", "max_steps", "step_size", "min_step", "tol",
            "lambda_structural", "structural_level", "optimizer",
            "shrink", "grow", "adam_lr")}


@dataclass
class SynthesisResult:
    image: ImageBuffer
    loss_trace: list[float]
    converged: bool
    final_feature_distance: float
    pixel_mse_to_target: float
    seed: int

    @property
    def steps(self) -> int:
        return len(self.loss_trace) - 1

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "converged": self.converged,
            "steps": self.steps,
            "final_feature_distance": self.final_feature_distance,
            "pixel_mse_to_target": self.pixel_mse_to_target,
            "loss_trace": [float(v) for v in self.loss_trace],
        }


def initial_noise(shape: tuple[int, int], seed: int) -> np.ndarray:
    """Seeded uniform noise in [0.4, 0.6]: a low-amplitude mid-gray start."""
    return np.random.default_rng(seed).uniform(0.4, 0.6, size=shape)


def _descend(value, grad, x0: np.ndarray, cfg: SynthesisConfig):
    """Minimize ``value`` from ``x0``; returns (best x, trace, converged)."""
    x = x0
    f = value(x)
    trace = [f]
    f0 = f
    if f0 <= 0.0:
        return x, trace, True
    if cfg.optimizer == "adam":
        m = np.zeros_like(x)
        v = np.zeros_like(x)
        best_x, best_f = x, f
        for step in range(1, cfg.max_steps + 1):
            if f <= cfg.tol * f0:
                break
            g = grad(x)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9 ** step)
            vh = v / (1 - 0.999 ** step)
            x = x - cfg.adam_lr * mh / (np.sqrt(vh) + 1e-8)
            if not np.all(np.isfinite(x)):
                break
            f = value(x)
            trace.append(f)
            if f < best_f:
                best_x, best_f = x, f
        return best_x, trace, best_f <= cfg.tol * f0

    alpha = cfg.step_size
    for _ in range(cfg.max_steps):
        if f <= cfg.tol * f0:
            break
        g = grad(x)
        if not np.any(g):
            break
        accepted = False
        while alpha >= cfg.min_step:
            x_new = x - alpha * g
            f_new = value(x_new) if np.all(np.isfinite(x_new)) else np.inf
            if f_new < f:
                accepted = True
                break
            alpha *= cfg.shrink
        if not accepted:
            break                     # no descent at the minimum step: give up
        x, f = x_new, f_new
        trace.append(f)
        alpha *= cfg.grow
    return x, trace, f <= cfg.tol * f0


def invert_features(g, target: ImageBuffer, cfg: SynthesisConfig) -> SynthesisResult:
    """Synthesize an image whose ``g``-features match the target's.

    Starts from seeded noise, so the output differs from the target in pixel
    space whenever ``g`` discards information. Divergence (no descent step
    possible) returns the best iterate with ``converged=False``.
    """
    gray = to_grayscale(target)
    t = g.evaluate(gray)

    def value(x):
        d = g.evaluate(ImageBuffer(x)) - t
        return 0.5 * float(d @ d)

    def gradf(x):
        return g.gradient(ImageBuffer(x), t)

    x0 = initial_noise(gray.data.shape, cfg.seed)
    x, trace, converged = _descend(value, gradf, x0, cfg)
    final = ImageBuffer(x)
    return SynthesisResult(
        image=final, loss_trace=trace, converged=converged,
        final_feature_distance=float(np.sqrt(2.0 * trace[-1])),
        pixel_mse_to_target=float(np.mean((x - gray.data) ** 2)),
        seed=cfg.seed)


# ---------------------------------------------------------------------------
# Structural prior: deep Gaussian-pyramid level match
# ---------------------------------------------------------------------------

def _reduce_adjoint_axis(y: np.ndarray, axis: int, n_in: int) -> np.ndarray:
    """Adjoint of reflect-pad + 5-tap blur + stride-2 sampling, one axis."""
    shape = list(y.shape)
    shape[axis] = n_in + 4
    acc = np.zeros(shape)
    sl = [slice(None)] * y.ndim
    n_out = y.shape[axis]
    for i, w in enumerate(BINOMIAL5):
        sl[axis] = slice(i, i + 2 * n_out - 1, 2)
        acc[tuple(sl)] += w * y
    # fold the reflect-padded borders back onto their sources
    def take(idx):
        s = [slice(None)] * y.ndim
        s[axis] = idx
        return tuple(s)
    out = acc[take(slice(2, 2 + n_in))].copy()
    out[take(2)] += acc[take(0)]
    out[take(1)] += acc[take(1)]
    out[take(n_in - 2)] += acc[take(n_in + 2)]
    out[take(n_in - 3)] += acc[take(n_in + 3)]
    return out


def structural_operator(shape: tuple[int, int], level: int):
    """Linear map to Gaussian-pyramid level ``level`` and its adjoint.

    The reduce step re-centers each level to the source mean; the adjoint of
    ``x -> sub(blur(x)) + (mean(x) - mean(sub(blur(x))))`` applied to ``y``
    is ``adj(y - mean(y)) + mean(y) * N_out / N_in``.
    """
    shapes = [shape]
    for _ in range(level):
        shapes.append(((shapes[-1][0] + 1) // 2, (shapes[-1][1] + 1) // 2))

    def forward(x: np.ndarray) -> np.ndarray:
        img = ImageBuffer(x) if not isinstance(x, ImageBuffer) else x
        return gaussian_pyramid(img, level + 1).levels[level].data

    def adjoint(y: np.ndarray) -> np.ndarray:
        for lvl in range(level, 0, -1):
            n_out = y.size
            centered = y - y.mean()
            folded = _reduce_adjoint_axis(
                _reduce_adjoint_axis(centered, 0, shapes[lvl - 1][0]),
                1, shapes[lvl - 1][1])
            n_in = shapes[lvl - 1][0] * shapes[lvl - 1][1]
            y = folded + (np.sum(y) / n_in)
        return y

    return forward, adjoint


class TexformObjective:
    """Pooled statistic matching plus the coarse-structure prior.

    value(x) = 0.5 * sum_r ||sqrt(w) (stats_r(x) - stats_r(target))||^2
             + 0.5 * lambda * ||G_L(x) - G_L(target)||^2

    where G_L is Gaussian-pyramid level L. With one global region and
    lambda = 0 this is exactly the global statistic inversion loss.
    """

    def __init__(self, target_gray: ImageBuffer, lattice: PoolingLattice,
                 stat_cfg: StatConfig, lam: float, level: int):
        self.extractor = PooledStatExtractor(lattice, stat_cfg)
        self.t_feat = self.extractor.evaluate(target_gray)
        self.lam = lam
        if lam > 0:
            self.g_fwd, self.g_adj = structural_operator(
                target_gray.data.shape, level)
            self.t_struct = self.g_fwd(target_gray.data)

    def value(self, x: np.ndarray) -> float:
        d = self.extractor.evaluate(ImageBuffer(x)) - self.t_feat
        v = 0.5 * float(d @ d)
        if self.lam > 0:
            r = self.g_fwd(x) - self.t_struct
            v += 0.5 * self.lam * float(np.sum(r * r))
        return v

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = self.extractor.gradient(ImageBuffer(x), self.t_feat)
        if self.lam > 0:
            r = self.g_fwd(x) - self.t_struct
            g = g + self.lam * self.g_adj(r)
        return g


def synthesize_texform(target: ImageBuffer, pooling: PoolingConfig | PoolingLattice,
                       stat_cfg: StatConfig, cfg: SynthesisConfig) -> SynthesisResult:
    """Synthesize a texform: pooled statistics of the target under a
    log-polar lattice, with coarse structure pinned by the pyramid prior.

    Non-convergence is reported, not raised; callers exclude flagged results.
    """
    gray = to_grayscale(target)
    lattice = pooling if isinstance(pooling, PoolingLattice) else build_regions(pooling)
    if (lattice.config.height, lattice.config.width) != gray.data.shape:
        raise ValueError("pooling lattice does not match the target dimensions")
    obj = TexformObjective(gray, lattice, stat_cfg,
                           cfg.lambda_structural, cfg.structural_level)
    x0 = initial_noise(gray.data.shape, cfg.seed)
    x, trace, converged = _descend(obj.value, obj.grad, x0, cfg)
    return SynthesisResult(
        image=ImageBuffer(x), loss_trace=trace, converged=converged,
        final_feature_distance=float(np.sqrt(2.0 * max(trace[-1], 0.0))),
        pixel_mse_to_target=float(np.mean((x - gray.data) ** 2)),
        seed=cfg.seed)


# ---------------------------------------------------------------------------
# Duplicate detection
# ---------------------------------------------------------------------------

@dataclass
class DuplicateReport:
    pairs: list[tuple[int, int]]
    flagged: list[int]              # indices appearing in any exact-duplicate pair
    rate: float                     # flagged / total
    percent_label: str              # rate rounded to whole percent, e.g. "2%"
    total: int


def detect_duplicates(images: list[ImageBuffer | np.ndarray]) -> DuplicateReport:
    """Flag outputs that are pixel-identical (MSE exactly zero) in pairs.

    Different noise seeds occasionally collapse onto one attractor; such
    items are excluded from analysis, and the exclusion rate is reported.
    """
    if len(images) < 2:
        raise ValueError("need at least two images to scan for duplicates")
    arrays = [im.data if isinstance(im, ImageBuffer) else np.asarray(im)
              for im in images]
    digests: dict[bytes, list[int]] = {}
    for i, a in enumerate(arrays):
        digests.setdefault(a.tobytes(), []).append(i)
    pairs = []
    flagged = set()
    for idxs in digests.values():
        for a in range(len(idxs)):
            for b in range(a + 1, len(idxs)):
                pairs.append((idxs[a], idxs[b]))
                flagged.update((idxs[a], idxs[b]))
    rate = len(flagged) / len(arrays)
    return DuplicateReport(pairs=sorted(pairs), flagged=sorted(flagged),
                           rate=rate, percent_label=f"{round(100 * rate)}%",
                           total=len(arrays))
