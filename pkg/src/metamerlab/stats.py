"""Texture summary statistics, statistic-space distance, and pixel gradients.

The statistic vector for an image collects five named groups computed from
the oriented pyramid of :mod:`metamerlab.pyramids`:

``pixel``
    mean, variance, skew, excess kurtosis, min, max of the pixels;
``autocorr``
    regularized circular autocorrelation of the cumulative lowpass at each
    scale - cov(lag) / (var + eps) - over the unique nonzero lags of an
    m x m window (lag unit doubles per scale so the window tracks the
    scale's wavelength);
``mag_mean``
    mean oriented-band magnitude per (scale, orientation);
``within_scale``
    regularized correlation between orientation magnitudes within each
    scale;
``cross_scale``
    regularized correlation between each orientation magnitude and every
    orientation magnitude one scale coarser.

The correlation entries are normalized by variance plus a small fixed
epsilon. For textured content (variance >> eps) they are ordinary
correlations, O(1) and scale-comparable across groups, so no family drowns
the others in the loss; for fading content they decay smoothly to zero
instead of jumping at a zero-variance threshold, which keeps a constant
target exactly reachable by gradient descent.

For ``StatConfig(scales=S, orientations=K, autocorr_window=m)`` the vector
length is::

    6 + S*(m*m - 1)/2 + S*K + S*K*(K-1)/2 + (S-1)*K*K

All moments are weighted: a window image ``W >= 0`` restricts the statistics
to a pooling region, and ``W = 1`` everywhere reproduces the plain global
statistics bit for bit (the pooled and global code paths are the same).

Every statistic map is smooth (magnitudes come from complex analytic bands),
so the gradient of the squared statistic distance with respect to pixels is
computed exactly: per-band gradients are accumulated in band space and pulled
back through the linear filter bank once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .image import ImageBuffer, ImageDimensionError, is_pow2
from .pyramids import get_filter_bank, min_steerable_size

GROUP_ORDER = ("pixel", "autocorr", "mag_mean", "within_scale", "cross_scale")
PIXEL_STATS = ("mean", "var", "skew", "kurt", "min", "max")

_EPS_VAR = 1e-20   # below this a variance counts as degenerate
_EPS_MAG = 1e-12   # magnitude floor when normalizing B/|B|
_EPS_COV = 1e-4    # variance regularizer in correlation denominators


class StatConfigError(ValueError):
    """Raised when statistic vectors from different configurations meet."""


@dataclass(frozen=True)
class StatConfig:
    """Shape of the statistic vector plus group weights for the loss."""

    scales: int = 4
    orientations: int = 4
    autocorr_window: int = 7
    group_weights: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self):
        if self.autocorr_window % 2 == 0 or self.autocorr_window < 1:
            raise ValueError("autocorr_window must be odd and >= 1")
        if self.scales * self.orientations < 1:
            raise ValueError("need at least one scale and orientation")
        if self.group_weights is not None:
            names = {g for g, _ in self.group_weights}
            unknown = names - set(GROUP_ORDER)
            if unknown:
                raise ValueError(f"unknown statistic groups: {sorted(unknown)}")

    def group_sizes(self) -> dict[str, int]:
        s, k, m = self.scales, self.orientations, self.autocorr_window
        return {
            "pixel": 6,
            "autocorr": s * (m * m - 1) // 2,
            "mag_mean": s * k,
            "within_scale": s * k * (k - 1) // 2,
            "cross_scale": (s - 1) * k * k,
        }

    def total_count(self) -> int:
        return sum(self.group_sizes().values())

    def weights_map(self) -> dict[str, float]:
        """Group weights; default is inverse group cardinality."""
        sizes = self.group_sizes()
        weights = {g: (1.0 / n if n else 0.0) for g, n in sizes.items()}
        if self.group_weights is not None:
            weights.update(dict(self.group_weights))
        return weights

    def weight_vector(self) -> np.ndarray:
        sizes = self.group_sizes()
        wmap = self.weights_map()
        return np.concatenate([np.full(sizes[g], wmap[g]) for g in GROUP_ORDER])

    def scaled(self, factor: float) -> "StatConfig":
        wmap = self.weights_map()
        return StatConfig(self.scales, self.orientations, self.autocorr_window,
                          tuple((g, w * factor) for g, w in wmap.items()))

    def to_dict(self) -> dict:
        d = {"scales": self.scales, "orientations": self.orientations,
             "autocorr_window": self.autocorr_window}
        if self.group_weights is not None:
            d["group_weights"] = {g: w for g, w in self.group_weights}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StatConfig":
        gw = d.get("group_weights")
        return cls(d["scales"], d["orientations"], d["autocorr_window"],
                   tuple(sorted(gw.items())) if gw else None)


@dataclass
class StatVector:
    """Named statistic groups for one image under one :class:`StatConfig`."""

    config: StatConfig
    groups: dict[str, np.ndarray]
    degenerate: bool = False

    def values(self) -> np.ndarray:
        return np.concatenate([self.groups[g] for g in GROUP_ORDER])

    def __len__(self) -> int:
        return self.config.total_count()

    def to_json(self) -> str:
        flat = {}
        for g in GROUP_ORDER:
            for name, v in zip(stat_labels(self.config, g), self.groups[g]):
                flat[name] = float(v)
        return json.dumps({"config": self.config.to_dict(),
                           "degenerate": self.degenerate,
                           "stats": flat}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StatVector":
        doc = json.loads(text)
        cfg = StatConfig.from_dict(doc["config"])
        flat = doc["stats"]
        groups = {g: np.array([flat[name] for name in stat_labels(cfg, g)])
                  for g in GROUP_ORDER}
        return cls(cfg, groups, doc.get("degenerate", False))


def autocorr_lags(window: int) -> list[tuple[int, int]]:
    """Unique nonzero lags of an odd ``window`` x ``window`` neighborhood.

    Autocorrelation is symmetric under lag negation, so only the upper half
    plane (dy > 0, or dy == 0 and dx > 0) is kept: (window^2 - 1) / 2 lags.
    """
    h = (window - 1) // 2
    out = []
    for dy in range(0, h + 1):
        for dx in range(-h, h + 1):
            if dy == 0 and dx <= 0:
                continue
            out.append((dy, dx))
    return out


def stat_labels(cfg: StatConfig, group: str) -> list[str]:
    s, k = cfg.scales, cfg.orientations
    if group == "pixel":
        return [f"pixel.{n}" for n in PIXEL_STATS]
    if group == "autocorr":
        lags = autocorr_lags(cfg.autocorr_window)
        return [f"autocorr.s{i}.dy{dy}dx{dx}"
                for i in range(s) for dy, dx in lags]
    if group == "mag_mean":
        return [f"mag_mean.s{i}.o{o}" for i in range(s) for o in range(k)]
    if group == "within_scale":
        return [f"within_scale.s{i}.o{a}o{b}"
                for i in range(s) for a in range(k) for b in range(a + 1, k)]
    if group == "cross_scale":
        return [f"cross_scale.s{i}s{i+1}.o{a}o{b}"
                for i in range(s - 1) for a in range(k) for b in range(k)]
    raise KeyError(group)


def _check_input(img: ImageBuffer, cfg: StatConfig) -> np.ndarray:
    if img.channels != 1:
        raise ValueError("statistics are defined on grayscale images")
    if img.height != img.width or not is_pow2(img.width):
        raise ImageDimensionError(
            f"{img.width}x{img.height} is not a power-of-two square")
    if img.width < min_steerable_size(cfg.scales):
        raise ImageDimensionError(
            f"side {img.width} below minimum {min_steerable_size(cfg.scales)} "
            f"for {cfg.scales} scales")
    return img.data


class StatWork:
    """Forward statistics plus the intermediates the backward pass needs.

    Pass a precomputed pyramid (``pyr``) to share one decomposition across
    several pooling windows of the same image.
    """

    def __init__(self, data: np.ndarray, cfg: StatConfig,
                 window: np.ndarray | None = None, pyr=None):
        self.cfg = cfg
        self.x = data
        h, w = data.shape
        self.W = np.ones_like(data) if window is None else window
        self.n = float(self.W.sum())
        if self.n <= 0:
            raise ValueError("pooling window has zero total weight")
        self.bank = get_filter_bank(h, w, cfg.scales, cfg.orientations)
        self.pyr = self.bank.decompose(data) if pyr is None else pyr
        # magnitudes and B/|B| units depend only on the decomposition, so
        # they are shared across all pooling windows of one image
        mags = self.pyr.cache.get("mags")
        if mags is None:
            mags = [[np.abs(b) for b in row] for row in self.pyr.bands]
            self.pyr.cache["mags"] = mags
        self.mags = mags
        self.degenerate = False
        self.groups = {
            "pixel": self._pixel_stats(),
            "autocorr": self._autocorr_stats(),
            "mag_mean": self._mag_means(),
            "within_scale": self._within_scale(),
            "cross_scale": self._cross_scale(),
        }

    # -- weighted helpers ------------------------------------------------------

    def _wsum(self, a: np.ndarray):
        # np.float64 out: overflows propagate as inf instead of raising
        return np.vdot(self.W, a)

    def _wmean(self, a: np.ndarray):
        return self._wsum(a) / self.n

    # -- forward ---------------------------------------------------------------

    def _pixel_stats(self) -> np.ndarray:
        x, W, n = self.x, self.W, self.n
        mu = self._wmean(x)
        d = x - mu
        m2 = self._wsum(d * d) / n
        m3 = self._wsum(d ** 3) / n
        m4 = self._wsum(d ** 4) / n
        if m2 < _EPS_VAR:
            self.degenerate = True
            skew = kurt = 0.0
        else:
            skew = m3 / m2 ** 1.5
            kurt = m4 / m2 ** 2 - 3.0
        support = self.W > 0
        self._pix = dict(mu=mu, m2=m2, m3=m3, m4=m4, d=d)
        vals = x[support]
        self._argmin = tuple(np.argwhere(support)[int(np.argmin(vals))])
        self._argmax = tuple(np.argwhere(support)[int(np.argmax(vals))])
        return np.array([mu, m2, skew, kurt, float(vals.min()), float(vals.max())])

    def _lag_views(self, s: int) -> list[np.ndarray]:
        """Wrap-shifted views of the scale-``s`` lowpass, one per lag.

        View ``d`` holds L(p + d); shared through the pyramid cache, so all
        pooling windows of one image reuse the same padded arrays.
        """
        key = ("lag_views", s, self.cfg.autocorr_window)
        views = self.pyr.cache.get(key)
        if views is None:
            low = self.pyr.low_scales[s]
            unit = 2 ** s
            hu = (self.cfg.autocorr_window - 1) // 2 * unit
            pad = np.pad(low, hu, mode="wrap")
            n0, n1 = low.shape
            views = [pad[hu + dy * unit: hu + dy * unit + n0,
                         hu + dx * unit: hu + dx * unit + n1]
                     for dy, dx in autocorr_lags(self.cfg.autocorr_window)]
            self.pyr.cache[key] = views
        return views

    def _autocorr_stats(self) -> np.ndarray:
        lags = autocorr_lags(self.cfg.autocorr_window)
        out = []
        self._ac = []
        for s, low in enumerate(self.pyr.low_scales):
            mu = self._wmean(low)
            z = low - mu
            Wz = self.W * z
            swz = float(Wz.sum())
            c0 = self._wsum(z * z) / self.n
            denom = c0 + _EPS_COV
            rho = np.zeros(len(lags))
            # forward-lag convention: correlate z(p) with z(p + d);
            # <Wz, L(p+d)> - mu * sum(Wz) recenters the shifted copy
            views = self._lag_views(s)
            for i, view in enumerate(views):
                rho[i] = ((float(np.vdot(Wz, view)) - mu * swz)
                          / self.n) / denom
            out.append(rho)
            self._ac.append(dict(z=z, Wz=Wz, mu=mu, swz=swz, c0=c0,
                                 rho=rho, unit=2 ** s))
        return np.concatenate(out)

    def _mag_means(self) -> np.ndarray:
        return np.array([self._wmean(m) for row in self.mags for m in row])

    def _centered_mag(self, s: int, o: int):
        m = self.mags[s][o]
        mc = m - self._wmean(m)
        v = self._wsum(mc * mc) / self.n
        return mc, v

    def _mag_corr(self, key, a, va, b, vb) -> float:
        cov = self._wsum(a * b) / self.n
        rho = cov / np.sqrt((va + _EPS_COV) * (vb + _EPS_COV))
        self._mcorr[key] = rho
        return rho

    def _within_scale(self) -> np.ndarray:
        k = self.cfg.orientations
        self._cm = [[self._centered_mag(s, o) for o in range(k)]
                    for s in range(self.cfg.scales)]
        self._mcorr: dict[tuple, float] = {}
        out = []
        for s in range(self.cfg.scales):
            for a in range(k):
                for b in range(a + 1, k):
                    (ma, va), (mb, vb) = self._cm[s][a], self._cm[s][b]
                    out.append(self._mag_corr(((s, a), (s, b)), ma, va, mb, vb))
        return np.array(out)

    def _cross_scale(self) -> np.ndarray:
        k = self.cfg.orientations
        out = []
        for s in range(self.cfg.scales - 1):
            for a in range(k):
                for b in range(k):
                    (ma, va), (mb, vb) = self._cm[s][a], self._cm[s + 1][b]
                    out.append(self._mag_corr(((s, a), (s + 1, b)), ma, va, mb, vb))
        return np.array(out)

    def stat_vector(self) -> StatVector:
        return StatVector(self.cfg, dict(self.groups), self.degenerate)

    # -- backward ----------------------------------------------------------------

    def gradient(self, errors: np.ndarray) -> np.ndarray:
        """d/dx of sum_i errors_i * stat_i(x); ``errors`` follows values() order."""
        gx, glow, gband = self.gradient_parts(errors)
        grad = gx
        for s, gl in enumerate(glow):
            if np.any(gl):
                grad += self.bank.adjoint_low(gl, s)
        for s in range(self.cfg.scales):
            for o in range(self.cfg.orientations):
                if np.any(gband[s][o]):
                    grad += self.bank.adjoint_band(gband[s][o], s, o)
        return grad

    def gradient_parts(self, errors: np.ndarray):
        """Gradient split into (pixel-space, per-lowpass, per-band) pieces.

        The lowpass and band pieces still need the filter-bank adjoints;
        callers pooling several windows of one image accumulate the pieces
        first and pull them back once.
        """
        sizes = self.cfg.group_sizes()
        cursor = 0
        e = {}
        for g in GROUP_ORDER:
            e[g] = errors[cursor:cursor + sizes[g]]
            cursor += sizes[g]

        gx = self._pixel_gradient(e["pixel"])
        k = self.cfg.orientations
        # gradients on band magnitudes accumulate as real arrays; the shared
        # (W/n) * B/|B| factor is applied once per band at the end
        self._gmag = [[None] * k for _ in range(self.cfg.scales)]
        self._gmag_const = [[0.0] * k for _ in range(self.cfg.scales)]
        glow = []

        # regularized autocorrelation -> cumulative lowpass gradients
        lags = autocorr_lags(self.cfg.autocorr_window)
        n_lags = len(lags)
        for s, entry in enumerate(self._ac):
            gl = np.zeros_like(self.x)
            e_s = e["autocorr"][s * n_lags:(s + 1) * n_lags]
            unit = entry["unit"]
            if np.any(e_s):
                W, n = self.W, self.n
                Wz, mu = entry["Wz"], entry["mu"]
                denom = entry["c0"] + _EPS_COV
                views = self._lag_views(s)
                hu = (self.cfg.autocorr_window - 1) // 2 * unit
                pad_wz = np.pad(Wz, hu, mode="wrap")
                n0, n1 = self.x.shape
                alphas = e_s / denom
                acc_z = np.zeros_like(self.x)   # sum_d alpha_d L(p+d)
                acc_r = np.zeros_like(self.x)   # sum_d alpha_d Wz(p-d)
                sum_alpha = 0.0
                sum_alpha_sd = 0.0
                beta = 0.0                      # sum_d alpha_d rho_d
                for i, (dy, dx) in enumerate(lags):
                    a_i = alphas[i]
                    if a_i == 0.0:
                        continue
                    view = views[i]
                    acc_z += a_i * view
                    acc_r += a_i * pad_wz[hu - dy * unit: hu - dy * unit + n0,
                                          hu - dx * unit: hu - dx * unit + n1]
                    s_d = float(np.vdot(W, view)) - mu * n
                    sum_alpha += a_i
                    sum_alpha_sd += a_i * s_d
                    beta += a_i * entry["rho"][i]
                gl = (W * (acc_z - sum_alpha * mu) + acc_r
                      - (sum_alpha_sd / n) * W) / n - beta * (2.0 / n) * Wz
            glow.append(gl)

        # magnitude means contribute a constant to each band's magnitude grad
        idx = 0
        for s in range(self.cfg.scales):
            for o in range(k):
                self._gmag_const[s][o] += e["mag_mean"][idx]
                idx += 1

        # within-scale correlations
        idx = 0
        for s in range(self.cfg.scales):
            for a in range(k):
                for b in range(a + 1, k):
                    ei = e["within_scale"][idx]
                    idx += 1
                    if ei != 0.0:
                        self._corr_gradient(ei, (s, a), (s, b))

        # cross-scale correlations
        idx = 0
        for s in range(self.cfg.scales - 1):
            for a in range(k):
                for b in range(k):
                    ei = e["cross_scale"][idx]
                    idx += 1
                    if ei != 0.0:
                        self._corr_gradient(ei, (s, a), (s + 1, b))

        gband = [[None] * k for _ in range(self.cfg.scales)]
        w_over_n = self.W / self.n
        for s in range(self.cfg.scales):
            for o in range(k):
                gm = self._gmag[s][o]
                c = self._gmag_const[s][o]
                if gm is None and c == 0.0:
                    gband[s][o] = np.zeros_like(self.pyr.bands[s][o])
                    continue
                total = c if gm is None else (gm + c if c != 0.0 else gm)
                gband[s][o] = (w_over_n * total) * self._mag_unit(s, o)

        return gx, glow, gband

    def _mag_unit(self, s: int, o: int) -> np.ndarray:
        unit = self.pyr.cache.get(("unit", s, o))
        if unit is None:
            b = self.pyr.bands[s][o]
            m = self.mags[s][o]
            unit = b / np.maximum(m, _EPS_MAG)
            self.pyr.cache[("unit", s, o)] = unit
        return unit

    def _pixel_gradient(self, e: np.ndarray) -> np.ndarray:
        W, n = self.W, self.n
        p = self._pix
        d, m2, m3, m4 = p["d"], p["m2"], p["m3"], p["m4"]
        grad = e[0] * (W / n)
        dm2 = 2.0 * W * d / n
        if e[1] != 0.0:
            grad = grad + e[1] * dm2
        if m2 >= _EPS_VAR:
            if e[2] != 0.0:
                dm3 = 3.0 * W * (d * d - m2) / n
                grad = grad + e[2] * (dm3 / m2 ** 1.5
                                      - 1.5 * m3 / m2 ** 2.5 * dm2)
            if e[3] != 0.0:
                dm4 = 4.0 * W * (d ** 3 - m3) / n
                grad = grad + e[3] * (dm4 / m2 ** 2 - 2.0 * m4 / m2 ** 3 * dm2)
        if e[4] != 0.0:
            grad = grad.copy()
            grad[self._argmin] += e[4]
        if e[5] != 0.0:
            grad = grad.copy()
            grad[self._argmax] += e[5]
        return grad

    def _corr_gradient(self, ei, pa, pb):
        (sa, oa), (sb, ob) = pa, pb
        ma, va = self._cm[sa][oa]
        mb, vb = self._cm[sb][ob]
        rho = self._mcorr[(pa, pb)]
        root = np.sqrt((va + _EPS_COV) * (vb + _EPS_COV))
        self._gmag_add(sa, oa, (ei / root) * mb
                       - (ei * rho / (va + _EPS_COV)) * ma)
        self._gmag_add(sb, ob, (ei / root) * ma
                       - (ei * rho / (vb + _EPS_COV)) * mb)

    def _gmag_add(self, s, o, arr):
        if self._gmag[s][o] is None:
            self._gmag[s][o] = arr
        else:
            self._gmag[s][o] += arr


def compute_stats(img: ImageBuffer, cfg: StatConfig,
                  window: np.ndarray | None = None) -> StatVector:
    """Statistic vector of a grayscale power-of-two square image.

    ``window`` optionally restricts all moments to a pooling region; omit it
    for global statistics. Deterministic: identical inputs give bit-identical
    vectors.
    """
    data = _check_input(img, cfg)
    return StatWork(data, cfg, window).stat_vector()


def stat_distance(a: StatVector, b: StatVector) -> float:
    """Group-weighted L2 distance between two statistic vectors."""
    if a.config != b.config:
        raise StatConfigError("statistic vectors come from different configurations")
    wv = a.config.weight_vector()
    diff = a.values() - b.values()
    return float(np.sqrt(np.sum(wv * diff * diff)))


def stat_loss_and_gradient(img: ImageBuffer, target: StatVector, cfg: StatConfig,
                           window: np.ndarray | None = None):
    """Loss ``0.5 * stat_distance(stats(img), target)**2`` and its pixel gradient."""
    if cfg != target.config:
        raise StatConfigError("target statistics use a different configuration")
    data = _check_input(img, cfg)
    work = StatWork(data, cfg, window)
    diff = work.stat_vector().values() - target.values()
    wv = cfg.weight_vector()
    loss = 0.5 * float(np.sum(wv * diff * diff))
    return loss, work.gradient(wv * diff)


def stat_gradient(img: ImageBuffer, target: StatVector, cfg: StatConfig,
                  window: np.ndarray | None = None) -> ImageBuffer:
    """Pixel gradient of ``0.5 * stat_distance(stats(img), target)**2``."""
    return ImageBuffer(stat_loss_and_gradient(img, target, cfg, window)[1])
