"""Image quality metrics, fovea/periphery pyramid reports, and the pooling
parameter grid search.

Two metrics ship: plain MSE and a texture-tolerant distance that blends the
statistic-space distance with a coarse-structure (deep Gaussian-pyramid
level) distance, each normalized by its median over a calibration corpus.
The pyramid report scores stimulus pairs at opposite pyramid levels - level
0 stands in for foveal viewing, level 3 for peripheral viewing - so a
model's outputs can be simultaneously far in pixels and close in structure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import ImageBuffer, ImageDimensionError, load_png, to_grayscale
from .pyramids import gaussian_pyramid
from .stats import StatConfig, compute_stats, stat_distance
from .stimuli import StimulusSet


def mse(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean squared difference over all entries."""
    if a.shape != b.shape:
        raise ImageDimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a.data - b.data) ** 2))


class MseMetric:
    name = "mse"

    def distance(self, a: ImageBuffer, b: ImageBuffer) -> float:
        return mse(a, b)


class TextureTolerantMetric:
    """Blend of statistic-space and coarse-structure distances.

    distance = alpha * stat_distance / stat_norm
             + (1 - alpha) * level-L RMSE / struct_norm

    Tolerant to texture-preserving rearrangements (the statistic term ignores
    them) while still penalizing structural change. Normalizers default to 1;
    :meth:`calibrate` sets them to the median of each term over a corpus of
    pairs, per the reporting convention.
    """

    def __init__(self, stat_cfg: StatConfig | None = None, alpha: float = 0.5,
                 level: int = 3, stat_norm: float = 1.0, struct_norm: float = 1.0):
        self.stat_cfg = stat_cfg or StatConfig()
        self.alpha = alpha
        self.level = level
        self.stat_norm = stat_norm
        self.struct_norm = struct_norm
        self.name = "texstat"

    def _terms(self, a: ImageBuffer, b: ImageBuffer) -> tuple[float, float]:
        if a.shape != b.shape:
            raise ImageDimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
        ga, gb = to_grayscale(a), to_grayscale(b)
        sd = stat_distance(compute_stats(ga, self.stat_cfg),
                           compute_stats(gb, self.stat_cfg))
        la = gaussian_pyramid(ga, self.level + 1).levels[self.level].data
        lb = gaussian_pyramid(gb, self.level + 1).levels[self.level].data
        return sd, float(np.sqrt(np.mean((la - lb) ** 2)))

    def distance(self, a: ImageBuffer, b: ImageBuffer) -> float:
        sd, rd = self._terms(a, b)
        return self.alpha * sd / self.stat_norm + (1 - self.alpha) * rd / self.struct_norm

    def calibrate(self, pairs: list[tuple[ImageBuffer, ImageBuffer]]) -> "TextureTolerantMetric":
        """Return a copy normalized by the corpus medians of both terms."""
        sds, rds = [], []
        for a, b in pairs:
            sd, rd = self._terms(a, b)
            sds.append(sd)
            rds.append(rd)
        return TextureTolerantMetric(
            self.stat_cfg, self.alpha, self.level,
            stat_norm=float(np.median(sds)) or 1.0,
            struct_norm=float(np.median(rds)) or 1.0)


METRICS = {"mse": MseMetric, "texstat": TextureTolerantMetric}


# ---------------------------------------------------------------------------
# Pyramid-level IQA report
# ---------------------------------------------------------------------------

@dataclass
class PairScore:
    class_name: str
    image_id: str
    family: str
    condition: str          # "original_vs_synth" | "synth_vs_synth"
    seeds: tuple
    level: int
    metric: str
    score: float


@dataclass
class IQAReport:
    scores: list[PairScore]
    aggregates: dict            # (condition, family, metric, level) -> stats
    skipped: list[str]

    def to_csv(self) -> str:
        lines = ["class,image_id,family,condition,seeds,level,metric,score"]
        for s in self.scores:
            seeds = "|".join(str(x) for x in s.seeds)
            lines.append(f"{s.class_name},{s.image_id},{s.family},{s.condition},"
                         f"{seeds},{s.level},{s.metric},{s.score!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "aggregates": [
                {"condition": k[0], "family": k[1], "metric": k[2],
                 "level": k[3], **v}
                for k, v in sorted(self.aggregates.items())],
            "skipped": self.skipped,
            "n_scores": len(self.scores),
        }, sort_keys=True)


def _channel_mean(metric, a: ImageBuffer, b: ImageBuffer) -> float:
    """Metric score; color inputs are scored per channel and averaged."""
    if a.channels == 1 and b.channels == 1:
        return metric.distance(a, b)
    if a.channels != b.channels:
        raise ImageDimensionError("channel mismatch")
    scores = [metric.distance(ImageBuffer(a.data[:, :, c]),
                              ImageBuffer(b.data[:, :, c]))
              for c in range(a.channels)]
    return float(np.mean(scores))


def pyramid_iqa(sset: StimulusSet, metrics: list, levels=(0, 3),
                conditions=("original_vs_synth", "synth_vs_synth"),
                loader=load_png) -> IQAReport:
    """Score every matched stimulus pair at the requested pyramid levels.

    Pairs: original vs each synthesized seed, and seed pairs within a
    family. Unmatched items are skipped and itemized. Aggregates are
    mean +/- 2 standard errors per (condition, family, metric, level).
    """
    scores: list[PairScore] = []
    skipped: list[str] = []
    cache: dict = {}

    def level_of(entry, lvl):
        key = (entry.key, lvl)
        if key not in cache:
            pyr = gaussian_pyramid(loader(entry.path), max(levels) + 1)
            for l2 in levels:
                cache[(entry.key, l2)] = pyr.levels[l2]
        return cache[key]

    def score_pair(class_name, image_id, family, condition, seeds, a_entry, b_entry):
        for lvl in levels:
            la, lb = level_of(a_entry, lvl), level_of(b_entry, lvl)
            for m in metrics:
                scores.append(PairScore(class_name, image_id, family, condition,
                                        seeds, lvl, m.name,
                                        _channel_mean(m, la, lb)))

    for class_name, image_id in sset.image_ids():
        original = sset.get(class_name, image_id, "original")
        for family in sset.families():
            seeds = sset.seeds(class_name, image_id, family)
            if "original_vs_synth" in conditions:
                if original is None:
                    skipped.append(f"{class_name}/{image_id}: no original")
                else:
                    for s in seeds:
                        score_pair(class_name, image_id, family,
                                   "original_vs_synth", (s,),
                                   original, sset.get(class_name, image_id, family, s))
            if "synth_vs_synth" in conditions:
                if len(seeds) < 2:
                    if seeds:
                        skipped.append(
                            f"{class_name}/{image_id}/{family}: single seed")
                else:
                    for i in range(len(seeds)):
                        for j in range(i + 1, len(seeds)):
                            score_pair(class_name, image_id, family,
                                       "synth_vs_synth", (seeds[i], seeds[j]),
                                       sset.get(class_name, image_id, family, seeds[i]),
                                       sset.get(class_name, image_id, family, seeds[j]))

    aggregates = {}
    for s in scores:
        aggregates.setdefault((s.condition, s.family, s.metric, s.level), []).append(s.score)
    agg_out = {}
    for key, vals in aggregates.items():
        arr = np.array(vals)
        se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        agg_out[key] = {"mean": float(arr.mean()), "two_se": 2 * se, "n": len(arr)}
    return IQAReport(scores, agg_out, skipped)


# ---------------------------------------------------------------------------
# Pooling-parameter grid search
# ---------------------------------------------------------------------------

@dataclass
class GridPoint:
    s: float
    z: float                    # horizontal fixation, px
    dissimilarity: float | None # None when the point failed
    n_pairs: int
    error: str | None = None


@dataclass
class OptimizationResult:
    points: list[GridPoint]
    best: tuple[float, float] | None
    ties: list[tuple[float, float]]

    def to_json(self) -> str:
        return json.dumps({
            "points": [{"s": p.s, "z": p.z, "Z": p.dissimilarity,
                        "n_pairs": p.n_pairs, "error": p.error}
                       for p in self.points],
            "best": list(self.best) if self.best else None,
            "ties": [list(t) for t in self.ties],
        }, sort_keys=True)


def _point_cache_key(s, z, pair_keys, stat_cfg, syn_cfg) -> str:
    doc = json.dumps({"s": s, "z": z, "pairs": sorted(map(list, pair_keys)),
                      "stat": stat_cfg.to_dict(), "syn": syn_cfg.to_dict()},
                     sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:24]


def _evaluate_grid_point(args):
    """One (s, z) candidate: synthesize texforms for every pair and score.

    Module-level so a process pool can fan grid points out; each point is an
    independent deterministic job.
    """
    from dataclasses import replace
    from .pooling import PoolingConfig, build_regions
    from .synthesis import synthesize_texform

    s, z, pairs, metric, stat_cfg, syn_cfg, min_region_px = args
    q_tex = []
    for class_name, image_id, seed, x, _ in pairs:
        h, w = x.data.shape
        pcfg = PoolingConfig(w, h, s, (float(z), h / 2.0), min_region_px)
        res = synthesize_texform(x, build_regions(pcfg), stat_cfg,
                                 replace(syn_cfg, seed=seed))
        # score export-equivalent intensities: delivered stimuli are clamped
        # files, and reference stimuli were loaded from such files
        q_tex.append(metric.distance(x, res.image.clamped()))
    return q_tex


def optimize_texform_params(targets: StimulusSet, robust_refs: StimulusSet,
                            s_grid, z_grid, metric, stat_cfg: StatConfig,
                            syn_cfg, min_region_px: float = 8.0,
                            cache_dir: str | Path | None = None,
                            loader=load_png, jobs: int = 1) -> OptimizationResult:
    """Grid-search pooling parameters to match reference distortion levels.

    For each (s, z): synthesize one texform per (target, seed) pair with the
    seed matching its reference, then compare expected metric scores:

        Z(s, z) = | mean Q(x, ref) - mean Q(x, texform_sz) |

    The argmin wins; ties break toward smaller s then smaller z. Each grid
    point is cached to one JSON file keyed by its configuration hash
    (written atomically), so an interrupted search resumes where it stopped.
    Failed points are excluded from the argmin and reported. ``jobs > 1``
    fans uncached points out over a process pool.
    """
    pairs = []          # (class, image_id, seed, target ImageBuffer, ref ImageBuffer)
    for class_name, image_id in targets.image_ids():
        orig = targets.get(class_name, image_id, "original")
        if orig is None:
            continue
        for seed in robust_refs.seeds(class_name, image_id, "robust"):
            ref = robust_refs.get(class_name, image_id, "robust", seed)
            pairs.append((class_name, image_id, seed,
                          to_grayscale(loader(orig.path)),
                          to_grayscale(loader(ref.path))))
    if not pairs:
        raise ValueError("no (target, reference) pairs to optimize over")
    s_grid, z_grid = list(s_grid), list(z_grid)
    if not s_grid or not z_grid:
        raise ValueError("empty parameter grid")

    q_ref = [metric.distance(x, ref) for _, _, _, x, ref in pairs]
    mean_ref = float(np.mean(q_ref))
    pair_keys = [(c, i, s) for c, i, s, _, _ in pairs]
    cache_dir = Path(cache_dir) if cache_dir else None
    if cache_dir:
        cache_dir.mkdir(parents=True, exist_ok=True)

    candidates = [(s, z) for s in s_grid for z in z_grid]
    results: dict[tuple, GridPoint] = {}
    todo = []
    for s, z in candidates:
        cache_file = None
        if cache_dir:
            cache_file = cache_dir / (
                _point_cache_key(s, z, pair_keys, stat_cfg, syn_cfg) + ".json")
            if cache_file.exists():
                doc = json.loads(cache_file.read_text())
                results[(s, z)] = GridPoint(s, z, doc["Z"], doc["n_pairs"],
                                            doc.get("error"))
                continue
        todo.append((s, z, cache_file))

    def finish(s, z, cache_file, q_tex=None, error=None):
        if error is None:
            zval = abs(mean_ref - float(np.mean(q_tex)))
            results[(s, z)] = GridPoint(s, z, zval, len(pairs))
            doc = {"s": s, "z": z, "Z": zval, "n_pairs": len(pairs),
                   "q_ref": q_ref, "q_tex": q_tex}
        else:
            results[(s, z)] = GridPoint(s, z, None, len(pairs), error=error)
            doc = {"s": s, "z": z, "Z": None, "n_pairs": len(pairs),
                   "error": error}
        if cache_file:
            tmp = cache_file.with_suffix(".tmp")
            tmp.write_text(json.dumps(doc, sort_keys=True))
            tmp.replace(cache_file)

    if jobs > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {(s, z, cf): pool.submit(
                _evaluate_grid_point,
                (s, z, pairs, metric, stat_cfg, syn_cfg, min_region_px))
                for s, z, cf in todo}
            for (s, z, cf), fut in futures.items():
                try:
                    finish(s, z, cf, q_tex=fut.result())
                except Exception as exc:   # noqa: BLE001 - bad point must not kill the sweep
                    finish(s, z, cf, error=str(exc))
    else:
        for s, z, cf in todo:
            try:
                finish(s, z, cf, q_tex=_evaluate_grid_point(
                    (s, z, pairs, metric, stat_cfg, syn_cfg, min_region_px)))
            except Exception as exc:       # noqa: BLE001
                finish(s, z, cf, error=str(exc))

    points = [results[(s, z)] for s, z in candidates]
    valid = [p for p in points if p.dissimilarity is not None]
    if not valid:
        return OptimizationResult(points, None, [])
    zmin = min(p.dissimilarity for p in valid)
    ties = sorted(((p.s, p.z) for p in valid if p.dissimilarity == zmin))
    return OptimizationResult(points, ties[0], ties)
