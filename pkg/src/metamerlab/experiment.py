"""Experiment definition and trial machinery for the two discrimination
tasks.

Oddity: three brief peripheral presentations, one holding the odd stimulus;
chance 1/3. Matching (2AFC): a brief foveal template followed by two
peripheral candidates, one identical to the template; chance 1/2.

Trials interleave two variants per stimulus family ("stimulus roving"):
``orig_vs_synth``, where the odd item / matching candidate involves the
original image, and ``synth_vs_synth``, where everything shown was
synthesized and the discrimination is between noise seeds. Schedules are
fully seeded: per-cell counts are exact, correct positions are
counterbalanced (remainders drawn without replacement), and no source image
repeats within a cell.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .image import load_png, to_grayscale
from .pyramids import gaussian_pyramid
from .stimuli import StimulusSet

ODDITY = "oddity"
MATCH2AFC = "match2afc"
CHANCE = {ODDITY: 1.0 / 3.0, MATCH2AFC: 0.5}
DEFAULT_MASK_MS = {ODDITY: 500, MATCH2AFC: 1000}
VARIANTS = ("orig_vs_synth", "synth_vs_synth")


class ScheduleShortfall(ValueError):
    """Requested trial counts exceed what the stimulus set can supply."""

    def __init__(self, shortfalls: list[str]):
        self.shortfalls = shortfalls
        super().__init__("insufficient stimuli: " + "; ".join(shortfalls))


# ---------------------------------------------------------------------------
# Display geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisplayGeometry:
    screen_px: tuple[int, int]          # (width, height)
    screen_cm: tuple[float, float]
    viewing_distance_cm: float

    def __post_init__(self):
        if min(*self.screen_px) <= 0 or min(*self.screen_cm) <= 0 \
                or self.viewing_distance_cm <= 0:
            raise ValueError("geometry entries must be positive")
        px_per_cm_x = self.screen_px[0] / self.screen_cm[0]
        px_per_cm_y = self.screen_px[1] / self.screen_cm[1]
        if abs(px_per_cm_x - px_per_cm_y) > 0.05 * max(px_per_cm_x, px_per_cm_y):
            warnings.warn("pixel aspect ratio differs >5% between axes",
                          stacklevel=2)

    def to_dict(self) -> dict:
        return {"screen_px": list(self.screen_px),
                "screen_cm": list(self.screen_cm),
                "viewing_distance_cm": self.viewing_distance_cm}

    @classmethod
    def from_dict(cls, d: dict) -> "DisplayGeometry":
        return cls(tuple(d["screen_px"]), tuple(d["screen_cm"]),
                   d["viewing_distance_cm"])


def degrees_per_screen(g: DisplayGeometry) -> tuple[float, float]:
    """(horizontal, vertical) full visual angle of the screen in degrees."""
    def angle(extent_cm):
        return 2.0 * math.atan(extent_cm / 2.0 / g.viewing_distance_cm) \
            * 180.0 / math.pi
    return angle(g.screen_cm[0]), angle(g.screen_cm[1])


def px_per_degree(g: DisplayGeometry) -> float:
    """Proportional pixels-per-degree along the vertical axis.

    The lab convention maps stimulus size linearly: a stimulus spanning a
    fraction of the screen spans the same fraction of the screen's total
    visual angle (not a per-pixel arctangent).
    """
    _, vertical_deg = degrees_per_screen(g)
    return g.screen_px[1] / vertical_deg


def deg_to_px(deg: float, g: DisplayGeometry) -> float:
    if deg < 0:
        raise ValueError("visual angle must be >= 0")
    return deg * px_per_degree(g)


def px_to_deg(px: float, g: DisplayGeometry) -> float:
    return px / px_per_degree(g)


# ---------------------------------------------------------------------------
# Configuration and trial specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Condition:
    family: str                 # "standard" | "robust" | "texform"
    variant: str                # "orig_vs_synth" | "synth_vs_synth"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def label(self) -> str:
        return f"{self.family}:{self.variant}"

    @classmethod
    def parse(cls, label: str) -> "Condition":
        family, variant = label.split(":", 1)
        return cls(family, variant)


@dataclass
class ExperimentConfig:
    task: str
    eccentricities_deg: list[float]
    conditions: list[Condition]
    trials_per_cell: int
    seed: int = 0
    stimulus_ms: int = 100
    mask_ms: int | None = None          # task default when omitted
    stimulus_deg: float = 6.67
    iti_ms: int = 500                   # artifact default, recorded in config
    response_window_ms: int | None = None   # None = unlimited
    refresh_hz: float = 60.0

    def __post_init__(self):
        if self.task not in (ODDITY, MATCH2AFC):
            raise ValueError(f"unknown task {self.task!r}")
        if self.trials_per_cell <= 0:
            raise ValueError("trials_per_cell must be positive")
        if self.mask_ms is None:
            self.mask_ms = DEFAULT_MASK_MS[self.task]
        self.conditions = [c if isinstance(c, Condition) else Condition.parse(c)
                           for c in self.conditions]

    @property
    def chance(self) -> float:
        return CHANCE[self.task]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conditions"] = [c.label for c in self.conditions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["conditions"] = [Condition.parse(c) for c in d["conditions"]]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StimulusRef:
    class_name: str
    image_id: str
    family: str
    seed: int | None

    def to_dict(self) -> dict:
        return {"class_name": self.class_name, "image_id": self.image_id,
                "family": self.family, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "StimulusRef":
        return cls(d["class_name"], d["image_id"], d["family"], d["seed"])


@dataclass
class TrialSpec:
    """One trial: stimulus arrangement, correct answer, placement.

    ``stimuli`` is presentation-ordered: three intervals for oddity, or
    [template, left candidate, right candidate] for matching. ``side`` is the
    peripheral placement side for oddity trials (candidates of matching
    trials always split left/right).
    """

    id: str
    task: str
    condition: str
    eccentricity_deg: float
    stimuli: list[StimulusRef]
    correct_index: int
    side: str = "right"

    def __post_init__(self):
        n = 3 if self.task == ODDITY else 2
        if not 0 <= self.correct_index < n:
            raise ValueError(f"correct_index {self.correct_index} out of range")

    @property
    def n_choices(self) -> int:
        return 3 if self.task == ODDITY else 2

    def to_dict(self) -> dict:
        return {"id": self.id, "task": self.task, "condition": self.condition,
                "eccentricity_deg": self.eccentricity_deg,
                "stimuli": [s.to_dict() for s in self.stimuli],
                "correct_index": self.correct_index, "side": self.side}

    @classmethod
    def from_dict(cls, d: dict) -> "TrialSpec":
        return cls(d["id"], d["task"], d["condition"], d["eccentricity_deg"],
                   [StimulusRef.from_dict(s) for s in d["stimuli"]],
                   d["correct_index"], d.get("side", "right"))


@dataclass
class TrialRecord:
    trial_id: str
    response_index: int
    correct: bool
    response_time_ms: float | None = None
    interval_timestamps: list[float] = field(default_factory=list)
    session_id: str | None = None
    timing_suspect: bool = False
    telemetry_valid: bool = True

    def __post_init__(self):
        ts = self.interval_timestamps
        if ts and any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("interval timestamps must be strictly increasing")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Schedule generation
# ---------------------------------------------------------------------------

def _counterbalanced(n: int, positions: int, rng) -> np.ndarray:
    """Exact uniform position counts; the remainder is drawn without
    replacement."""
    base = np.repeat(np.arange(positions), n // positions)
    extra = rng.choice(positions, size=n % positions, replace=False)
    out = np.concatenate([base, extra]).astype(int)
    rng.shuffle(out)
    return out


def _cell_stimuli(cond: Condition, task: str, sset: StimulusSet,
                  ids: list[tuple[str, str]], rng):
    """Per-trial stimulus triples/pairs for one cell, honoring the variant.

    Oddity shows one sample twice plus the odd item (the only composition a
    distance-based observer can solve when synthesized seeds differ from
    each other more than from the original). The roving across trials still
    exercises both seeds: the repeated sample's seed is drawn per trial.
    """
    out = []
    for class_name, image_id in ids:
        seeds = sset.seeds(class_name, image_id, cond.family)
        pick = rng.permutation(len(seeds))
        sa, sb = seeds[pick[0]], seeds[pick[1]]
        synth = lambda s: StimulusRef(class_name, image_id, cond.family, s)
        orig = StimulusRef(class_name, image_id, "original", None)
        if task == ODDITY:
            if cond.variant == "orig_vs_synth":
                out.append((orig, [synth(sa), synth(sa)]))
            else:
                out.append((synth(sb), [synth(sa), synth(sa)]))
        else:
            if cond.variant == "orig_vs_synth":
                out.append((orig, synth(sa)))       # (match=template, foil)
            else:
                out.append((synth(sa), synth(sb)))
    return out


def generate_trials(cfg: ExperimentConfig, sset: StimulusSet) -> list[TrialSpec]:
    """Build the full interleaved schedule for one session.

    Deterministic in (cfg, set, seed). Raises :class:`ScheduleShortfall`
    listing every cell that cannot be filled.
    """
    rng = np.random.default_rng(cfg.seed)
    shortfalls = []
    usable: dict[str, list[tuple[str, str]]] = {}
    for cond in cfg.conditions:
        ids = []
        for class_name, image_id in sset.image_ids():
            seeds = sset.seeds(class_name, image_id, cond.family)
            need_orig = cond.variant == "orig_vs_synth"
            if len(seeds) < 2:
                continue
            if need_orig and sset.get(class_name, image_id, "original") is None:
                continue
            ids.append((class_name, image_id))
        usable[cond.label] = ids
        if len(ids) < cfg.trials_per_cell:
            shortfalls.append(
                f"{cond.label}: {len(ids)} usable images < "
                f"{cfg.trials_per_cell} trials per cell")
    if shortfalls:
        raise ScheduleShortfall(shortfalls)

    trials: list[TrialSpec] = []
    for cond in cfg.conditions:
        for ecc in cfg.eccentricities_deg:
            ids_pool = usable[cond.label]
            chosen_idx = rng.choice(len(ids_pool), size=cfg.trials_per_cell,
                                    replace=False)
            ids = [ids_pool[i] for i in chosen_idx]
            positions = _counterbalanced(cfg.trials_per_cell,
                                         3 if cfg.task == ODDITY else 2, rng)
            sides = _counterbalanced(cfg.trials_per_cell, 2, rng)
            payloads = _cell_stimuli(cond, cfg.task, sset, ids, rng)
            for (odd, rest), pos, side in zip(payloads, positions, sides):
                if cfg.task == ODDITY:
                    arrangement = list(rest)
                    arrangement.insert(int(pos), odd)
                else:
                    match, foil = odd, rest
                    arrangement = [match, match, foil] if pos == 0 \
                        else [match, foil, match]
                trials.append(TrialSpec(
                    id="", task=cfg.task, condition=cond.label,
                    eccentricity_deg=float(ecc), stimuli=arrangement,
                    correct_index=int(pos),
                    side="left" if side == 0 else "right"))
    order = rng.permutation(len(trials))
    trials = [trials[i] for i in order]
    for i, t in enumerate(trials):
        t.id = f"t{i:05d}"
    return trials


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def score_session(records: list[TrialRecord],
                  specs: list[TrialSpec]) -> dict[tuple[str, float], dict]:
    """Proportion correct per (condition, eccentricity) cell."""
    by_id = {s.id: s for s in specs}
    table: dict[tuple[str, float], dict] = {}
    for r in records:
        spec = by_id.get(r.trial_id)
        if spec is None:
            raise KeyError(f"record for unknown trial {r.trial_id!r}")
        cell = table.setdefault((spec.condition, spec.eccentricity_deg),
                                {"k": 0, "n": 0})
        cell["n"] += 1
        cell["k"] += int(r.correct)
    for cell in table.values():
        cell["p"] = cell["k"] / cell["n"]
    return table


def table_to_csv(table: dict) -> str:
    lines = ["condition,eccentricity_deg,k,n,p"]
    for (cond, ecc), cell in sorted(table.items()):
        lines.append(f"{cond},{ecc!r},{cell['k']},{cell['n']},{cell['p']!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Simulated observer
# ---------------------------------------------------------------------------

class SimulatedObserver:
    """Desk-scale stand-in for a human: blur rises with eccentricity.

    Each stimulus is reduced to the Gaussian-pyramid level
    ``clamp(round(ecc / 10), 0, 4)`` (clamped further by image size), a
    testing convention rather than a vision-science claim. Oddity answers
    with the interval farthest from the other two in blurred pixel distance;
    matching answers with the candidate closer to the blurred template.
    Seeded Gaussian noise on the decision scores produces graded errors;
    infinite noise yields uniform guessing. Deterministic per (seed, trial).
    """

    def __init__(self, sset: StimulusSet, noise: float = 0.0, seed: int = 0,
                 loader=load_png):
        self.sset = sset
        self.noise = noise
        self.seed = seed
        self.loader = loader
        self._cache: dict = {}

    def blur_level(self, ecc_deg: float, shape: tuple[int, int]) -> int:
        max_level = 0
        side = min(shape)
        while side / 2 ** (max_level + 1) >= 4 and max_level < 4:
            max_level += 1
        return min(max(round(ecc_deg / 10.0), 0), max_level)

    def _blurred(self, ref: StimulusRef, level: int) -> np.ndarray:
        key = (ref, level)
        if key not in self._cache:
            entry = self.sset.get(ref.class_name, ref.image_id, ref.family,
                                  ref.seed)
            if entry is None:
                raise KeyError(f"stimulus not in set: {ref}")
            img = to_grayscale(self.loader(entry.path))
            self._cache[key] = gaussian_pyramid(img, level + 1).levels[level].data
        return self._cache[key]

    def respond(self, spec: TrialSpec) -> int:
        rng = np.random.default_rng((self.seed, int(spec.id.lstrip("t"))))
        if math.isinf(self.noise):
            return int(rng.integers(spec.n_choices))
        if spec.task == ODDITY:
            imgs = [self._blurred(ref, self.blur_level(
                spec.eccentricity_deg, self._shape(ref))) for ref in spec.stimuli]
            scores = np.zeros(3)
            for i in range(3):
                for j in range(3):
                    if i != j:
                        scores[i] += float(np.mean((imgs[i] - imgs[j]) ** 2))
            scores += self.noise * rng.standard_normal(3)
            return int(np.argmax(scores))
        template, left, right = spec.stimuli
        level = self.blur_level(spec.eccentricity_deg, self._shape(template))
        t = self._blurred(template, level)
        d = [float(np.mean((self._blurred(c, level) - t) ** 2))
             for c in (left, right)]
        d = np.array(d) + self.noise * rng.standard_normal(2)
        return int(np.argmin(d))

    def _shape(self, ref: StimulusRef) -> tuple[int, int]:
        key = (ref, "shape")
        if key not in self._cache:
            entry = self.sset.get(ref.class_name, ref.image_id, ref.family,
                                  ref.seed)
            img = self.loader(entry.path)
            self._cache[key] = (img.height, img.width)
        return self._cache[key]


def run_simulated_session(cfg: ExperimentConfig, sset: StimulusSet,
                          observer: SimulatedObserver) -> tuple[list[TrialSpec],
                                                                list[TrialRecord]]:
    """Generate a schedule and answer every trial with the observer."""
    specs = generate_trials(cfg, sset)
    records = []
    for spec in specs:
        resp = observer.respond(spec)
        records.append(TrialRecord(trial_id=spec.id, response_index=resp,
                                   correct=resp == spec.correct_index))
    return specs, records


class RandomObserver:
    """Uniform guessing; recovers the task's chance level."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def respond(self, spec: TrialSpec) -> int:
        rng = np.random.default_rng((self.seed, int(spec.id.lstrip("t"))))
        return int(rng.integers(spec.n_choices))
