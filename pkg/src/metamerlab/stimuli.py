"""Stimulus-set layout, ingestion, and validation.

On disk a stimulus set is::

    root/
      <class>/
        <image_id>/
          original.png
          standard_seed0.png  standard_seed1.png ...
          robust_seed0.png    robust_seed1.png   ...
          texform_seed0.png   texform_seed1.png  ...

Robust and standard stimuli are typically synthesized elsewhere and dropped
into this layout; texforms can be produced here. Ingestion validates the
layout, reports missing originals and malformed files item by item, and
returns whatever parses (a partial set is still usable).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYNTH_FAMILIES = ("standard", "robust", "texform")
_SEED_RE = re.compile(r"^(standard|robust|texform)_seed(\d+)\.png$")


@dataclass(frozen=True)
class StimulusEntry:
    class_name: str
    image_id: str
    family: str                 # "original" or one of SYNTH_FAMILIES
    seed: int | None            # None for originals
    path: Path

    @property
    def key(self) -> tuple:
        return (self.class_name, self.image_id, self.family, self.seed)


@dataclass
class IngestionReport:
    missing_originals: list[tuple[str, str]] = field(default_factory=list)
    malformed: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.missing_originals and not self.malformed


@dataclass
class StimulusSet:
    entries: list[StimulusEntry]
    root: Path | None = None
    report: IngestionReport = field(default_factory=IngestionReport)
    _index: dict = field(default_factory=dict, repr=False)
    _hashes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {e.key: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, class_name: str, image_id: str, family: str,
            seed: int | None = None) -> StimulusEntry | None:
        return self._index.get((class_name, image_id, family, seed))

    def classes(self) -> list[str]:
        return sorted({e.class_name for e in self.entries})

    def image_ids(self, class_name: str | None = None) -> list[tuple[str, str]]:
        return sorted({(e.class_name, e.image_id) for e in self.entries
                       if class_name is None or e.class_name == class_name})

    def seeds(self, class_name: str, image_id: str, family: str) -> list[int]:
        return sorted(e.seed for e in self.entries
                      if e.class_name == class_name and e.image_id == image_id
                      and e.family == family and e.seed is not None)

    def families(self) -> list[str]:
        return sorted({e.family for e in self.entries if e.family != "original"})

    def content_hash(self, entry: StimulusEntry) -> str:
        h = self._hashes.get(entry.key)
        if h is None:
            h = hashlib.sha256(Path(entry.path).read_bytes()).hexdigest()
            self._hashes[entry.key] = h
        return h

    def manifest(self) -> dict:
        per_class: dict[str, int] = {}
        seeds: set[int] = set()
        families: set[str] = set()
        for e in self.entries:
            if e.family == "original":
                per_class[e.class_name] = per_class.get(e.class_name, 0) + 1
            else:
                families.add(e.family)
                if e.seed is not None:
                    seeds.add(e.seed)
        return {
            "classes": len(self.classes()),
            "images_per_class": dict(sorted(per_class.items())),
            "seeds": sorted(seeds),
            "families": sorted(families),
            "total_files": len(self.entries),
            "missing_originals": [list(t) for t in self.report.missing_originals],
            "malformed": list(self.report.malformed),
        }

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))


def ingest_stimulus_set(root: str | Path) -> StimulusSet:
    """Walk the stimulus layout under ``root`` and validate it.

    An empty or missing directory yields an empty set. Files that do not fit
    the naming scheme are itemized in the report, never fatal.
    """
    root = Path(root)
    entries: list[StimulusEntry] = []
    report = IngestionReport()
    if not root.is_dir():
        return StimulusSet(entries, root=root, report=report)
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for image_dir in sorted(p for p in class_dir.iterdir() if p.is_dir()):
            files = sorted(p for p in image_dir.iterdir() if p.is_file())
            saw_original = False
            saw_synth = False
            for f in files:
                if f.name == "original.png":
                    saw_original = True
                    entries.append(StimulusEntry(class_dir.name, image_dir.name,
                                                 "original", None, f))
                    continue
                m = _SEED_RE.match(f.name)
                if m:
                    saw_synth = True
                    entries.append(StimulusEntry(class_dir.name, image_dir.name,
                                                 m.group(1), int(m.group(2)), f))
                else:
                    report.malformed.append(str(f.relative_to(root)))
            if saw_synth and not saw_original:
                report.missing_originals.append((class_dir.name, image_dir.name))
    return StimulusSet(entries, root=root, report=report)


def scan_for_duplicates(sset: StimulusSet) -> dict:
    """Exact-duplicate scan across seeds of each (class, image, family).

    Flags image ids whose different-seed outputs are byte-identical (the
    synthesis collapsed onto one attractor); these are excluded from
    analysis.
    """
    flagged: list[dict] = []
    total = 0
    involved = 0
    for class_name, image_id in sset.image_ids():
        for family in SYNTH_FAMILIES:
            seeds = sset.seeds(class_name, image_id, family)
            if len(seeds) < 2:
                total += len(seeds)
                continue
            arrays = []
            for s in seeds:
                entry = sset.get(class_name, image_id, family, s)
                arrays.append(np.frombuffer(Path(entry.path).read_bytes(),
                                            dtype=np.uint8))
            total += len(seeds)
            digests = {}
            for s, a in zip(seeds, arrays):
                digests.setdefault(a.tobytes(), []).append(s)
            dupes = [v for v in digests.values() if len(v) > 1]
            if dupes:
                count = sum(len(v) for v in dupes)
                involved += count
                flagged.append({"class": class_name, "image_id": image_id,
                                "family": family,
                                "seeds": sorted(s for v in dupes for s in v)})
    rate = involved / total if total else 0.0
    return {"flagged": flagged, "stimuli_scanned": total,
            "stimuli_involved": involved, "rate": rate,
            "percent_label": f"{round(100 * rate)}%"}
