"""Key-value mapping from detection sets to structured fault text.

Fault classes are the keys; each value carries the class's count, its share
of all detections, a frequency-band quantifier and a large-area flag.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .dataset import FAULT_CLASSES, BBox, FaultClass
from .detector import DetectionSet
from .errors import DomainError

NO_FAULTS_TEXT = "No faults detected."
QUANTIFIER_WORDS = ("few", "some", "over half", "almost all")


@dataclass(frozen=True)
class KvConfig:
    area_threshold_fraction: float = 0.05
    # upper-open band edges: (0.2, 0.4] few, (0.4, 0.5] some, (0.5, 0.8] over half, > 0.8 almost all
    thresholds: tuple[float, float, float, float] = (0.2, 0.4, 0.5, 0.8)

    def __post_init__(self) -> None:
        t = tuple(self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if len(t) != 4:
            raise DomainError("exactly four quantifier thresholds are required")
        if not (0 < t[0] < t[1] < t[2] < t[3] <= 1):
            raise DomainError(f"thresholds must be strictly increasing in (0, 1], got {t}")
        if not self.area_threshold_fraction > 0:
            raise DomainError("area_threshold_fraction must be positive")


@dataclass(frozen=True)
class FaultEntry:
    class_id: int
    count: int
    frequency: float
    quantifier: str | None
    large_area: bool
    max_box_area: float


@dataclass(frozen=True)
class FaultSummary:
    total: int = 0
    entries: tuple[FaultEntry, ...] = field(default_factory=tuple)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def class_frequencies(dset: DetectionSet) -> dict[int, tuple[int, float]]:
    counts = Counter(d.class_id for d in dset.detections)
    total = sum(counts.values())
    return {cls: (n, n / total) for cls, n in sorted(counts.items())}


def quantifier(f: float, config: KvConfig = KvConfig()) -> str | None:
    if not 0.0 <= f <= 1.0:
        raise DomainError(f"frequency {f} outside [0, 1]")
    t1, t2, t3, t4 = config.thresholds
    if f <= t1:
        return None
    if f <= t2:
        return "few"
    if f <= t3:
        return "some"
    if f <= t4:
        return "over half"
    return "almost all"


def box_area(box: BBox) -> float:
    return abs(box.x2 - box.x1) * abs(box.y2 - box.y1)


def summarize(dset: DetectionSet, image_area: float, config: KvConfig = KvConfig()) -> FaultSummary:
    if not image_area > 0:
        raise DomainError("image_area must be positive")
    freqs = class_frequencies(dset)
    if not freqs:
        return FaultSummary()
    max_area: dict[int, float] = {}
    for d in dset.detections:
        max_area[d.class_id] = max(max_area.get(d.class_id, 0.0), box_area(d.box))
    area_threshold = config.area_threshold_fraction * image_area
    entries = [
        FaultEntry(cls, n, f, quantifier(f, config), max_area[cls] > area_threshold, max_area[cls])
        for cls, (n, f) in freqs.items()
    ]
    entries.sort(key=lambda e: (-e.frequency, e.class_id))
    return FaultSummary(sum(n for n, _ in freqs.values()), tuple(entries))


def render_text(summary: FaultSummary, class_table: Sequence[FaultClass] = FAULT_CLASSES) -> str:
    if not summary.entries:
        return NO_FAULTS_TEXT
    names = {fc.id: fc.canonical_name for fc in class_table}
    parts = []
    for e in summary.entries:
        prefix = f"{e.quantifier} " if e.quantifier else ""
        suffix = ", large-area" if e.large_area else ""
        parts.append(f"{prefix}{names[e.class_id]} ({e.count} of {summary.total}{suffix})")
    return "Detected faults: " + ", ".join(parts) + "."


def map_detections(dset: DetectionSet, config: KvConfig = KvConfig()) -> tuple[FaultSummary, str]:
    """Summarise ``dset`` against its own image area and render the text."""
    summary = summarize(dset, dset.image.area, config)
    return summary, render_text(summary)
