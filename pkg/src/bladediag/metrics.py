"""Detection, text-consistency and report-quality metrics.

Detection accuracy uses TN = 0 by default: open-world detection has no
countable true negatives, so ``accuracy`` reduces to TP / (TP + FP + FN).
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import FAULT_CLASSES, Annotation, BBox, Detection, FaultClass, class_by_name, mentions
from .errors import DomainError


@dataclass
class MatchResult:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    # index of the matched ground truth per prediction (input order), or None
    assignment: list[int | None] = field(default_factory=list)

    def __add__(self, other: MatchResult) -> MatchResult:
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    accuracy: float
    ap_per_class: dict[str, float]
    map50: float
    fcs: float | None = None
    aps: float | None = None
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _ranked(preds: Sequence[Detection]) -> list[int]:
    # stable: equal confidences keep input order
    return sorted(range(len(preds)), key=lambda i: -preds[i].confidence)


def match_detections(preds: Sequence[Detection], gts: Sequence[Annotation], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy matching in descending confidence.

    Each prediction takes the unmatched same-class ground truth with the
    highest IoU, provided that IoU reaches ``iou_threshold``.
    """
    assignment: list[int | None] = [None] * len(preds)
    taken = [False] * len(gts)
    for i in _ranked(preds):
        p = preds[i]
        best, best_iou = None, iou_threshold
        for j, g in enumerate(gts):
            if taken[j] or g.class_id != p.class_id:
                continue
            v = iou(p.box, g.box)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            assignment[i] = best
    tp = sum(a is not None for a in assignment)
    return MatchResult(tp, len(preds) - tp, len(gts) - tp, 0, assignment)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def summary_metrics(m: MatchResult, *, count_tn: bool = True) -> tuple[float, float, float, float]:
    """(precision, recall, F1, accuracy); zero denominators give 0."""
    p = _ratio(m.tp, m.tp + m.fp)
    r = _ratio(m.tp, m.tp + m.fn)
    f1 = _ratio(2 * p * r, p + r)
    tn = m.tn if count_tn else 0
    acc = _ratio(m.tp + tn, m.tp + m.fp + m.fn + tn)
    return p, r, f1, acc


def ap_from_ranking(tp_flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP for predictions already sorted by confidence."""
    if n_gt <= 0:
        return 0.0
    flags = np.asarray(tp_flags, dtype=float)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = np.concatenate(([0.0], tp / n_gt, [1.0]))
    precision = np.concatenate(([1.0], tp / (tp + fp), [0.0]))
    # precision envelope, right to left
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.nonzero(recall[1:] != recall[:-1])[0]
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def _class_ranking(
    images: Iterable[tuple[Sequence[Detection], Sequence[Annotation]]], class_id: int, iou_threshold: float
) -> tuple[list[float], list[bool], int]:
    confs: list[float] = []
    flags: list[bool] = []
    n_gt = 0
    for preds, gts in images:
        cp = [d for d in preds if d.class_id == class_id]
        cg = [a for a in gts if a.class_id == class_id]
        n_gt += len(cg)
        m = match_detections(cp, cg, iou_threshold)
        confs.extend(d.confidence for d in cp)
        flags.extend(a is not None for a in m.assignment)
    return confs, flags, n_gt


def _pooled_ap(images, class_id: int, iou_threshold: float) -> tuple[float, int]:
    confs, flags, n_gt = _class_ranking(images, class_id, iou_threshold)
    order = sorted(range(len(confs)), key=lambda i: -confs[i])
    return ap_from_ranking([flags[i] for i in order], n_gt), n_gt


def average_precision(
    preds: Sequence[Detection], gts: Sequence[Annotation], class_id: int, iou_threshold: float = 0.5
) -> float:
    return _pooled_ap([(preds, gts)], class_id, iou_threshold)[0]


def mean_ap(
    preds: Sequence[Detection],
    gts: Sequence[Annotation],
    classes: Sequence[int] = tuple(range(len(FAULT_CLASSES))),
    iou_threshold: float = 0.5,
) -> float:
    return mean_ap_dataset([(preds, gts)], classes, iou_threshold)


def mean_ap_dataset(
    images: Sequence[tuple[Sequence[Detection], Sequence[Annotation]]],
    classes: Sequence[int] = tuple(range(len(FAULT_CLASSES))),
    iou_threshold: float = 0.5,
) -> float:
    aps = []
    for c in sorted(set(classes)):
        ap, n_gt = _pooled_ap(images, c, iou_threshold)
        if n_gt:
            aps.append(ap)
    if not aps:
        raise DomainError("no class in the evaluation has ground truth")
    return float(np.mean(aps))


def evaluate_dataset(
    images: Sequence[tuple[Sequence[Detection], Sequence[Annotation]]],
    iou_threshold: float = 0.5,
    *,
    count_tn: bool = True,
) -> EvalResult:
    """Pool matches over images; AP ranks every prediction of a class together."""
    total = MatchResult()
    for preds, gts in images:
        total = total + match_detections(preds, gts, iou_threshold)
    p, r, f1, acc = summary_metrics(total, count_tn=count_tn)
    per_class = {}
    for fc in FAULT_CLASSES:
        ap, n_gt = _pooled_ap(images, fc.id, iou_threshold)
        if n_gt:
            per_class[fc.canonical_name] = ap
    map50 = float(np.mean(list(per_class.values()))) if per_class else 0.0
    counts = {"tp": total.tp, "fp": total.fp, "fn": total.fn, "tn": total.tn}
    return EvalResult(p, r, f1, acc, per_class, map50, counts=counts)


def pr_curve(images, class_id: int, iou_threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Raw (recall, precision) points for one class, ranked by confidence."""
    confs, flags, n_gt = _class_ranking(images, class_id, iou_threshold)
    order = sorted(range(len(confs)), key=lambda i: -confs[i])
    f = np.asarray([flags[i] for i in order], dtype=float)
    if f.size == 0 or n_gt == 0:
        return np.zeros(0), np.zeros(0)
    tp = np.cumsum(f)
    return tp / n_gt, tp / np.arange(1, f.size + 1)


# --- text metrics --------------------------------------------------------------


def fcs(report_text: str, detected_classes: Iterable[FaultClass | str]) -> float:
    """Share of detected fault classes the text mentions (any synonym, whole word)."""
    classes = {c if isinstance(c, FaultClass) else class_by_name(c) for c in detected_classes}
    if not classes:
        raise DomainError("fault consistency is undefined with no detected classes")
    hit = sum(mentions(report_text or "", c) for c in classes)
    return hit / len(classes)


@dataclass(frozen=True)
class KeywordSpec:
    keywords: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        clean = {}
        for name, words in self.keywords.items():
            canonical = class_by_name(name).canonical_name
            words = tuple(words)
            if not words:
                raise DomainError(f"keyword list for {name!r} is empty")
            clean[canonical] = words
        object.__setattr__(self, "keywords", clean)

    @classmethod
    def load(cls, path: Path) -> KeywordSpec:
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    @classmethod
    def default(cls) -> KeywordSpec:
        from importlib import resources

        text = resources.files("bladediag").joinpath("data", "keywords.json").read_text(encoding="utf-8")
        return cls(json.loads(text))

    def expected(self, classes: Iterable[str]) -> list[str]:
        seen: dict[str, None] = {}
        for c in classes:
            for w in self.keywords.get(class_by_name(c).canonical_name, ()):
                seen.setdefault(w.lower(), None)
        return list(seen)


def _keyword_present(keyword: str, text: str) -> bool:
    pat = re.escape(keyword).replace(r"\ ", r"\s+")
    return re.search(rf"(?<![A-Za-z]){pat}(?![A-Za-z])", text, re.IGNORECASE) is not None


def keyword_coverage(text: str, keywords: Sequence[str]) -> float:
    if not keywords:
        raise DomainError("no keywords to score against")
    return sum(_keyword_present(k, text) for k in keywords) / len(keywords)


@dataclass
class ApsResult:
    score: float
    per_report: list[float | None]
    skipped: list[int]


def aps(reports: Sequence[tuple[object, Iterable[str]]], spec: KeywordSpec) -> ApsResult:
    """Mean keyword coverage over (report, expected classes) pairs.

    A report is a :class:`DiagnosticReport` (all sections are searched) or a
    plain string. Pairs whose expected keyword set is empty are skipped and
    listed in ``skipped``.
    """
    per: list[float | None] = []
    skipped = []
    for i, (report, expected_classes) in enumerate(reports):
        keywords = spec.expected(expected_classes)
        if not keywords:
            per.append(None)
            skipped.append(i)
            continue
        text = report if isinstance(report, str) else report.section_text()
        per.append(keyword_coverage(text, keywords))
    scored = [s for s in per if s is not None]
    return ApsResult(float(np.mean(scored)) if scored else 0.0, per, skipped)
