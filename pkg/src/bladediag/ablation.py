"""Run the pipeline under the four component ablations and score each."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .dataset import FAULT_CLASSES, ImageRecord
from .detector import ProviderConfig
from .kvmap import KvConfig
from .llm import CATEGORIES, StageConfig, Transport, run_pipeline, utc_clock
from .metrics import KeywordSpec, aps

# (name, detector, analysis stage, advice stage), in reporting order
ABLATIONS: tuple[tuple[str, bool, bool, bool], ...] = (
    ("detector+advice", True, False, True),
    ("detector+analysis", True, True, False),
    ("analysis+advice", False, True, True),
    ("detector+analysis+advice", True, True, True),
)

# expected presence of (detection, analysis, advice) for each row above
EXPECTED_MATRIX: dict[str, tuple[bool, bool, bool]] = {
    "detector+advice": (True, False, True),
    "detector+analysis": (True, True, False),
    "analysis+advice": (False, True, True),
    "detector+analysis+advice": (True, True, True),
}


@dataclass
class AblationRow:
    name: str
    detector: bool
    analysis_stage: bool
    advice_stage: bool
    aps: float | None = None
    # category -> present in every successful image
    categories: dict[str, bool] = field(default_factory=dict)
    images: int = 0
    errors: list[str] = field(default_factory=list)

    def presence(self) -> tuple[bool, ...]:
        return tuple(self.categories.get(c, False) for c in CATEGORIES)


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)

    def matrix(self) -> dict[str, tuple[bool, ...]]:
        return {r.name: r.presence() for r in self.rows}

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "name": r.name,
                    "components": {"detector": r.detector, "analysis": r.analysis_stage, "advice": r.advice_stage},
                    "aps": r.aps,
                    "categories": r.categories,
                    "images": r.images,
                    "errors": r.errors,
                }
                for r in self.rows
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        head = ("configuration", "detection", "analysis", "advice", "APS")
        lines = [head]
        for r in self.rows:
            marks = ["yes" if p else "-" for p in r.presence()]
            lines.append((r.name, *marks, "n/a" if r.aps is None else f"{r.aps:.3f}"))
        widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines)


def _run_config(
    name: str,
    flags: tuple[bool, bool, bool],
    dataset: Sequence[ImageRecord],
    detector: ProviderConfig,
    base: StageConfig,
    transport: Transport,
    spec: KeywordSpec,
    kv_config: KvConfig,
    clock: Callable[[], str],
) -> AblationRow:
    det, s1, s2 = flags
    row = AblationRow(name, det, s1, s2)
    stages = replace(base, enable_detector=det, enable_stage1=s1, enable_stage2=s2)
    scored = []
    presence = {c: True for c in CATEGORIES}
    for record in dataset:
        try:
            result = run_pipeline(record, detector, stages, transport, kv_config=kv_config, clock=clock)
        except Exception as exc:  # one failed cell must not sink the table
            row.errors.append(f"{record.path.name}: {exc}")
            continue
        row.images += 1
        for c in CATEGORIES:
            presence[c] = presence[c] and result.categories[c]
        expected = sorted({FAULT_CLASSES[a.class_id].canonical_name for a in record.annotations})
        scored.append((result.report, expected))
    if row.images:
        row.categories = presence
        row.aps = aps(scored, spec).score
    return row


def run_ablation(
    dataset: Sequence[ImageRecord],
    detector: ProviderConfig,
    transport: Transport,
    *,
    stages: StageConfig = StageConfig(),
    spec: KeywordSpec | None = None,
    kv_config: KvConfig = KvConfig(),
    parallelism: int = 1,
    clock: Callable[[], str] = utc_clock,
) -> AblationTable:
    if not dataset:
        return AblationTable()
    spec = spec or KeywordSpec.default()
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        rows = list(
            pool.map(
                lambda a: _run_config(a[0], a[1:], dataset, detector, stages, transport, spec, kv_config, clock),
                ABLATIONS,
            )
        )
    return AblationTable(rows)
