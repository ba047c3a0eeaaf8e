"""Plain-text tables, CSV files and figures for CLI reports."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ablation import AblationTable  # noqa: E402
from .dataset import FAULT_CLASSES  # noqa: E402
from .detector import CLASS_COLORS  # noqa: E402
from .llm import CATEGORIES  # noqa: E402
from .metrics import EvalResult, pr_curve  # noqa: E402
from .tiler import AugmentManifest  # noqa: E402

FIG_DPI = 120


def _rgb(class_id: int) -> tuple[float, float, float]:
    return tuple(c / 255 for c in CLASS_COLORS[class_id])


def aligned(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def write_csv(path: Path, rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


# --- evaluation --------------------------------------------------------------------


def eval_rows(result: EvalResult) -> list[tuple[str, str]]:
    rows = [("metric", "value")]
    for name in ("precision", "recall", "f1", "accuracy", "map50"):
        rows.append((name, f"{getattr(result, name):.4f}"))
    for cls, ap in result.ap_per_class.items():
        rows.append((f"AP[{cls}]", f"{ap:.4f}"))
    for name in ("fcs", "aps"):
        v = getattr(result, name)
        if v is not None:
            rows.append((name, f"{v:.4f}"))
    return rows


def plot_pr_curves(images, path: Path, iou_threshold: float = 0.5) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    for fc in FAULT_CLASSES:
        recall, precision = pr_curve(images, fc.id, iou_threshold)
        if recall.size == 0:
            continue
        envelope = np.maximum.accumulate(precision[::-1])[::-1]
        ax.plot(recall, precision, ".", color=_rgb(fc.id), alpha=0.4)
        ax.step(recall, envelope, where="post", color=_rgb(fc.id), label=fc.canonical_name)
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(f"Precision-recall at IoU {iou_threshold:g}")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


# --- ablation ----------------------------------------------------------------------


def ablation_rows(table: AblationTable) -> list[tuple[str, ...]]:
    rows = [("configuration", *CATEGORIES, "aps", "images", "errors")]
    for r in table.rows:
        rows.append(
            (
                r.name,
                *("1" if p else "0" for p in r.presence()),
                "" if r.aps is None else f"{r.aps:.4f}",
                str(r.images),
                str(len(r.errors)),
            )
        )
    return rows


def plot_ablation(table: AblationTable, path: Path) -> None:
    names = [r.name for r in table.rows]
    scores = [r.aps or 0.0 for r in table.rows]
    presence = np.array([r.presence() for r in table.rows], dtype=float)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.8), gridspec_kw={"width_ratios": [3, 2]})
    y = np.arange(len(names))
    ax1.barh(y, scores, color="#4c72b0")
    ax1.set_yticks(y, names, fontsize=8)
    ax1.invert_yaxis()
    ax1.set_xlim(0, 1)
    ax1.set_xlabel("APS")
    for yi, s in zip(y, scores):
        ax1.text(s + 0.01, yi, f"{s:.2f}", va="center", fontsize=8)
    ax2.imshow(presence, cmap="Greens", vmin=0, vmax=1, aspect="auto")
    ax2.set_xticks(range(len(CATEGORIES)), CATEGORIES, fontsize=8)
    ax2.set_yticks(y, [""] * len(names))
    for (i, j), v in np.ndenumerate(presence):
        ax2.text(j, i, "yes" if v else "-", ha="center", va="center", fontsize=8)
    ax2.set_title("output categories", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


# --- augmentation ------------------------------------------------------------------


def augment_rows(manifest: AugmentManifest) -> list[tuple[str, ...]]:
    rows = [("class", "annotations_in", "annotations_out", "growth")]
    growth = manifest.class_growth()
    for name, n_in in manifest.annotations_in.items():
        g = growth.get(name)
        rows.append((name, str(n_in), str(manifest.annotations_out.get(name, 0)), "" if g is None else f"{g:.2f}"))
    rows.append(("images", str(manifest.images_in), str(manifest.images_out), f"{manifest.expansion_factor:.2f}"))
    return rows


def plot_class_counts(manifest: AugmentManifest, path: Path) -> None:
    names = list(manifest.annotations_in)
    before = [manifest.annotations_in[n] for n in names]
    after = [manifest.annotations_out.get(n, 0) for n in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, before, width=0.4, label="before", color="#999999")
    ax.bar(x + 0.2, after, width=0.4, label="after", color="#4c72b0")
    ax.set_xticks(x, names, fontsize=8)
    ax.set_ylabel("annotations")
    ax.set_title(f"Tiling expansion x{manifest.expansion_factor:.1f} ({manifest.images_in} -> {manifest.images_out} images)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
