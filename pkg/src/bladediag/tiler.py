"""Multi-scale sliding-window cropping with annotation remapping.

Window size at scale ``k`` is ``round(W_B * r**k)`` (half rounds up), the
stride is ``floor(W_k * o)`` clamped to at least one pixel, and each axis
gets ``floor((extent - W_k) / s) + 1`` windows plus an optional edge-aligned
one covering any leftover margin.
"""

from __future__ import annotations

import json
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .dataset import (
    FAULT_CLASSES,
    LABEL_SUFFIX,
    Annotation,
    BBox,
    ImageRecord,
    write_label_file,
)
from .errors import DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TilingConfig:
    base_width: int = 640
    base_height: int = 640
    scale_factor: float = 0.5
    scale_count: int = 2
    overlap_ratio: float = 0.25
    min_visibility: float = 0.3
    edge_clamp: bool = True

    def __post_init__(self) -> None:
        if self.base_width < 1 or self.base_height < 1:
            raise DomainError("base window must be at least 1x1")
        if not self.scale_factor > 0:
            raise DomainError(f"scale_factor must be positive, got {self.scale_factor}")
        if self.scale_count < 1:
            raise DomainError(f"scale_count must be >= 1, got {self.scale_count}")
        if not 0 < self.overlap_ratio < 1:
            raise DomainError(f"overlap_ratio must lie in (0, 1), got {self.overlap_ratio}")
        if not 0 < self.min_visibility <= 1:
            raise DomainError(f"min_visibility must lie in (0, 1], got {self.min_visibility}")


@dataclass(frozen=True)
class CropWindow:
    scale_index: int
    origin_x: int
    origin_y: int
    width: int
    height: int

    @property
    def box(self) -> BBox:
        return BBox(self.origin_x, self.origin_y, self.origin_x + self.width, self.origin_y + self.height)


@dataclass
class CropResult:
    window: CropWindow
    image: np.ndarray
    annotations: list[Annotation]
    provenance: Path


def _exact(x: float) -> Fraction:
    # decimal reading of the user's number, so 0.7 * 10 is 7 and not 7.000000000000001
    return Fraction(str(x))


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def window_size(config: TilingConfig, k: int) -> tuple[int, int]:
    if not 0 <= k < config.scale_count:
        raise DomainError(f"scale index {k} outside 0..{config.scale_count - 1}")
    factor = _exact(config.scale_factor) ** k
    w = _round_half_up(config.base_width * factor)
    h = _round_half_up(config.base_height * factor)
    if w < 1 or h < 1:
        raise DomainError(f"window at scale {k} rounds to {w}x{h}")
    return w, h


def stride(window: int, overlap_ratio: float) -> int:
    return max(1, math.floor(window * _exact(overlap_ratio)))


def axis_positions(extent: int, window: int, step: int, edge_clamp: bool = True) -> list[int]:
    if window > extent:
        raise DomainError(f"window {window} larger than extent {extent}")
    n = (extent - window) // step + 1
    origins = [i * step for i in range(n)]
    if edge_clamp and origins[-1] + window < extent:
        origins.append(extent - window)
    return origins


def generate_windows(image: ImageRecord, config: TilingConfig) -> list[CropWindow]:
    """All crop windows for ``image``: ascending scale, then row-major."""
    windows = []
    for k in range(config.scale_count):
        try:
            w, h = window_size(config, k)
        except DomainError:
            continue
        if w > image.width or h > image.height:
            continue
        xs = axis_positions(image.width, w, stride(w, config.overlap_ratio), config.edge_clamp)
        ys = axis_positions(image.height, h, stride(h, config.overlap_ratio), config.edge_clamp)
        windows.extend(CropWindow(k, x, y, w, h) for y in ys for x in xs)
    return windows


def remap_annotations(annotations: Sequence[Annotation], window: CropWindow, min_visibility: float) -> list[Annotation]:
    """Clip annotations to ``window`` and express them in its coordinates.

    A box survives when at least ``min_visibility`` of its area falls inside
    the window.
    """
    wx1, wy1 = window.origin_x, window.origin_y
    wx2, wy2 = wx1 + window.width, wy1 + window.height
    kept = []
    for ann in annotations:
        b = ann.box
        ix1, iy1 = max(b.x1, wx1), max(b.y1, wy1)
        ix2, iy2 = min(b.x2, wx2), min(b.y2, wy2)
        if ix2 <= ix1 or iy2 <= iy1:
            continue
        if (ix2 - ix1) * (iy2 - iy1) / b.area < min_visibility:
            continue
        kept.append(Annotation(ann.class_id, BBox(ix1 - wx1, iy1 - wy1, ix2 - wx1, iy2 - wy1)))
    return kept


def crop(image: ImageRecord, pixels: np.ndarray, window: CropWindow, min_visibility: float) -> CropResult:
    x, y = window.origin_x, window.origin_y
    buf = pixels[y : y + window.height, x : x + window.width]
    return CropResult(window, buf, remap_annotations(image.annotations, window, min_visibility), image.path)


def crop_name(stem: str, window: CropWindow) -> str:
    return f"{stem}_s{window.scale_index}_x{window.origin_x}_y{window.origin_y}.png"


@dataclass
class AugmentManifest:
    images_in: int = 0
    images_out: int = 0
    annotations_in: dict[str, int] = field(default_factory=dict)
    annotations_out: dict[str, int] = field(default_factory=dict)
    expansion_factor: float = 0.0
    crops: list[dict] = field(default_factory=list)
    unprocessed: list[str] = field(default_factory=list)

    def class_growth(self) -> dict[str, float]:
        return {
            name: self.annotations_out.get(name, 0) / n
            for name, n in self.annotations_in.items()
            if n > 0
        }

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class AugmentWriteError(OSError):
    """Writing a crop failed; ``partial_manifest`` names what was written."""

    def __init__(self, message: str, partial_manifest: Path | None):
        self.partial_manifest = partial_manifest
        note = f"; partial manifest at {partial_manifest}" if partial_manifest else ""
        super().__init__(f"{message}{note}")


def _class_counts(annotations) -> dict[str, int]:
    counts = {fc.canonical_name: 0 for fc in FAULT_CLASSES}
    for ann in annotations:
        counts[FAULT_CLASSES[ann.class_id].canonical_name] += 1
    return counts


def _tile_one(record: ImageRecord, config: TilingConfig, output_dir: Path, dry_run: bool) -> dict:
    windows = generate_windows(record, config)
    result: dict = {"source": record.path.name, "crops": [], "unprocessed": None, "written": []}
    if not windows:
        result["unprocessed"] = record.path.name
        result["counts"] = _class_counts(record.annotations)
        if not dry_run:
            dst = output_dir / record.path.name
            shutil.copyfile(record.path, dst)
            result["written"].append(dst)
            lbl = output_dir / (record.stem + LABEL_SUFFIX)
            lbl.write_text(write_label_file(record.annotations, record.width, record.height), encoding="utf-8")
            result["written"].append(lbl)
        return result

    counts = _class_counts(())
    pixels = None
    if not dry_run:
        with Image.open(record.path) as im:
            pixels = np.asarray(im.convert("RGB"))
    for win in windows:
        anns = remap_annotations(record.annotations, win, config.min_visibility)
        for ann in anns:
            counts[FAULT_CLASSES[ann.class_id].canonical_name] += 1
        name = crop_name(record.stem, win)
        result["crops"].append(
            {
                "file": name,
                "source": record.path.name,
                "scale": win.scale_index,
                "x": win.origin_x,
                "y": win.origin_y,
                "width": win.width,
                "height": win.height,
                "annotations": len(anns),
                "negative": not anns,
            }
        )
        if dry_run:
            continue
        x, y = win.origin_x, win.origin_y
        buf = pixels[y : y + win.height, x : x + win.width]
        img_path = output_dir / name
        Image.fromarray(buf).save(img_path, format="PNG")
        result["written"].append(img_path)
        lbl_path = img_path.with_suffix(LABEL_SUFFIX)
        lbl_path.write_text(write_label_file(anns, win.width, win.height), encoding="utf-8")
        result["written"].append(lbl_path)
    result["counts"] = counts
    return result


def augment_dataset(
    records: Sequence[ImageRecord],
    config: TilingConfig,
    output_dir: Path | None,
    *,
    parallelism: int = 1,
    dry_run: bool = False,
) -> AugmentManifest:
    """Tile every record into ``output_dir`` and summarise what was produced.

    Images too small for every scale are copied through with their labels.
    With ``dry_run`` nothing is written but the manifest is identical.
    """
    if not dry_run:
        if output_dir is None:
            raise DomainError("output_dir is required unless dry_run is set")
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

    manifest = AugmentManifest()
    if not records:
        return manifest

    try:
        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            # map() yields in submission order, so the manifest stays deterministic
            results = list(pool.map(lambda r: _tile_one(r, config, output_dir, dry_run), records))
    except OSError as exc:
        partial = None
        if output_dir is not None:
            written = sorted(str(p.name) for p in output_dir.iterdir())
            partial = output_dir / "manifest.partial.json"
            partial.write_text(json.dumps({"error": str(exc), "written": written}, indent=2), encoding="utf-8")
        raise AugmentWriteError(f"augmentation failed: {exc}", partial) from exc

    manifest.images_in = len(records)
    manifest.annotations_in = _class_counts(a for r in records for a in r.annotations)
    out_counts = _class_counts(())
    for res in results:
        manifest.crops.extend(res["crops"])
        if res["unprocessed"]:
            manifest.unprocessed.append(res["unprocessed"])
        for name, n in res["counts"].items():
            out_counts[name] += n
    manifest.annotations_out = out_counts
    manifest.images_out = len(manifest.crops) + len(manifest.unprocessed)
    manifest.expansion_factor = manifest.images_out / manifest.images_in
    log.info("augmented %d images into %d", manifest.images_in, manifest.images_out)
    return manifest
