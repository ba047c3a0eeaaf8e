"""Fault taxonomy, annotation types and on-disk dataset formats.

Label files hold one annotation per line in the normalized
``class cx cy w h`` convention; prediction files append a confidence
column. Boxes are held in pixel space as corner coordinates.
"""

from __future__ import annotations

import filecmp
import json
import re
import shutil
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import DomainError, IntegrityError, LabelParseError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
LABEL_SUFFIX = ".txt"

# Normalized overshoot tolerated when converting centre/size to corners;
# six-decimal label files can land a hair outside [0, 1].
_EDGE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FaultClass:
    id: int
    canonical_name: str
    synonyms: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.synonyms or self.canonical_name not in self.synonyms:
            raise DomainError(f"synonyms of {self.canonical_name!r} must include the canonical name")


FAULT_CLASSES: tuple[FaultClass, ...] = (
    FaultClass(0, "crack", ("crack", "cracks", "cracking", "cracked")),
    FaultClass(
        1,
        "skin debonding",
        ("skin debonding", "debonding", "debonded", "skin peeling", "delamination"),
    ),
    FaultClass(
        2,
        "surface blemish",
        ("surface blemish", "surface blemishes", "blemish", "blemishes"),
    ),
    FaultClass(
        3,
        "pitted surface",
        ("pitted surface", "pitted surfaces", "surface pitting", "pitting", "pitted", "pits"),
    ),
)
NUM_CLASSES = len(FAULT_CLASSES)
UNKNOWN_FAULT = "unknown"


def class_by_id(class_id: int) -> FaultClass:
    if not 0 <= class_id < NUM_CLASSES:
        raise DomainError(f"class id {class_id} outside 0..{NUM_CLASSES - 1}")
    return FAULT_CLASSES[class_id]


def class_by_name(name: str) -> FaultClass:
    """Resolve a canonical name or synonym (case-insensitive)."""
    key = name.strip().lower()
    for fc in FAULT_CLASSES:
        if key in fc.synonyms:
            return fc
    raise DomainError(f"unknown fault class name {name!r}")


@lru_cache(maxsize=None)
def _synonym_pattern(fc: FaultClass) -> re.Pattern[str]:
    # longest first so "surface blemishes" wins over "surface blemish"
    alts = sorted(fc.synonyms, key=len, reverse=True)
    body = "|".join(re.escape(s).replace(r"\ ", r"\s+") for s in alts)
    return re.compile(rf"(?<![A-Za-z])(?:{body})(?![A-Za-z])", re.IGNORECASE)


def mentions(text: str, fc: FaultClass) -> bool:
    """True when any synonym of ``fc`` occurs in ``text`` as a whole word."""
    return _synonym_pattern(fc).search(text) is not None


def find_classes(text: str, table: Sequence[FaultClass] = FAULT_CLASSES) -> list[FaultClass]:
    """Fault classes mentioned in ``text``, ordered by class id."""
    return [fc for fc in table if mentions(text, fc)]


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if min(self.x1, self.y1, self.x2, self.y2) < 0:
            raise DomainError(f"negative coordinate in {self}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DomainError(f"degenerate or inverted box {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return abs(self.x2 - self.x1) * abs(self.y2 - self.y1)

    def within(self, width: float, height: float, tol: float = 1e-9) -> bool:
        return self.x2 <= width + tol and self.y2 <= height + tol

    def translate(self, dx: float, dy: float) -> BBox:
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: BBox

    def __post_init__(self) -> None:
        class_by_id(self.class_id)


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: BBox
    confidence: float

    def __post_init__(self) -> None:
        class_by_id(self.class_id)
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class ImageRecord:
    path: Path
    width: int
    height: int
    annotations: list[Annotation] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.path = Path(self.path)
        if self.width < 1 or self.height < 1:
            raise DomainError(f"image dimensions must be >= 1, got {self.width}x{self.height}")
        for ann in self.annotations:
            if not ann.box.within(self.width, self.height):
                raise DomainError(f"annotation {ann} exceeds {self.width}x{self.height}")

    @property
    def stem(self) -> str:
        return self.path.stem

    @property
    def area(self) -> int:
        return self.width * self.height


# --- label files -----------------------------------------------------------


def _to_box(cx: float, cy: float, w: float, h: float, width: int, height: int, line_no: int) -> BBox:
    for name, v in (("cx", cx), ("cy", cy), ("w", w), ("h", h)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"line {line_no}: {name}={v} outside [0, 1]")
    if w <= 0 or h <= 0:
        raise DomainError(f"line {line_no}: zero-area box")
    nx1, ny1, nx2, ny2 = cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2
    if nx1 < -_EDGE_TOLERANCE or ny1 < -_EDGE_TOLERANCE or nx2 > 1 + _EDGE_TOLERANCE or ny2 > 1 + _EDGE_TOLERANCE:
        raise DomainError(f"line {line_no}: box extends outside the image")
    nx1, ny1 = max(nx1, 0.0), max(ny1, 0.0)
    nx2, ny2 = min(nx2, 1.0), min(ny2, 1.0)
    return BBox(nx1 * width, ny1 * height, nx2 * width, ny2 * height)


def _parse_lines(text: str, width: int, height: int, n_fields: int, default_conf: float | None):
    if width < 1 or height < 1:
        raise DomainError(f"image dimensions must be >= 1, got {width}x{height}")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != n_fields and not (default_conf is not None and len(parts) == n_fields - 1):
            raise LabelParseError(line_no, f"expected {n_fields} fields, got {len(parts)}")
        try:
            cls_f = float(parts[0])
            values = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise LabelParseError(line_no, str(exc)) from None
        if not cls_f.is_integer():
            raise LabelParseError(line_no, f"class id {parts[0]!r} is not an integer")
        cls = int(cls_f)
        if not 0 <= cls < NUM_CLASSES:
            raise DomainError(f"line {line_no}: class id {cls} outside 0..{NUM_CLASSES - 1}")
        box = _to_box(*values[:4], width, height, line_no)
        conf = values[4] if len(values) > 4 else default_conf
        yield line_no, cls, box, conf


def parse_label_file(text: str, width: int, height: int) -> list[Annotation]:
    """Parse normalized ``class cx cy w h`` lines into pixel-space annotations."""
    return [Annotation(cls, box) for _, cls, box, _ in _parse_lines(text, width, height, 5, None)]


def parse_prediction_file(
    text: str, width: int, height: int, default_confidence: float | None = None
) -> list[Detection]:
    """Parse ``class cx cy w h conf`` lines.

    When ``default_confidence`` is given, five-field label lines are also
    accepted and receive that confidence; this lets a ground-truth directory
    double as a prediction directory.
    """
    out = []
    for line_no, cls, box, conf in _parse_lines(text, width, height, 6, default_confidence):
        if not 0.0 <= conf <= 1.0:
            raise DomainError(f"line {line_no}: confidence {conf} outside [0, 1]")
        out.append(Detection(cls, box, conf))
    return out


def _normalized_fields(box: BBox, width: int, height: int) -> tuple[float, float, float, float]:
    if not box.within(width, height):
        raise DomainError(f"box {box} outside {width}x{height}")
    return (
        (box.x1 + box.x2) / 2 / width,
        (box.y1 + box.y2) / 2 / height,
        box.width / width,
        box.height / height,
    )


def write_label_file(annotations: Iterable[Annotation], width: int, height: int) -> str:
    lines = []
    for ann in annotations:
        cx, cy, w, h = _normalized_fields(ann.box, width, height)
        lines.append(f"{ann.class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}")
    return "".join(line + "\n" for line in lines)


def write_prediction_file(detections: Iterable[Detection], width: int, height: int) -> str:
    lines = []
    for det in detections:
        cx, cy, w, h = _normalized_fields(det.box, width, height)
        lines.append(f"{det.class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f} {det.confidence:.6f}")
    return "".join(line + "\n" for line in lines)


# --- images and directories -------------------------------------------------


def is_image(path: Path) -> bool:
    return path.suffix.lower() in IMAGE_SUFFIXES


def image_size(path: Path) -> tuple[int, int]:
    """(width, height) of a PNG/JPEG; undecodable files raise IntegrityError."""
    try:
        with Image.open(path) as im:
            im.verify()
        with Image.open(path) as im:
            return im.size
    except (OSError, SyntaxError, ValueError) as exc:
        raise IntegrityError(f"cannot decode image {path}: {exc}") from exc


def load_pixels(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_png(pixels: np.ndarray, path: Path) -> None:
    Image.fromarray(pixels).save(path, format="PNG")


def load_record(image_path: Path, label_path: Path | None = None) -> ImageRecord:
    image_path = Path(image_path)
    width, height = image_size(image_path)
    if label_path is None:
        label_path = image_path.with_suffix(LABEL_SUFFIX)
    anns: list[Annotation] = []
    if label_path.exists():
        anns = parse_label_file(label_path.read_text(encoding="utf-8"), width, height)
    return ImageRecord(image_path, width, height, anns)


def scan_pairs(directory: Path) -> tuple[dict[str, Path], dict[str, Path]]:
    """Images and label files in ``directory`` keyed by stem, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"not a readable directory: {directory}")
    images: dict[str, Path] = {}
    labels: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if not p.is_file():
            continue
        if is_image(p):
            images.setdefault(p.stem, p)
        elif p.suffix == LABEL_SUFFIX:
            labels[p.stem] = p
    return images, labels


def load_dataset(directory: Path) -> list[ImageRecord]:
    """Every image in ``directory`` with its sibling labels (none if absent)."""
    images, labels = scan_pairs(directory)
    return [load_record(path, labels.get(stem, path.with_suffix(LABEL_SUFFIX))) for stem, path in images.items()]


@dataclass
class IntegrityReport:
    pairs: list[str] = field(default_factory=list)
    missing_labels: list[str] = field(default_factory=list)
    missing_images: list[str] = field(default_factory=list)
    undecodable: list[str] = field(default_factory=list)
    copied: list[str] = field(default_factory=list)
    pairs_copied: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def validate_and_replenish(source_dir: Path, target_dir: Path) -> IntegrityReport:
    """Check image/label pairing in ``source_dir`` and fill gaps in ``target_dir``.

    Every decodable image that has a label is copied to ``target_dir`` together
    with the label unless an identical file is already there. A differing file
    with the same name raises :class:`IntegrityError` before anything is
    copied. Nothing is ever deleted.
    """
    source_dir, target_dir = Path(source_dir), Path(target_dir)
    images, labels = scan_pairs(source_dir)
    report = IntegrityReport()
    report.missing_labels = sorted(images[s].name for s in images.keys() - labels.keys())
    report.missing_images = sorted(labels[s].name for s in labels.keys() - images.keys())

    plan: list[tuple[Path, ...]] = []
    for stem in sorted(images.keys() & labels.keys()):
        img, lbl = images[stem], labels[stem]
        try:
            image_size(img)
        except IntegrityError:
            report.undecodable.append(img.name)
            continue
        report.pairs.append(stem)
        todo = []
        for src in (img, lbl):
            dst = target_dir / src.name
            if dst.exists():
                if not filecmp.cmp(src, dst, shallow=False):
                    raise IntegrityError(f"{dst} exists with different content")
            else:
                todo.append(src)
        if todo:
            plan.append(tuple(todo))

    if plan:
        target_dir.mkdir(parents=True, exist_ok=True)
    for group in plan:
        for src in group:
            shutil.copy2(src, target_dir / src.name)
            report.copied.append(src.name)
        report.pairs_copied += 1
    return report


# --- synthetic fixtures --------------------------------------------------------


def synthesize_dataset(
    out_dir: Path,
    n_images: int,
    *,
    width: int = 960,
    height: int = 720,
    seed: int = 0,
    per_class: int = 1,
    box_range: tuple[int, int] = (24, 120),
) -> list[ImageRecord]:
    """Write ``n_images`` PNGs with ``per_class`` boxes of every fault class.

    Pixels are a smooth gradient with each defect painted as a darker patch so
    overlays and crops have something to look at.
    """
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    yy, xx = np.mgrid[0:height, 0:width]
    records = []
    for i in range(n_images):
        base = np.stack(
            [
                120 + 60 * xx / width,
                130 + 50 * yy / height,
                np.full_like(xx, 170 + (i * 7) % 40, dtype=float),
            ],
            axis=-1,
        ).astype(np.uint8)
        anns = []
        for cls in range(NUM_CLASSES):
            for _ in range(per_class):
                bw, bh = rng.integers(box_range[0], box_range[1] + 1, size=2)
                x1 = int(rng.integers(0, width - bw + 1))
                y1 = int(rng.integers(0, height - bh + 1))
                anns.append(Annotation(cls, BBox(x1, y1, x1 + int(bw), y1 + int(bh))))
                base[y1 : y1 + bh, x1 : x1 + bw] = base[y1 : y1 + bh, x1 : x1 + bw] // 2 + 20 * cls
        path = out_dir / f"img_{i:04d}.png"
        save_png(base, path)
        path.with_suffix(LABEL_SUFFIX).write_text(write_label_file(anns, width, height), encoding="utf-8")
        records.append(ImageRecord(path, width, height, anns))
    return records
