"""Detection providers and overlay rendering.

Three providers stand in for a trained detector: prediction files on disk,
a remote HTTP inference endpoint, and a synthetic provider that perturbs the
ground truth of an :class:`ImageRecord` with seeded noise.

HTTP wire contract (one POST per image)::

    request:  {"image": "<base64>", "media_type": "image/png",
               "width": 1920, "height": 1080, "name": "img_0001.png"}
    response: {"detections": [{"class_id": 0, "x1": .., "y1": .., "x2": ..,
               "y2": .., "confidence": 0.93}, ...]}

A bare JSON list of detection objects is accepted as the response as well.
"""

from __future__ import annotations

import base64
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests
from PIL import Image, ImageDraw, ImageFont

from .dataset import (
    FAULT_CLASSES,
    LABEL_SUFFIX,
    BBox,
    Detection,
    ImageRecord,
    parse_prediction_file,
)
from .errors import DomainError, ProtocolError, TransportError

PROVIDER_KINDS = ("file", "http", "synthetic")

CLASS_COLORS: dict[int, tuple[int, int, int]] = {
    0: (230, 25, 75),
    1: (60, 180, 75),
    2: (255, 225, 25),
    3: (0, 130, 200),
}
STROKE = 2
TAG_HEIGHT = 12
TAG_TEXT_COLOR = (0, 0, 0)


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "synthetic"
    location: str = ""
    confidence_floor: float = 0.0
    noise_seed: int = 0
    drop_rate: float = 0.0
    jitter_px: float = 0.0
    timeout: float = 30.0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.kind not in PROVIDER_KINDS:
            raise DomainError(f"provider kind must be one of {PROVIDER_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise DomainError(f"confidence_floor {self.confidence_floor} outside [0, 1]")
        if not 0.0 <= self.drop_rate <= 1.0:
            raise DomainError(f"drop_rate {self.drop_rate} outside [0, 1]")
        if self.jitter_px < 0:
            raise DomainError("jitter_px must be non-negative")
        if self.max_in_flight < 1:
            raise DomainError("max_in_flight must be >= 1")


@dataclass
class DetectionSet:
    image: ImageRecord
    detections: list[Detection] = field(default_factory=list)
    provider_tag: str = ""


def detect(image: ImageRecord, provider: ProviderConfig, session: requests.Session | None = None) -> DetectionSet:
    if provider.kind == "file":
        dets = _from_file(image, provider)
    elif provider.kind == "synthetic":
        dets = _synthetic(image, provider)
    else:
        dets = _from_http(image, provider, session)
    dets = [d for d in dets if d.confidence >= provider.confidence_floor]
    return DetectionSet(image, dets, f"{provider.kind}:{provider.location or provider.noise_seed}")


def _from_file(image: ImageRecord, provider: ProviderConfig) -> list[Detection]:
    path = Path(provider.location) / (image.stem + LABEL_SUFFIX)
    if not path.is_file():
        raise FileNotFoundError(f"no prediction file for {image.path.name}: {path}")
    # label files without a confidence column count as certain detections
    return parse_prediction_file(path.read_text(encoding="utf-8"), image.width, image.height, default_confidence=1.0)


def _image_rng(image: ImageRecord, seed: int) -> np.random.Generator:
    # keyed on the file name so results do not depend on processing order
    return np.random.default_rng([seed, zlib.crc32(image.path.name.encode("utf-8"))])


def _synthetic(image: ImageRecord, provider: ProviderConfig) -> list[Detection]:
    rng = _image_rng(image, provider.noise_seed)
    out = []
    for ann in image.annotations:
        if provider.drop_rate > 0 and rng.random() < provider.drop_rate:
            continue
        box, conf = ann.box, 1.0
        if provider.jitter_px > 0:
            dx1, dy1, dx2, dy2 = rng.uniform(-provider.jitter_px, provider.jitter_px, size=4)
            x1 = min(max(box.x1 + dx1, 0.0), image.width - 1.0)
            y1 = min(max(box.y1 + dy1, 0.0), image.height - 1.0)
            x2 = min(max(box.x2 + dx2, x1 + 1.0), float(image.width))
            y2 = min(max(box.y2 + dy2, y1 + 1.0), float(image.height))
            box = BBox(x1, y1, x2, y2)
            conf = float(rng.uniform(0.5, 1.0))
        out.append(Detection(ann.class_id, box, conf))
    return out


_SEMAPHORES: dict[tuple[str, int], threading.BoundedSemaphore] = {}
_SEM_LOCK = threading.Lock()


def _in_flight_limit(provider: ProviderConfig) -> threading.BoundedSemaphore:
    key = (provider.location, provider.max_in_flight)
    with _SEM_LOCK:
        if key not in _SEMAPHORES:
            _SEMAPHORES[key] = threading.BoundedSemaphore(provider.max_in_flight)
        return _SEMAPHORES[key]


def _from_http(image: ImageRecord, provider: ProviderConfig, session: requests.Session | None) -> list[Detection]:
    data = image.path.read_bytes()
    media = "image/png" if image.path.suffix.lower() == ".png" else "image/jpeg"
    body = {
        "image": base64.b64encode(data).decode("ascii"),
        "media_type": media,
        "width": image.width,
        "height": image.height,
        "name": image.path.name,
    }
    post = (session or requests).post
    with _in_flight_limit(provider):
        try:
            resp = post(provider.location, json=body, timeout=provider.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"detector request to {provider.location} failed: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise TransportError(f"detector endpoint {provider.location} returned an error", resp.status_code)
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"detector response is not JSON: {exc}") from exc
    items = payload.get("detections") if isinstance(payload, dict) else payload
    if not isinstance(items, list):
        raise ProtocolError("detector response lacks a 'detections' list")
    out = []
    for i, item in enumerate(items):
        try:
            x1 = max(float(item["x1"]), 0.0)
            y1 = max(float(item["y1"]), 0.0)
            x2 = min(float(item["x2"]), float(image.width))
            y2 = min(float(item["y2"]), float(image.height))
            out.append(Detection(int(item["class_id"]), BBox(x1, y1, x2, y2), float(item["confidence"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"detection {i} malformed: {exc}") from exc
    return out


# --- overlay -------------------------------------------------------------------


def pixel_rect(box: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Inclusive integer pixel rectangle covering ``box``, clipped to the image."""
    x1 = min(int(np.floor(box.x1)), width - 1)
    y1 = min(int(np.floor(box.y1)), height - 1)
    x2 = min(max(int(np.ceil(box.x2)) - 1, x1), width - 1)
    y2 = min(max(int(np.ceil(box.y2)) - 1, y1), height - 1)
    return x1, y1, x2, y2


_FONT = None


def _font():
    global _FONT
    if _FONT is None:
        _FONT = ImageFont.load_default()
    return _FONT


def label_tag_rect(det: Detection, width: int, height: int) -> tuple[int, int, int, int]:
    """Inclusive pixel rectangle of the filled class tag drawn for ``det``.

    The tag sits above the box when there is room, otherwise just inside its
    top edge.
    """
    x1, y1, _, _ = pixel_rect(det.box, width, height)
    text = FAULT_CLASSES[det.class_id].canonical_name
    left, _, right, _ = _font().getbbox(text)
    tw = right - left + 4
    top = y1 - TAG_HEIGHT if y1 >= TAG_HEIGHT else y1
    return x1, top, min(x1 + tw - 1, width - 1), min(top + TAG_HEIGHT - 1, height - 1)


def render_overlay(pixels: np.ndarray, detections: list[Detection], *, labels: bool = True) -> np.ndarray:
    """Copy of ``pixels`` with a 2-px class-coloured frame per detection.

    With ``labels`` each frame also gets a filled tag carrying the class name.
    Detections are drawn in the order given.
    """
    im = Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).convert("RGB")
    h, w = pixels.shape[:2]
    draw = ImageDraw.Draw(im)
    for det in detections:
        color = CLASS_COLORS[det.class_id]
        draw.rectangle(pixel_rect(det.box, w, h), outline=color, width=STROKE)
        if labels:
            tx1, ty1, tx2, ty2 = label_tag_rect(det, w, h)
            draw.rectangle((tx1, ty1, tx2, ty2), fill=color)
            draw.text((tx1 + 2, ty1), FAULT_CLASSES[det.class_id].canonical_name, fill=TAG_TEXT_COLOR, font=_font())
    return np.asarray(im)
