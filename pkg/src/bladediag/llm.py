"""Two-stage LLM diagnosis over a chat-completions style wire protocol.

Stage one is multimodal: it receives the overlay image and the key-value
text and returns an analysis (fault types, severity, cause). Stage two is
text-only: it turns that analysis into a four-section report. Either stage,
and the detector in front of them, can be switched off for ablations.

Wire format of a request (``ChatRequest.to_payload``)::

    {"model": "...", "temperature": 0, "max_tokens": 1024,
     "messages": [
        {"role": "system", "content": [{"type": "text", "text": "..."}]},
        {"role": "user", "content": [
            {"type": "image_url", "image_url": {"url": "data:image/png;base64,..."}},
            {"type": "text", "text": "Detected faults: ..."}]}]}

The response must carry ``choices[0].message.content`` as a string or as a
list of ``{"type": "text", "text": ...}`` parts.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import re
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from typing import Callable, Protocol, Sequence

import numpy as np
import requests
from PIL import Image

from .dataset import FAULT_CLASSES, UNKNOWN_FAULT, FaultClass, ImageRecord, find_classes, load_pixels
from .detector import DetectionSet, ProviderConfig, detect, render_overlay
from .errors import (
    BladeDiagError,
    DomainError,
    EncodingError,
    LLMTimeoutError,
    ProtocolError,
    StageError,
    TransportError,
)
from .kvmap import NO_FAULTS_TEXT, FaultSummary, KvConfig, map_detections

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"
STAGE_ANALYSIS = "analysis"
STAGE_ADVICE = "advice"
CATEGORIES = ("detection", "analysis", "advice")


def load_prompt(name: str, version: str = PROMPT_VERSION) -> str:
    return resources.files("bladediag").joinpath("prompts", version, f"{name}.txt").read_text(encoding="utf-8")


# --- requests --------------------------------------------------------------------


@dataclass(frozen=True)
class ContentPart:
    type: str  # "text" or "image"
    text: str = ""
    data: str = ""  # base64
    media_type: str = ""

    def to_wire(self) -> dict:
        if self.type == "text":
            return {"type": "text", "text": self.text}
        return {"type": "image_url", "image_url": {"url": f"data:{self.media_type};base64,{self.data}"}}


@dataclass(frozen=True)
class Message:
    role: str
    content: tuple[ContentPart, ...]

    def text(self) -> str:
        return "\n".join(p.text for p in self.content if p.type == "text")


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings a stage request is built from."""

    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model_name: str = "default"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    api_key_env: str = "BLADEDIAG_API_KEY"
    extra_body: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise DomainError("temperature must be >= 0")
        if self.max_tokens < 1 or self.timeout <= 0:
            raise DomainError("max_tokens and timeout must be positive")


@dataclass(frozen=True)
class ChatRequest:
    endpoint: str
    model_name: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    stage: str = STAGE_ANALYSIS
    api_key_env: str = "BLADEDIAG_API_KEY"
    extra_body: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.messages:
            raise DomainError("a chat request needs at least one message")
        if self.temperature < 0:
            raise DomainError("temperature must be >= 0")

    def to_payload(self) -> dict:
        payload = {
            "model": self.model_name,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": [{"role": m.role, "content": [p.to_wire() for p in m.content]} for m in self.messages],
        }
        payload.update(self.extra_body)
        return payload

    def serialize(self) -> bytes:
        return json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    def user_text(self) -> str:
        return "\n".join(m.text() for m in self.messages if m.role == "user")


def _request(template: EndpointConfig, system: str, user: Sequence[ContentPart], stage: str) -> ChatRequest:
    return ChatRequest(
        endpoint=template.endpoint,
        model_name=template.model_name,
        messages=(Message("system", (ContentPart("text", system),)), Message("user", tuple(user))),
        temperature=template.temperature,
        max_tokens=template.max_tokens,
        timeout=template.timeout,
        stage=stage,
        api_key_env=template.api_key_env,
        extra_body=dict(template.extra_body),
    )


def encode_png(pixels: np.ndarray) -> str:
    try:
        buf = io.BytesIO()
        Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    except (TypeError, ValueError, OSError) as exc:
        raise EncodingError(f"cannot encode image as PNG: {exc}") from exc
    return base64.b64encode(buf.getvalue()).decode("ascii")


def build_stage1_prompt(
    kv_text: str | None,
    overlay_image: np.ndarray | None,
    template: EndpointConfig = EndpointConfig(),
    prompt_version: str = PROMPT_VERSION,
) -> ChatRequest:
    """Multimodal analysis request: image part first, then the key-value text.

    Without usable key-value text (absent, empty or the no-fault sentence) the
    image-only instruction is used instead.
    """
    kv_text = (kv_text or "").strip()
    if not kv_text and overlay_image is None:
        raise DomainError("stage one needs key-value text or an image")
    parts = []
    if overlay_image is not None:
        parts.append(ContentPart("image", data=encode_png(overlay_image), media_type="image/png"))
    if kv_text:
        parts.append(ContentPart("text", kv_text))
    image_only = not kv_text or kv_text == NO_FAULTS_TEXT
    system = load_prompt("stage1_image_only" if image_only else "stage1", prompt_version)
    return _request(template, system, parts, STAGE_ANALYSIS)


def build_stage2_prompt(
    stage1_text: str,
    template: EndpointConfig = EndpointConfig(),
    prompt_version: str = PROMPT_VERSION,
) -> ChatRequest:
    if not stage1_text or not stage1_text.strip():
        raise DomainError("stage two needs non-empty input text")
    return _request(template, load_prompt("stage2", prompt_version), [ContentPart("text", stage1_text)], STAGE_ADVICE)


# --- transports --------------------------------------------------------------------


class Transport(Protocol):
    tag: str

    def complete(self, request: ChatRequest) -> str: ...


def _completion_text(payload) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("response has no choices[0].message.content") from None
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str) or not content.strip():
        raise ProtocolError("response completion is empty")
    return content


class RemoteTransport:
    """POSTs requests to their endpoint with bounded exponential-backoff retries.

    Connection failures, timeouts, 429 and 5xx responses are retried up to
    ``retries`` times; other non-success statuses fail at once.
    """

    tag = "remote"

    def __init__(
        self,
        retries: int = 2,
        backoff: float = 0.5,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if retries < 0:
            raise DomainError("retries must be >= 0")
        self.retries = retries
        self.backoff = backoff
        self.session = session or requests.Session()
        self.sleep = sleep

    def complete(self, request: ChatRequest) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(request.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last: BladeDiagError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(
                    request.endpoint, data=request.serialize(), headers=headers, timeout=request.timeout
                )
            except requests.Timeout as exc:
                last = LLMTimeoutError(f"no answer from {request.endpoint} within {request.timeout}s: {exc}")
                continue
            except requests.RequestException as exc:
                last = TransportError(f"request to {request.endpoint} failed: {exc}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"{request.endpoint} answered with a transient error", resp.status_code)
                log.warning("attempt %d/%d: status %d", attempt + 1, self.retries + 1, resp.status_code)
                continue
            if not 200 <= resp.status_code < 300:
                raise TransportError(f"{request.endpoint} rejected the request", resp.status_code)
            try:
                payload = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"response is not JSON: {exc}") from exc
            return _completion_text(payload)
        assert last is not None
        raise last


@dataclass(frozen=True)
class StubAdvice:
    severity: str
    cause: str
    maintenance: str


# canned domain phrases the stub echoes; keyword spec entries appear only in
# cause (analysis) or maintenance (advice) so ablations separate cleanly
STUB_KNOWLEDGE: dict[str, StubAdvice] = {
    "crack": StubAdvice(
        "moderate",
        "fatigue loading with local stress concentration in the laminate",
        "repair by resin injection and shorten the inspection interval to three months",
    ),
    "skin debonding": StubAdvice(
        "moderate",
        "adhesive ageing and moisture ingress between skin and spar",
        "re-bond the separated skin and restore the protective coating",
    ),
    "surface blemish": StubAdvice(
        "minor",
        "environmental contamination and coating wear",
        "clean the area and recoat it at the next scheduled stop",
    ),
    "pitted surface": StubAdvice(
        "moderate",
        "erosion by rain and airborne particles along the leading edge",
        "apply filler to the pits and fit leading-edge protection tape",
    ),
}
_STUB_NO_CAUSE = "not analysed; a visual assessment is required"
_STUB_NO_SEVERITY = "to be confirmed on site"


class StubTransport:
    """Deterministic offline stand-in for both stages.

    It looks for fault-class names in the user text of the request (never the
    system prompt or the image) and answers with fixed template sentences:
    an analysis in stage one, a four-section report in stage two. Names in
    ``suppress`` are never echoed, which models a model that misses a class.
    """

    tag = "stub"

    def __init__(self, suppress: Sequence[str] = (), table: Sequence[FaultClass] = FAULT_CLASSES):
        self.table = tuple(table)
        self.suppress = frozenset(s.lower() for s in suppress)

    def _classes(self, text: str) -> list[str]:
        return [fc.canonical_name for fc in find_classes(text, self.table) if fc.canonical_name not in self.suppress]

    @staticmethod
    def _large_area(text: str, name: str) -> bool:
        return re.search(rf"{re.escape(name)} \([^)]*large-area\)", text) is not None

    def complete(self, request: ChatRequest) -> str:
        text = request.user_text()
        names = self._classes(text)
        if request.stage == STAGE_ADVICE:
            return self._advice(text, names)
        return self._analysis(text, names)

    def _analysis(self, text: str, names: list[str]) -> str:
        if not names:
            return (
                f"Fault type: {UNKNOWN_FAULT}\n"
                f"Severity: {UNKNOWN_FAULT} - not assessable without detector output\n"
                f"Cause: {UNKNOWN_FAULT} - no fault category could be confirmed\n"
            )
        sev = []
        for n in names:
            grade = "severe, large-area damage" if self._large_area(text, n) else STUB_KNOWLEDGE[n].severity
            sev.append(f"{n} - {grade}")
        cause = [f"{n} - {STUB_KNOWLEDGE[n].cause}" for n in names]
        return f"Fault type: {', '.join(names)}\nSeverity: {'; '.join(sev)}\nCause: {'; '.join(cause)}\n"

    def _advice(self, text: str, names: list[str]) -> str:
        if not names:
            names = [UNKNOWN_FAULT]
        sev, cause, maint = [], [], []
        for n in names:
            known = STUB_KNOWLEDGE.get(n)
            m = re.search(rf"{re.escape(n)} - ([^;\n]+)", text.split("Severity:", 1)[-1].split("Cause:", 1)[0])
            sev.append(f"{n} - {m.group(1).strip() if m else _STUB_NO_SEVERITY}")
            analysed = known is not None and known.cause in text
            cause.append(f"{n} - {known.cause if analysed else _STUB_NO_CAUSE}")
            advice = known.maintenance if known else "schedule a detailed inspection before any repair"
            maint.append(f"{n} - {advice}")
        return (
            f"Fault type: {', '.join(names)}\n"
            f"Severity: {'; '.join(sev)}\n"
            f"Cause: {'; '.join(cause)}\n"
            f"Maintenance recommendation: {'; '.join(maint)}\n"
        )


def invoke(request: ChatRequest, transport: Transport) -> str:
    return transport.complete(request)


# --- reports ---------------------------------------------------------------------

SECTIONS = ("fault_types", "severity", "cause", "maintenance")
_HEADER = re.compile(
    r"^[\s#*>\-\d.]*(?P<name>fault\s+types?|severity|causes?|maintenance\s+recommendations?)\**\s*[:：]\**",
    re.IGNORECASE | re.MULTILINE,
)


def _section_key(header: str) -> str:
    h = header.lower()
    if h.startswith("fault"):
        return "fault_types"
    if h.startswith("severity"):
        return "severity"
    if h.startswith("cause"):
        return "cause"
    return "maintenance"


def _split_sections(text: str) -> dict[str, str]:
    found: dict[str, str] = {}
    matches = list(_HEADER.finditer(text))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        key = _section_key(m.group("name"))
        body = text[m.end() : end].strip()
        found[key] = f"{found[key]}; {body}" if key in found else body
    return found


def _per_fault(body: str, table: Sequence[FaultClass]) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in re.split(r"[;\n]", body):
        item = item.strip().strip("*-• ").strip()
        if not item:
            continue
        hits = find_classes(item, table)
        key = hits[0].canonical_name if hits else UNKNOWN_FAULT
        head, sep, rest = item.partition(" - ")
        if not sep:
            head, sep, rest = item.partition(": ")
        value = rest.strip() if sep and (head.strip().lower() == UNKNOWN_FAULT or find_classes(head, table)) else item
        out[key] = f"{out[key]} {value}" if key in out else value
    return out


@dataclass
class DiagnosticReport:
    fault_types: list[str] = field(default_factory=list)
    severity: dict[str, str] = field(default_factory=dict)
    cause: dict[str, str] = field(default_factory=dict)
    maintenance: dict[str, str] = field(default_factory=dict)
    raw_stage1: str = ""
    raw_stage2: str = ""
    provenance: dict = field(default_factory=dict)

    def section_text(self) -> str:
        """All four sections flattened into one string, for keyword scoring."""
        chunks = list(self.fault_types)
        for sec in (self.severity, self.cause, self.maintenance):
            for k, v in sec.items():
                chunks.append(f"{k}: {v}")
        return "\n".join(chunks)

    def to_dict(self) -> dict:
        return asdict(self)


def parse_report(text: str, table: Sequence[FaultClass] = FAULT_CLASSES) -> DiagnosticReport:
    """Lenient parse of a sectioned report; absent sections are flagged, never fatal."""
    sections = _split_sections(text or "")
    report = DiagnosticReport(raw_stage2=text or "")
    if "fault_types" in sections:
        names = [fc.canonical_name for fc in find_classes(sections["fault_types"], table)]
        if not names and sections["fault_types"].strip():
            names = [UNKNOWN_FAULT]
    else:
        names = [fc.canonical_name for fc in find_classes(text or "", table)]
    report.fault_types = names
    report.severity = _per_fault(sections.get("severity", ""), table)
    report.cause = _per_fault(sections.get("cause", ""), table)
    report.maintenance = _per_fault(sections.get("maintenance", ""), table)
    report.provenance["missing_sections"] = [s for s in SECTIONS if s not in sections]
    return report


# --- pipeline ----------------------------------------------------------------------


@dataclass(frozen=True)
class StageConfig:
    stage1: EndpointConfig = EndpointConfig()
    stage2: EndpointConfig = EndpointConfig()
    enable_detector: bool = True
    enable_stage1: bool = True
    enable_stage2: bool = True
    prompt_version: str = PROMPT_VERSION

    def __post_init__(self) -> None:
        if not (self.enable_stage1 or self.enable_stage2):
            raise DomainError("at least one LLM stage must be enabled")
        if self.enable_stage2 and not (self.enable_stage1 or self.enable_detector):
            raise DomainError("stage two alone needs the detector for its input text")


def utc_clock() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def fixed_clock(value: str = "1970-01-01T00:00:00Z") -> Callable[[], str]:
    return lambda: value


@dataclass
class PipelineResult:
    image: str
    detections: list[dict]
    kv_text: str | None
    summary: FaultSummary | None
    report: DiagnosticReport
    categories: dict[str, bool]
    fcs: float | None = None

    def to_dict(self) -> dict:
        return {
            "image": self.image,
            "detections": self.detections,
            "kv_text": self.kv_text,
            "summary": asdict(self.summary) if self.summary is not None else None,
            "report": self.report.to_dict(),
            "categories": self.categories,
            "fcs": self.fcs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _staged(name: str, fn, *args):
    try:
        return fn(*args)
    except (BladeDiagError, OSError) as exc:
        raise StageError(name, exc) from exc


def run_pipeline(
    image: ImageRecord,
    detector: ProviderConfig,
    stages: StageConfig,
    transport: Transport,
    *,
    kv_config: KvConfig = KvConfig(),
    pixels: np.ndarray | None = None,
    clock: Callable[[], str] = utc_clock,
    stage2_transport: Transport | None = None,
) -> PipelineResult:
    """Detector, key-value mapping, analysis and advice for one image.

    Disabled steps are skipped: without the detector stage one sees the raw
    image alone; without stage one, stage two reads the key-value text;
    without stage two the report is parsed from the analysis and has no
    maintenance section.
    """
    from .metrics import fcs as fault_consistency

    stamps: dict[str, str] = {"start": clock()}
    if pixels is None:
        pixels = _staged("load", load_pixels, image.path)

    dset: DetectionSet | None = None
    summary = None
    kv_text = None
    overlay = pixels
    if stages.enable_detector:
        dset = _staged("detector", detect, image, detector)
        summary, kv_text = _staged("kvmap", map_detections, dset, kv_config)
        overlay = render_overlay(pixels, dset.detections)
        stamps["detector"] = clock()

    stage1_text = ""
    if stages.enable_stage1:
        req = _staged("stage1", build_stage1_prompt, kv_text, overlay, stages.stage1, stages.prompt_version)
        stage1_text = _staged("stage1", invoke, req, transport)
        stamps["stage1"] = clock()

    stage2_text = ""
    if stages.enable_stage2:
        source = stage1_text if stages.enable_stage1 else kv_text
        req = _staged("stage2", build_stage2_prompt, source, stages.stage2, stages.prompt_version)
        stage2_text = _staged("stage2", invoke, req, stage2_transport or transport)
        stamps["stage2"] = clock()
        report = parse_report(stage2_text)
    else:
        report = parse_report(stage1_text)
        report.raw_stage2 = ""
    report.raw_stage1 = stage1_text
    report.provenance.update(
        {
            "detector": dset.provider_tag if dset else None,
            "transport": (transport.tag, (stage2_transport or transport).tag),
            "stage1_model": stages.stage1.model_name if stages.enable_stage1 else None,
            "stage2_model": stages.stage2.model_name if stages.enable_stage2 else None,
            "prompt_version": stages.prompt_version,
            "timestamps": stamps,
        }
    )

    categories = {
        "detection": dset is not None,
        "analysis": bool(stage1_text.strip()),
        "advice": bool(stages.enable_stage2 and report.maintenance),
    }
    score = None
    if dset is not None and stage1_text:
        detected = sorted({d.class_id for d in dset.detections})
        if detected:
            score = fault_consistency(stage1_text, [FAULT_CLASSES[c] for c in detected])
    detections = [
        {"class_id": d.class_id, "x1": d.box.x1, "y1": d.box.y1, "x2": d.box.x2, "y2": d.box.y2, "confidence": d.confidence}
        for d in (dset.detections if dset else [])
    ]
    return PipelineResult(image.path.name, detections, kv_text, summary, report, categories, score)

