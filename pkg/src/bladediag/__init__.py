"""Inspection-image tiling, detection-to-text mapping, LLM diagnosis and evaluation."""

from .dataset import (
    FAULT_CLASSES,
    Annotation,
    BBox,
    Detection,
    FaultClass,
    ImageRecord,
    parse_label_file,
    parse_prediction_file,
    validate_and_replenish,
    write_label_file,
)
from .detector import DetectionSet, ProviderConfig, detect, render_overlay
from .kvmap import FaultSummary, KvConfig, quantifier, render_text, summarize
from .llm import DiagnosticReport, StageConfig, StubTransport, RemoteTransport, parse_report, run_pipeline
from .metrics import EvalResult, KeywordSpec, aps, average_precision, fcs, iou, match_detections, mean_ap
from .tiler import TilingConfig, augment_dataset, generate_windows

__version__ = "0.1.0"

__all__ = [
    "FAULT_CLASSES",
    "Annotation",
    "BBox",
    "Detection",
    "FaultClass",
    "ImageRecord",
    "parse_label_file",
    "parse_prediction_file",
    "validate_and_replenish",
    "write_label_file",
    "DetectionSet",
    "ProviderConfig",
    "detect",
    "render_overlay",
    "FaultSummary",
    "KvConfig",
    "quantifier",
    "render_text",
    "summarize",
    "DiagnosticReport",
    "StageConfig",
    "StubTransport",
    "RemoteTransport",
    "parse_report",
    "run_pipeline",
    "EvalResult",
    "KeywordSpec",
    "aps",
    "average_precision",
    "fcs",
    "iou",
    "match_detections",
    "mean_ap",
    "TilingConfig",
    "augment_dataset",
    "generate_windows",
]
