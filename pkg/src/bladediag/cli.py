"""Command-line interface for the blade inspection pipeline.

Human-readable output goes to stdout, diagnostics to stderr, reports to
files under ``--out``. Failures print one JSON line to stderr::

    {"error": "ConfigError", "message": "...", "exit": 3}

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import LABEL_SUFFIX, image_size, is_image, load_dataset, load_pixels, parse_label_file, parse_prediction_file, save_png, write_prediction_file
from .detector import detect, render_overlay
from .errors import BladeDiagError, ConfigError
from .kvmap import map_detections
from .llm import RemoteTransport, StubTransport, fixed_clock, run_pipeline, utc_clock
from .metrics import KeywordSpec

log = logging.getLogger("bladediag")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print usage and exit(2) itself
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bladediag", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *, need_in=True, out_required=False):
        p.add_argument("--config", type=Path, help="pipeline JSON config")
        p.add_argument("--seed", type=int, help="seed for synthetic detector noise")
        p.add_argument("--parallelism", type=int, help="worker count (overrides config)")
        if need_in:
            p.add_argument("--in", dest="in_dir", type=Path, help="input image directory")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")

    p = sub.add_parser("augment", help="multi-scale sliding-window tiling")
    common(p)
    p.add_argument("--dry-run", action="store_true", help="print window counts, write nothing")

    p = sub.add_parser("detect", help="run the configured detector, write predictions and overlays")
    common(p)

    p = sub.add_parser("map", help="render key-value fault text per image")
    common(p)
    p.add_argument("--pred", type=Path, help="read predictions from this directory instead of the detector")

    p = sub.add_parser("diagnose", help="full detector / analysis / advice pipeline")
    common(p)
    p.add_argument("--stub", action="store_true", help="use the offline stub model transport")

    p = sub.add_parser("evaluate", help="detection metrics over prediction and ground-truth label dirs")
    common(p, need_in=False)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--iou", type=float, default=0.5)

    p = sub.add_parser("ablate", help="run the four component ablations and score them")
    common(p)
    p.add_argument("--stub", action="store_true", help="use the offline stub model transport")
    p.add_argument("--keywords", type=Path, help="keyword spec JSON (overrides config)")
    return parser


# --- helpers ------------------------------------------------------------------------


def _load(args):
    from .config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.detector = replace(cfg.detector, noise_seed=args.seed)
    if args.parallelism is not None:
        if args.parallelism < 1:
            raise UsageError("--parallelism must be >= 1")
        cfg.parallelism = args.parallelism
    if getattr(args, "in_dir", None) is not None:
        cfg.input_dir = args.in_dir
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required (flag or config)")
    return value


def _out_dir(cfg) -> Path:
    out = Path(_need(cfg.output_dir, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _transport(args, cfg):
    if args.stub:
        return StubTransport(), fixed_clock()
    return RemoteTransport(cfg.transport.retries, cfg.transport.backoff), utc_clock


# --- subcommands ----------------------------------------------------------------------


def cmd_augment(args) -> int:
    from . import report
    from .tiler import augment_dataset, generate_windows

    cfg = _load(args)
    records = load_dataset(_need(cfg.input_dir, "--in"))
    if args.dry_run:
        rows = [("image", *(f"scale{k}" for k in range(cfg.tiling.scale_count)), "total")]
        total = 0
        for rec in records:
            wins = generate_windows(rec, cfg.tiling)
            per = [sum(w.scale_index == k for w in wins) for k in range(cfg.tiling.scale_count)]
            n = len(wins) or 1  # untileable originals pass through as one image
            total += n
            rows.append((rec.path.name, *map(str, per), str(n)))
        rows.append(("all", *[""] * cfg.tiling.scale_count, str(total)))
        print(report.aligned(rows))
        return 0
    out = _out_dir(cfg)
    manifest = augment_dataset(records, cfg.tiling, out, parallelism=cfg.parallelism)
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    rows = report.augment_rows(manifest)
    report.write_csv(out / "augment_counts.csv", rows)
    report.plot_class_counts(manifest, out / "augment_counts.png")
    print(report.aligned(rows))
    return 0


def cmd_detect(args) -> int:
    cfg = _load(args)
    records = load_dataset(_need(cfg.input_dir, "--in"))
    out = _out_dir(cfg)
    for rec in records:
        dset = detect(rec, cfg.detector)
        (out / f"{rec.stem}{LABEL_SUFFIX}").write_text(
            write_prediction_file(dset.detections, rec.width, rec.height), encoding="utf-8"
        )
        save_png(render_overlay(load_pixels(rec.path), dset.detections), out / f"{rec.stem}_overlay.png")
        print(f"{rec.path.name}\t{len(dset.detections)}")
    return 0


def cmd_map(args) -> int:
    cfg = _load(args)
    records = load_dataset(_need(cfg.input_dir, "--in"))
    provider = cfg.detector
    if args.pred is not None:
        provider = replace(provider, kind="file", location=str(args.pred))
    out = cfg.output_dir
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    for rec in records:
        summary, text = map_detections(detect(rec, provider), cfg.kv)
        print(f"{rec.path.name}\t{text}")
        if out is not None:
            (Path(out) / f"{rec.stem}.kv.json").write_text(
                json.dumps({"image": rec.path.name, "text": text, "summary": json.loads(summary.to_json())}, indent=2),
                encoding="utf-8",
            )
    return 0


def cmd_diagnose(args) -> int:
    from . import report

    cfg = _load(args)
    records = load_dataset(_need(cfg.input_dir, "--in"))
    out = _out_dir(cfg)
    transport, clock = _transport(args, cfg)
    rows = [("image", "detection", "analysis", "advice", "fcs")]
    for rec in records:
        result = run_pipeline(rec, cfg.detector, cfg.stages, transport, kv_config=cfg.kv, clock=clock)
        (out / f"{rec.stem}.report.json").write_text(result.to_json() + "\n", encoding="utf-8")
        cats = ["yes" if result.categories[c] else "-" for c in ("detection", "analysis", "advice")]
        rows.append((rec.path.name, *cats, "n/a" if result.fcs is None else f"{result.fcs:.3f}"))
    print(report.aligned(rows))
    return 0


def _dims(stem: str, *dirs: Path) -> tuple[int, int]:
    for d in dirs:
        for p in sorted(d.glob(f"{stem}.*")):
            if is_image(p):
                return image_size(p)
    # IoU is invariant under per-axis scaling, so normalized space is exact
    return 1, 1


def load_eval_pairs(pred_dir: Path, gt_dir: Path):
    for d in (pred_dir, gt_dir):
        if not Path(d).is_dir():
            raise NotADirectoryError(f"not a readable directory: {d}")
    stems = sorted({p.stem for p in Path(gt_dir).glob(f"*{LABEL_SUFFIX}")} | {p.stem for p in Path(pred_dir).glob(f"*{LABEL_SUFFIX}")})
    pairs = []
    for stem in stems:
        w, h = _dims(stem, gt_dir, pred_dir)
        gp, pp = Path(gt_dir) / f"{stem}{LABEL_SUFFIX}", Path(pred_dir) / f"{stem}{LABEL_SUFFIX}"
        gts = parse_label_file(gp.read_text(encoding="utf-8"), w, h) if gp.exists() else []
        preds = parse_prediction_file(pp.read_text(encoding="utf-8"), w, h, default_confidence=1.0) if pp.exists() else []
        pairs.append((preds, gts))
    return pairs


def cmd_evaluate(args) -> int:
    from . import report
    from .metrics import evaluate_dataset

    pairs = load_eval_pairs(args.pred, args.gt)
    result = evaluate_dataset(pairs, args.iou)
    rows = report.eval_rows(result)
    print(report.aligned(rows))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval.json").write_text(result.to_json(), encoding="utf-8")
        report.write_csv(args.out / "eval.csv", rows)
        report.plot_pr_curves(pairs, args.out / "pr_curves.png", args.iou)
    return 0


def cmd_ablate(args) -> int:
    from . import report
    from .ablation import run_ablation

    cfg = _load(args)
    records = load_dataset(_need(cfg.input_dir, "--in"))
    kw_path = args.keywords or cfg.keywords
    spec = KeywordSpec.load(kw_path) if kw_path else KeywordSpec.default()
    transport, clock = _transport(args, cfg)
    table = run_ablation(
        records, cfg.detector, transport, stages=cfg.stages, spec=spec, kv_config=cfg.kv,
        parallelism=cfg.parallelism, clock=clock,
    )
    print(table.to_text())
    if cfg.output_dir is not None:
        out = _out_dir(cfg)
        (out / "ablation.json").write_text(table.to_json(), encoding="utf-8")
        report.write_csv(out / "ablation.csv", report.ablation_rows(table))
        report.plot_ablation(table, out / "ablation.png")
    return 0


COMMANDS = {
    "augment": cmd_augment,
    "detect": cmd_detect,
    "map": cmd_map,
    "diagnose": cmd_diagnose,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit": code}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(exc, 2)
    except ConfigError as exc:
        return _fail(exc, 3)
    except (BladeDiagError, OSError, ValueError) as exc:
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
