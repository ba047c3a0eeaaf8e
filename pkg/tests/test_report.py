import csv

from PIL import Image

from bladediag import report
from bladediag.ablation import run_ablation
from bladediag.dataset import Annotation, BBox, Detection
from bladediag.detector import ProviderConfig
from bladediag.llm import StubTransport, fixed_clock
from bladediag.metrics import evaluate_dataset
from bladediag.tiler import TilingConfig, augment_dataset


def _is_png(path):
    with Image.open(path) as im:
        return im.format == "PNG" and im.size[0] > 100


def test_aligned_table():
    text = report.aligned([("a", "bb"), ("ccc", "d")])
    assert text.splitlines() == ["a    bb", "ccc  d"]


def test_eval_outputs(tmp_path):
    gts = [Annotation(0, BBox(0, 0, 10, 10)), Annotation(2, BBox(20, 20, 40, 40))]
    preds = [Detection(0, BBox(0, 0, 10, 10), 0.9), Detection(2, BBox(60, 60, 70, 70), 0.4)]
    pairs = [(preds, gts)]
    rows = report.eval_rows(evaluate_dataset(pairs))
    report.write_csv(tmp_path / "eval.csv", rows)
    with open(tmp_path / "eval.csv", newline="") as fh:
        read = list(csv.reader(fh))
    assert read[0] == ["metric", "value"] and ["precision", "0.5000"] in read
    assert ["AP[crack]", "1.0000"] in read
    report.plot_pr_curves(pairs, tmp_path / "pr.png")
    assert _is_png(tmp_path / "pr.png")


def test_ablation_outputs(tmp_path, small_dataset):
    table = run_ablation(small_dataset, ProviderConfig(), StubTransport(), clock=fixed_clock())
    rows = report.ablation_rows(table)
    assert rows[-1][:4] == ("detector+analysis+advice", "1", "1", "1")
    report.plot_ablation(table, tmp_path / "abl.png")
    assert _is_png(tmp_path / "abl.png")


def test_augment_outputs(tmp_path, small_dataset):
    manifest = augment_dataset(small_dataset, TilingConfig(), None, dry_run=True)
    rows = report.augment_rows(manifest)
    assert rows[0] == ("class", "annotations_in", "annotations_out", "growth")
    assert rows[-1][0] == "images" and rows[-1][1] == "3"
    report.plot_class_counts(manifest, tmp_path / "counts.png")
    assert _is_png(tmp_path / "counts.png")
