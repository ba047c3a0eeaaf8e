import json
import re

import pytest

from bladediag.cli import main


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors_exit_2(capsys):
    code, _, err = _run(capsys, "frobnicate")
    assert code == 2 and json.loads(err)["exit"] == 2
    code, _, _ = _run(capsys, "augment")  # no --in anywhere
    assert code == 2
    code, _, _ = _run(capsys, "evaluate", "--pred", "x")
    assert code == 2


def test_config_errors_exit_3(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(capsys, "augment", "--config", bad)[0] == 3
    bad.write_text(json.dumps({"tiling": {"overlap": 0.5}}))
    assert _run(capsys, "augment", "--config", bad)[0] == 3
    bad.write_text(json.dumps({"tiling": {"overlap_ratio": 1.5}}))
    assert _run(capsys, "augment", "--config", bad)[0] == 3
    assert _run(capsys, "augment", "--config", tmp_path / "missing.json")[0] == 3


def test_runtime_errors_exit_1(capsys, tmp_path):
    code, _, err = _run(capsys, "evaluate", "--pred", tmp_path / "a", "--gt", tmp_path / "b")
    assert code == 1 and json.loads(err)["error"] == "NotADirectoryError"


def test_augment_dry_run_matches_real_run(capsys, tmp_path, small_dataset):
    src = small_dataset[0].path.parent
    code, out, _ = _run(capsys, "augment", "--in", src, "--dry-run")
    assert code == 0
    total = int(out.strip().splitlines()[-1].split()[-1])
    assert not (tmp_path / "aug").exists()
    code, _, _ = _run(capsys, "augment", "--in", src, "--out", tmp_path / "aug")
    assert code == 0
    manifest = json.loads((tmp_path / "aug" / "manifest.json").read_text())
    assert manifest["images_out"] == total == len(list((tmp_path / "aug").glob("*_s*_x*_y*.png")))
    assert (tmp_path / "aug" / "augment_counts.csv").exists()
    assert (tmp_path / "aug" / "augment_counts.png").exists()


def test_detect_then_evaluate_is_perfect(capsys, tmp_path, small_dataset):
    src = small_dataset[0].path.parent
    assert _run(capsys, "detect", "--in", src, "--out", tmp_path / "pred")[0] == 0
    assert len(list((tmp_path / "pred").glob("*_overlay.png"))) == 3
    code, out, _ = _run(capsys, "evaluate", "--pred", tmp_path / "pred", "--gt", src, "--out", tmp_path / "ev")
    assert code == 0
    result = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert result["map50"] == 1.0 and result["precision"] == 1.0
    assert re.search(r"map50\s+1\.0000", out)
    assert (tmp_path / "ev" / "pr_curves.png").exists()


def test_evaluate_identical_dirs(capsys, small_dataset):
    src = small_dataset[0].path.parent
    code, out, _ = _run(capsys, "evaluate", "--pred", src, "--gt", src)
    assert code == 0 and re.search(r"map50\s+1\.0000", out)


def test_seed_changes_synthetic_noise(capsys, tmp_path, small_dataset):
    src = small_dataset[0].path.parent
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"detector": {"kind": "synthetic", "drop_rate": 0.5}}))
    outs = {}
    for seed in (1, 1, 2):
        d = tmp_path / f"p{seed}"
        _run(capsys, "detect", "--config", cfg, "--seed", seed, "--in", src, "--out", d)
        outs.setdefault(seed, []).append("".join(p.read_text() for p in sorted(d.glob("*.txt"))))
    assert outs[1][0] == outs[1][1]
    assert outs[1][0] != outs[2][0]


def test_map_from_predictions(capsys, tmp_path, small_dataset):
    src = small_dataset[0].path.parent
    code, out, _ = _run(capsys, "map", "--in", src, "--pred", src, "--out", tmp_path / "kv")
    assert code == 0
    assert all("Detected faults:" in line for line in out.strip().splitlines())
    data = json.loads(next((tmp_path / "kv").glob("*.kv.json")).read_text())
    assert data["summary"]["total"] == 4


def test_diagnose_stub_is_byte_identical(capsys, tmp_path, small_dataset):
    src = small_dataset[0].path.parent
    blobs = []
    for run in ("a", "b"):
        assert _run(capsys, "diagnose", "--stub", "--seed", 7, "--in", src, "--out", tmp_path / run)[0] == 0
        blobs.append([p.read_bytes() for p in sorted((tmp_path / run).glob("*.report.json"))])
    assert len(blobs[0]) == 3 and blobs[0] == blobs[1]


def test_ablate_stub(capsys, tmp_path, small_dataset):
    src = small_dataset[0].path.parent
    code, out, _ = _run(capsys, "ablate", "--stub", "--in", src, "--out", tmp_path / "ab")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[-1].split() == ["detector+analysis+advice", "yes", "yes", "yes", "1.000"]
    for name in ("ablation.json", "ablation.csv", "ablation.png"):
        assert (tmp_path / "ab" / name).exists()


@pytest.mark.parametrize("flag", ["--parallelism", "--seed"])
def test_bad_numeric_flags(capsys, flag, small_dataset):
    assert _run(capsys, "augment", "--in", small_dataset[0].path.parent, flag, "zero")[0] == 2
