import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bladediag.dataset import (
    FAULT_CLASSES,
    Annotation,
    BBox,
    Detection,
    ImageRecord,
    class_by_name,
    find_classes,
    load_dataset,
    parse_label_file,
    parse_prediction_file,
    save_png,
    validate_and_replenish,
    write_label_file,
)
from bladediag.errors import DomainError, IntegrityError, LabelParseError

import numpy as np


def test_taxonomy():
    assert [fc.id for fc in FAULT_CLASSES] == [0, 1, 2, 3]
    assert [fc.canonical_name for fc in FAULT_CLASSES] == [
        "crack",
        "skin debonding",
        "surface blemish",
        "pitted surface",
    ]
    for fc in FAULT_CLASSES:
        assert fc.synonyms and fc.canonical_name in fc.synonyms
    assert class_by_name("Cracks").id == 0
    assert class_by_name("surface pitting").id == 3


def test_find_classes_word_boundaries():
    assert [c.id for c in find_classes("Two CRACKS and some pitting.")] == [0, 3]
    assert find_classes("crackle glaze; blemishless") == []
    assert [c.id for c in find_classes("skin\ndebonding near the root")] == [1]


def test_bbox_rejects_bad_boxes():
    with pytest.raises(DomainError):
        BBox(5, 0, 5, 10)
    with pytest.raises(DomainError):
        BBox(6, 0, 5, 10)
    with pytest.raises(DomainError):
        BBox(-1, 0, 5, 10)


def test_parse_center_size_to_corners():
    (ann,) = parse_label_file("0 0.5 0.5 0.5 0.5", 100, 100)
    assert ann.class_id == 0
    assert (ann.box.x1, ann.box.y1, ann.box.x2, ann.box.y2) == (25, 25, 75, 75)


def test_parse_empty_and_full_image():
    assert parse_label_file("", 640, 640) == []
    assert parse_label_file("\n  \n", 640, 640) == []
    (ann,) = parse_label_file("1 0.5 0.5 1.0 1.0", 640, 640)
    assert ann == Annotation(1, BBox(0, 0, 640, 640))


def test_parse_preserves_order_and_scales_axes():
    anns = parse_label_file("2 0.25 0.5 0.5 0.5\n0 0.75 0.25 0.1 0.1\n", 200, 100)
    assert [a.class_id for a in anns] == [2, 0]
    assert anns[0].box == BBox(0, 25, 100, 75)


def test_parse_errors():
    with pytest.raises(LabelParseError) as exc:
        parse_label_file("0 0.5 0.5 0.5 0.5\n0 0.5 0.5", 10, 10)
    assert exc.value.line_no == 2
    with pytest.raises(LabelParseError):
        parse_label_file("x 0.5 0.5 0.5 0.5", 10, 10)
    with pytest.raises(DomainError):
        parse_label_file("4 0.5 0.5 0.5 0.5", 10, 10)
    with pytest.raises(DomainError):
        parse_label_file("0 0.5 0.5 0 0.5", 10, 10)
    with pytest.raises(DomainError):
        parse_label_file("0 0.9 0.5 0.5 0.5", 10, 10)
    with pytest.raises(DomainError):
        parse_label_file("0 1.5 0.5 0.5 0.5", 10, 10)


def test_write_examples():
    assert write_label_file([], 640, 640) == ""
    text = write_label_file([Annotation(1, BBox(0, 0, 640, 640))], 640, 640)
    assert text.splitlines() == ["1 0.500000 0.500000 1.000000 1.000000"]
    with pytest.raises(DomainError):
        write_label_file([Annotation(1, BBox(0, 0, 641, 640))], 640, 640)


def test_round_trip_parse_example():
    anns = parse_label_file("0 0.5 0.5 0.5 0.5", 100, 100)
    again = parse_label_file(write_label_file(anns, 100, 100), 100, 100)
    for a, b in zip(anns, again):
        for u, v in zip((a.box.x1, a.box.y1, a.box.x2, a.box.y2), (b.box.x1, b.box.y1, b.box.x2, b.box.y2)):
            assert abs(u - v) / 100 <= 1e-6


@st.composite
def annotation_sets(draw):
    w = draw(st.integers(1, 4000))
    h = draw(st.integers(1, 4000))
    n = draw(st.integers(0, 12))
    anns = []
    for _ in range(n):
        x1 = draw(st.floats(0, w * 0.99))
        y1 = draw(st.floats(0, h * 0.99))
        x2 = draw(st.floats(x1 + w * 0.005, w))
        y2 = draw(st.floats(y1 + h * 0.005, h))
        anns.append(Annotation(draw(st.integers(0, 3)), BBox(x1, y1, x2, y2)))
    return w, h, anns


@settings(max_examples=200, deadline=None)
@given(annotation_sets())
def test_round_trip_property(case):
    w, h, anns = case
    again = parse_label_file(write_label_file(anns, w, h), w, h)
    assert len(again) == len(anns)
    for a, b in zip(anns, again):
        assert a.class_id == b.class_id
        assert abs(a.box.x1 - b.box.x1) / w <= 1e-6
        assert abs(a.box.x2 - b.box.x2) / w <= 1e-6
        assert abs(a.box.y1 - b.box.y1) / h <= 1e-6
        assert abs(a.box.y2 - b.box.y2) / h <= 1e-6
        assert b.box.x1 < b.box.x2 and b.box.y1 < b.box.y2
        assert 0 <= b.box.x1 and b.box.x2 <= w and 0 <= b.box.y1 and b.box.y2 <= h


def test_parse_prediction_file():
    (det,) = parse_prediction_file("0 0.5 0.5 0.5 0.5 0.9", 100, 100)
    assert det == Detection(0, BBox(25, 25, 75, 75), 0.9)
    assert parse_prediction_file("", 100, 100) == []
    with pytest.raises(DomainError):
        parse_prediction_file("0 0.5 0.5 0.5 0.5 1.5", 100, 100)
    with pytest.raises(LabelParseError):
        parse_prediction_file("0 0.5 0.5 0.5 0.5", 100, 100)
    (d,) = parse_prediction_file("0 0.5 0.5 0.5 0.5", 100, 100, default_confidence=1.0)
    assert d.confidence == 1.0


def test_image_record_bounds():
    with pytest.raises(DomainError):
        ImageRecord("a.png", 0, 10)
    with pytest.raises(DomainError):
        ImageRecord("a.png", 10, 10, [Annotation(0, BBox(0, 0, 11, 5))])


def _write_pair(d, stem, label=True, image=True, content=b""):
    if image:
        save_png(np.full((8, 8, 3), 100, dtype=np.uint8), d / f"{stem}.png")
    if label:
        (d / f"{stem}.txt").write_text("0 0.5 0.5 0.5 0.5\n" + content.decode())


def test_validate_and_replenish(tmp_path):
    src, dst = tmp_path / "src", tmp_path / "dst"
    src.mkdir()
    for stem in ("a", "b", "c"):
        _write_pair(src, stem)
    _write_pair(src, "d", label=False)
    report = validate_and_replenish(src, dst)
    assert report.missing_labels == ["d.png"]
    assert report.missing_images == []
    assert report.pairs_copied == 3
    assert sorted(p.name for p in dst.iterdir()) == ["a.png", "a.txt", "b.png", "b.txt", "c.png", "c.txt"]
    assert json.loads(report.to_json())["pairs_copied"] == 3

    again = validate_and_replenish(src, dst)
    assert again.copied == [] and again.pairs_copied == 0


def test_validate_supplements_missing_half_and_never_deletes(tmp_path):
    src, dst = tmp_path / "src", tmp_path / "dst"
    src.mkdir()
    dst.mkdir()
    _write_pair(src, "a")
    _write_pair(dst, "a", label=False)
    (dst / "extra.txt").write_text("keep me")
    report = validate_and_replenish(src, dst)
    assert report.copied == ["a.txt"]
    assert (dst / "extra.txt").read_text() == "keep me"


def test_validate_empty_source(tmp_path):
    (tmp_path / "src").mkdir()
    report = validate_and_replenish(tmp_path / "src", tmp_path / "dst")
    assert report.pairs == [] and report.copied == []
    assert not (tmp_path / "dst").exists()


def test_validate_label_without_image_and_undecodable(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "orphan.txt").write_text("")
    (src / "bad.png").write_bytes(b"not a png")
    (src / "bad.txt").write_text("")
    report = validate_and_replenish(src, tmp_path / "dst")
    assert report.missing_images == ["orphan.txt"]
    assert report.undecodable == ["bad.png"]
    assert report.copied == []


def test_validate_collision(tmp_path):
    src, dst = tmp_path / "src", tmp_path / "dst"
    src.mkdir()
    dst.mkdir()
    _write_pair(src, "a")
    _write_pair(src, "b")
    (dst / "b.txt").write_text("different")
    with pytest.raises(IntegrityError):
        validate_and_replenish(src, dst)
    # nothing copied before the collision was detected
    assert sorted(p.name for p in dst.iterdir()) == ["b.txt"]


def test_validate_unreadable_source(tmp_path):
    with pytest.raises(OSError):
        validate_and_replenish(tmp_path / "missing", tmp_path / "dst")


def test_load_dataset(small_dataset):
    records = load_dataset(small_dataset[0].path.parent)
    assert [r.path.name for r in records] == [r.path.name for r in small_dataset]
    assert len(records[0].annotations) == 4
