import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadaug import dataset
from roadaug.dataset import (DatasetIndex, extract_rois, ingest, load_index, save_index, split,
                             train_count)
from roadaug.errors import ContractError, InputError
from roadaug.imaging import crop, load_image
from roadaug.toydata import write_dataset


def _records(n):
    return DatasetIndex("/nowhere", tuple(
        dataset.AnnotatedImage(f"id_{i:05d}", f"images/id_{i:05d}.png", 8, 8) for i in range(n)))


def test_ingest_three_pairs_in_order(tmp_path):
    write_dataset(str(tmp_path), {"c": [("D40", 1, 1, 5, 5)], "a": [], "b": [("D00", 0, 0, 3, 3)]},
                  size=(8, 8))
    index = ingest(tmp_path)
    assert [r.image_id for r in index.records] == ["a", "b", "c"]
    assert index.records[2].annotations[0].box.as_dict() == {"xmin": 1, "ymin": 1, "xmax": 5, "ymax": 5}


def test_ingest_missing_image_names_id(tmp_path):
    write_dataset(str(tmp_path), {"a": [("D40", 1, 1, 5, 5)]}, size=(8, 8))
    os.remove(tmp_path / "images" / "a.png")
    with pytest.raises(InputError, match="'a'"):
        ingest(tmp_path)


def test_ingest_empty_annotations_dir(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "annotations").mkdir()
    assert len(ingest(tmp_path)) == 0


def test_ingest_malformed_xml_names_path(tmp_path):
    write_dataset(str(tmp_path), {"a": []}, size=(8, 8))
    bad = tmp_path / "annotations" / "a.xml"
    bad.write_text("<annotation><object>")
    with pytest.raises(InputError, match="a.xml"):
        ingest(tmp_path)


def test_ingest_clamps_boxes(tmp_path, caplog):
    write_dataset(str(tmp_path), {"a": []}, size=(8, 10))
    (tmp_path / "annotations" / "a.xml").write_text(
        "<annotation><object><name>D40</name><bndbox><xmin>-1</xmin><ymin>2</ymin>"
        "<xmax>11</xmax><ymax>9</ymax></bndbox></object></annotation>")
    index = ingest(tmp_path)
    assert index.records[0].annotations[0].box.as_dict() == {"xmin": 0, "ymin": 2, "xmax": 10, "ymax": 8}
    assert "clamped" in caplog.text


def test_split_counts_paper_scale():
    index = split(_records(10186), 0.8, 0)
    assert len(index.subset("train")) == 8148
    assert len(index.subset("validation")) == 2038


def test_split_small_and_deterministic():
    a = split(_records(10), 0.8, 42)
    b = split(_records(10), 0.8, 42)
    assert [r.split for r in a.records] == [r.split for r in b.records]
    assert len(a.subset("train")) == 8
    c = split(_records(10), 0.8, 43)
    assert [r.split for r in a.records] != [r.split for r in c.records]


def test_split_rejects_bad_fraction():
    with pytest.raises(ContractError):
        split(_records(3), 1.0, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.floats(0.01, 0.99), st.integers(0, 2**63 - 1))
def test_split_is_a_partition(n, frac, seed):
    index = split(_records(n), frac, seed)
    train = {r.image_id for r in index.subset("train")}
    val = {r.image_id for r in index.subset("validation")}
    assert not train & val and len(train | val) == n
    assert len(train) == train_count(n, frac)
    assert len(train) == int(np.floor(frac * n + 1e-9))


def test_extract_rois_fixture_hand_count(fixture_root):
    index = ingest(fixture_root)
    rois = extract_rois(index, "D40", "all")
    assert len(rois) == 7
    assert [(r.image_id, r.annotation_index) for r in rois] == [
        ("img_000", 0), ("img_001", 0), ("img_001", 1), ("img_003", 0), ("img_003", 1),
        ("img_004", 0), ("img_004", 1)]
    first = rois[0]
    src = load_image(index.image_path(index.records[0]))
    assert first.image == crop(src, first.box)
    assert extract_rois(index, "D99", "all") == []


def test_extract_rois_count_equals_annotations(fixture_root):
    index = split(ingest(fixture_root), 0.8, 1)
    for subset in ("train", "validation", "all"):
        expected = sum(a.label == "D40" for r in index.subset(subset) for a in r.annotations)
        assert len(extract_rois(index, "D40", subset)) == expected


def test_index_round_trip_idempotent(fixture_root, tmp_path):
    index = split(ingest(fixture_root), 0.8, 7)
    save_index(index, tmp_path / "index.json")
    again = load_index(tmp_path / "index.json")
    assert again == index
    save_index(again, tmp_path / "index2.json")
    assert (tmp_path / "index.json").read_bytes() == (tmp_path / "index2.json").read_bytes()
