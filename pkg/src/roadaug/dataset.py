"""RDD-style dataset ingestion (Pascal VOC XML), seeded train/validation split, ROI extraction.

Layout on disk::

    <root>/images/<stem>.png|jpg
    <root>/annotations/<stem>.xml

The canonical re-serialization is ``index.json`` (see :func:`save_index`).
"""
from __future__ import annotations

import json
import logging
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .errors import ContractError, InputError
from .imaging import Box2D, crop, load_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SUBSETS = ("train", "validation", "all")


@dataclass(frozen=True)
class Annotation:
    label: str
    box: Box2D

    def as_dict(self):
        return {"label": self.label, **self.box.as_dict()}


@dataclass(frozen=True)
class AnnotatedImage:
    image_id: str
    path: str
    width: int
    height: int
    annotations: tuple = ()
    split: str | None = None

    def as_dict(self):
        return {
            "image_id": self.image_id,
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "split": self.split,
            "annotations": [a.as_dict() for a in self.annotations],
        }


@dataclass(frozen=True)
class DatasetIndex:
    root: str
    records: tuple = ()
    train_fraction: float | None = None
    split_seed: int | None = None

    def __len__(self):
        return len(self.records)

    def subset(self, name):
        if name not in SUBSETS:
            raise ContractError(f"subset must be one of {SUBSETS}, got {name!r}")
        if name == "all":
            return list(self.records)
        return [r for r in self.records if r.split == name]

    def image_path(self, record):
        return os.path.join(self.root, record.path)

    def as_dict(self):
        return {
            "root": self.root,
            "train_fraction": self.train_fraction,
            "split_seed": self.split_seed,
            "records": [r.as_dict() for r in self.records],
        }


def _int_field(node, tag, xml_path):
    el = node.find(tag)
    if el is None or el.text is None:
        raise InputError(f"{xml_path}: missing <{tag}>")
    try:
        return int(round(float(el.text.strip())))
    except ValueError:
        raise InputError(f"{xml_path}: <{tag}> is not a number: {el.text!r}") from None


def parse_voc(xml_path):
    """Return ``[(label, xmin, ymin, xmax, ymax), ...]`` from a VOC annotation file."""
    try:
        tree = ET.parse(xml_path)
    except (ET.ParseError, OSError) as exc:
        raise InputError(f"malformed annotation file {xml_path}: {exc}") from None
    objects = []
    for obj in tree.getroot().iter("object"):
        name = obj.findtext("name")
        if name is None or not name.strip():
            raise InputError(f"{xml_path}: <object> without a <name>")
        bnd = obj.find("bndbox")
        if bnd is None:
            raise InputError(f"{xml_path}: object '{name.strip()}' has no <bndbox>")
        objects.append((name.strip(),) + tuple(_int_field(bnd, t, xml_path)
                                               for t in ("xmin", "ymin", "xmax", "ymax")))
    return objects


def _clamp_box(raw, width, height, where):
    label, x0, y0, x1, y1 = raw
    box = Box2D(max(0, x0), max(0, y0), min(width, x1), min(height, y1))
    if box != Box2D(x0, y0, x1, y1):
        log.warning("%s: box %s for '%s' clamped to image bounds %dx%d",
                    where, (x0, y0, x1, y1), label, width, height)
    if box.xmin >= box.xmax or box.ymin >= box.ymax:
        raise InputError(f"{where}: box {(x0, y0, x1, y1)} for '{label}' is empty after clamping")
    return Annotation(label, box)


def _find_image(images_dir, stem):
    for suffix in IMAGE_SUFFIXES:
        for cand in (stem + suffix, stem + suffix.upper()):
            p = os.path.join(images_dir, cand)
            if os.path.exists(p):
                return cand
    return None


def ingest(root):
    """Build an index with one record per annotation file, ordered by image id."""
    root = os.fspath(root)
    ann_dir = os.path.join(root, "annotations")
    img_dir = os.path.join(root, "images")
    if not os.path.isdir(ann_dir) or not os.path.isdir(img_dir):
        raise InputError(f"dataset root {root} must contain 'images/' and 'annotations/'")
    records = []
    for name in sorted(os.listdir(ann_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() != ".xml":
            continue
        xml_path = os.path.join(ann_dir, name)
        objects = parse_voc(xml_path)
        img_name = _find_image(img_dir, stem)
        if img_name is None:
            raise InputError(f"image for annotation '{stem}' not found in {img_dir}")
        try:
            with Image.open(os.path.join(img_dir, img_name)) as im:
                width, height = im.size
        except OSError as exc:
            raise InputError(f"cannot read image for '{stem}': {exc}") from None
        anns = tuple(_clamp_box(o, width, height, xml_path) for o in objects)
        records.append(AnnotatedImage(stem, os.path.join("images", img_name), width, height, anns))
    records.sort(key=lambda r: r.image_id)
    return DatasetIndex(root=root, records=tuple(records))


def train_count(n, train_fraction):
    # guard against 0.29 * 100 = 28.999999999999996
    return int(math.floor(train_fraction * n + 1e-9))


def split(index, train_fraction=0.8, seed=0):
    """Seeded shuffle, first ``floor(train_fraction * N)`` records become 'train'."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(index.records)
    order = np.random.default_rng(seed).permutation(n)
    n_train = train_count(n, train_fraction)
    train = set(int(i) for i in order[:n_train])
    records = tuple(replace(r, split="train" if i in train else "validation")
                    for i, r in enumerate(index.records))
    return replace(index, records=records, train_fraction=train_fraction, split_seed=seed)


@dataclass(frozen=True)
class RoiEntry:
    image_id: str
    annotation_index: int
    box: Box2D
    image: object = field(repr=False, compare=False)


def extract_rois(index, class_label, subset="train", images=None):
    """Crop every annotation labelled ``class_label`` in the chosen subset.

    ``images`` may map image_id to an already-loaded ImageBuffer.
    """
    if not class_label:
        raise ContractError("class_label must be non-empty")
    out = []
    for rec in index.subset(subset):
        wanted = [(k, a) for k, a in enumerate(rec.annotations) if a.label == class_label]
        if not wanted:
            continue
        img = images[rec.image_id] if images and rec.image_id in images else load_image(index.image_path(rec))
        for k, ann in wanted:
            try:
                roi = crop(img, ann.box)
            except ContractError as exc:
                raise ContractError(f"{rec.image_id} annotation {k} ({ann.label}): {exc}") from exc
            out.append(RoiEntry(rec.image_id, k, ann.box, roi))
    return out


# --- manifest -------------------------------------------------------------

def save_index(index, path):
    with open(path, "w") as fh:
        json.dump(index.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_index(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read index {path}: {exc}") from None
    try:
        records = tuple(
            AnnotatedImage(
                r["image_id"], r["path"], int(r["width"]), int(r["height"]),
                tuple(Annotation(a["label"], Box2D(a["xmin"], a["ymin"], a["xmax"], a["ymax"]))
                      for a in r["annotations"]),
                r.get("split"))
            for r in data["records"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed index ({exc})") from None
    return DatasetIndex(data["root"], records, data.get("train_fraction"), data.get("split_seed"))


def voc_xml(filename, width, height, depth, annotations):
    """Serialize annotations as a VOC XML document (bytes)."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = filename
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(width)
    ET.SubElement(size, "height").text = str(height)
    ET.SubElement(size, "depth").text = str(depth)
    for ann in annotations:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = ann.label
        bnd = ET.SubElement(obj, "bndbox")
        for key, val in ann.box.as_dict().items():
            ET.SubElement(bnd, key).text = str(val)
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8") + b"\n"
