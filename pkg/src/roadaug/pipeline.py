"""End-to-end augmentation: match, synthesize texture, mix per severity, embed, select.

Also holds the metric arithmetic used to compare detector runs (the
detectors themselves are trained elsewhere; their P/R/F1/mAP are inputs).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np

from .blend import SEVERITY_ORDER, poisson_blend, weighted_mix
from .dataset import train_count, voc_xml
from .errors import ContractError, InputError, RoadAugError
from .ganlab import load_gallery_images
from .imaging import ImageBuffer, crop, load_image, resize_bilinear, save_image, to_gray
from .similarity import SsimParams, match_roi, prepare
from .texturelab import TextureSynthConfig, run_texture_synthesis

log = logging.getLogger(__name__)

UNMIXED = "unmixed"
MODES = ("unmixed_only", "single_severity", "all_three", "random_one_to_one_to_one")


def derive_seed(global_seed, image_id, annotation_index):
    """64-bit seed from (global seed, image id, annotation index) via BLAKE2b."""
    key = f"{int(global_seed)}\x1f{image_id}\x1f{int(annotation_index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SelectionPolicy:
    mode: str = "random_one_to_one_to_one"
    label: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"policy.mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "single_severity" and not self.label:
            raise ContractError("single_severity policy needs a label")


def select_versions(eligible_ids, policy, labels=SEVERITY_ORDER):
    """Map each eligible id to the list of version labels it contributes.

    In random mode the ids are shuffled with the policy seed and the
    (also shuffled) labels are dealt round-robin, so counts are exactly
    balanced up to the remainder and each id is equally likely to get any label.
    """
    ids = list(eligible_ids)
    labels = list(labels)
    if policy.mode == "unmixed_only":
        return {i: [UNMIXED] for i in ids}
    if policy.mode == "single_severity":
        if policy.label not in labels:
            raise ContractError(f"severity {policy.label!r} is not in the preset table {labels}")
        return {i: [policy.label] for i in ids}
    if policy.mode == "all_three":
        return {i: list(labels) for i in ids}
    if not ids:
        raise ContractError("random selection needs at least one eligible image")
    rng = np.random.default_rng(policy.seed)
    order = rng.permutation(len(ids))
    deal = [labels[j] for j in rng.permutation(len(labels))]
    out = {}
    for pos, idx in enumerate(order):
        out[ids[int(idx)]] = [deal[pos % len(deal)]]
    return {i: out[i] for i in ids}


# --- metrics --------------------------------------------------------------

def improvement_rate(f1_origin, f1_augmented):
    """Relative F1 change in percent."""
    if not f1_origin > 0:
        raise InputError(f"baseline F1 must be > 0, got {f1_origin}")
    return 100.0 * (f1_augmented - f1_origin) / f1_origin


@dataclass(frozen=True)
class MetricsRecord:
    label: str
    f1: float | None = None
    precision: float | None = None
    recall: float | None = None
    map: float | None = None

    def __post_init__(self):
        for name in ("f1", "precision", "recall", "map"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InputError(f"{self.label}: {name}={v} outside [0, 1]")
        p, r, f = self.precision, self.recall, self.f1
        if None not in (p, r, f) and p + r > 0:
            # reported values are rounded to 3 decimals
            if abs(f - 2 * p * r / (p + r)) > 0.005:
                raise InputError(f"{self.label}: f1={f} inconsistent with P={p}, R={r}")


def load_metrics(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read metrics {path}: {exc}") from None
    rows = data["records"] if isinstance(data, dict) else data
    try:
        return [MetricsRecord(**row) for row in rows]
    except TypeError as exc:
        raise InputError(f"{path}: bad metrics record ({exc})") from None


def _delta(a, b):
    return None if a is None or b is None else round(b - a, 10)


def report(metrics, baseline_label):
    """Per-label deltas and F1 improvement rate against ``baseline_label``.

    Returns ``(table_dict, text)``.
    """
    by_label = {m.label: m for m in metrics}
    if baseline_label not in by_label:
        raise InputError(f"baseline {baseline_label!r} not among metrics labels {sorted(by_label)}")
    base = by_label[baseline_label]
    rows = []
    for m in metrics:
        rows.append({
            "label": m.label,
            "f1": m.f1, "precision": m.precision, "recall": m.recall, "map": m.map,
            "f1_delta": _delta(base.f1, m.f1),
            "map_delta": _delta(base.map, m.map),
            "precision_delta": _delta(base.precision, m.precision),
            "recall_delta": _delta(base.recall, m.recall),
            "f1_improvement_pct": (None if m.f1 is None or base.f1 is None
                                   else improvement_rate(base.f1, m.f1)),
        })
    table = {"baseline": baseline_label, "rows": rows}
    return table, format_report(table)


def format_report(table):
    def cell(v, fmt):
        return "-" if v is None else format(v, fmt)
    lines = [f"baseline: {table['baseline']}",
             f"{'label':<28}{'F1':>7}{'mAP':>7}{'dF1':>8}{'dmAP':>8}{'rate%':>8}"]
    for r in table["rows"]:
        lines.append(f"{r['label']:<28}{cell(r['f1'], '.3f'):>7}{cell(r['map'], '.3f'):>7}"
                     f"{cell(r['f1_delta'], '+.3f'):>8}{cell(r['map_delta'], '+.3f'):>8}"
                     f"{cell(r['f1_improvement_pct'], '+.1f'):>8}")
    return "\n".join(lines) + "\n"


def write_report(table, text, out_root):
    os.makedirs(out_root, exist_ok=True)
    with open(os.path.join(out_root, "report.json"), "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_root, "report.txt"), "w") as fh:
        fh.write(text)


# --- augmentation ---------------------------------------------------------

@dataclass
class AugmentedRecord:
    source_id: str
    severity: str
    matches: list
    output_path: str
    annotations: list

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class _Context:
    root: str
    target_class: str
    gallery: object
    gallery_prepared: tuple
    gallery_images: tuple
    bank: object
    presets: tuple
    ssim_params: SsimParams
    texture: TextureSynthConfig
    seed: int
    tol: float
    mixed_gradients: bool


def match_dataset(index, gallery, params, target_class="D40", subset="train", candidates=None):
    """One ``{image_id, annotation_index, roi_id, score}`` dict per target-class ROI."""
    if len(gallery) == 0:
        raise InputError(f"gallery is empty: {gallery.root}")
    if candidates is None:
        candidates = [prepare(im, params) for im in load_gallery_images(gallery)]
    rows = []
    for rec in index.subset(subset):
        wanted = [(k, a) for k, a in enumerate(rec.annotations) if a.label == target_class]
        if not wanted:
            continue
        img = load_image(index.image_path(rec))
        for k, ann in wanted:
            roi_id, score, _ = match_roi(crop(img, ann.box), gallery, params, candidates)
            rows.append({"image_id": rec.image_id, "annotation_index": k,
                         "roi_id": roi_id, "score": score})
    return rows


def _process_image(ctx, item):
    """Build every requested version of one image. Returns (image_id, versions, matches) or an error string."""
    rec, labels = item
    try:
        image = load_image(os.path.join(ctx.root, rec.path))
        canvases = {lab: image for lab in labels}
        matches = []
        need_texture = any(lab != UNMIXED for lab in labels)
        presets = {p.label: p for p in ctx.presets}
        for k, ann in enumerate(rec.annotations):
            if ann.label != ctx.target_class:
                continue
            roi = crop(image, ann.box)
            roi_id, score, j = match_roi(roi, ctx.gallery, ctx.ssim_params, ctx.gallery_prepared)
            matches.append({"annotation_index": k, "roi_id": roi_id, "score": score})
            generated = resize_bilinear(ctx.gallery_images[j], ann.box.height, ann.box.width)
            texture = None
            if need_texture:
                cfg = replace(ctx.texture, init_seed=derive_seed(ctx.seed, rec.image_id, k))
                texture = run_texture_synthesis(roi, ctx.bank, cfg).image
            for lab in labels:
                if lab == UNMIXED:
                    patch = generated
                else:
                    p = presets[lab]
                    patch = weighted_mix(generated, texture, p.alpha, p.beta)
                canvases[lab] = poisson_blend(canvases[lab], patch, ann.box, ctx.tol, ctx.mixed_gradients)
        return rec.image_id, canvases, matches
    except RoadAugError as exc:
        return rec.image_id, None, f"{type(exc).__name__}: {exc}"


def eligible_records(index, target_class, fraction=1.0, seed=0):
    """Training records with at least one target-class box, ordered by image id."""
    if any(r.split is None for r in index.records):
        raise ContractError("index must be split before augmentation")
    recs = [r for r in index.subset("train") if any(a.label == target_class for a in r.annotations)]
    if fraction < 1.0:
        keep = np.random.default_rng([seed, 2]).permutation(len(recs))[:train_count(len(recs), fraction)]
        recs = [recs[i] for i in sorted(int(k) for k in keep)]
    return recs


def augment_dataset(index, gallery, bank, presets, policy, ssim_params, out_root, *,
                    target_class="D40", texture=TextureSynthConfig(), seed=0, fraction=1.0,
                    jobs=1, tol=1e-8, mixed_gradients=False, dry_run=False):
    """Run matching, texture synthesis, mixing and embedding for every eligible image.

    Writes ``images/``, ``annotations/`` and ``augmentation_manifest.json``
    under ``out_root`` (nothing with ``dry_run``) and returns
    ``(records, assignment, skipped)``.
    """
    if gallery is None or len(gallery) == 0:
        raise InputError(f"gallery is empty: {getattr(gallery, 'root', '<none>')}")
    presets = tuple(presets)
    labels = [p.label for p in presets]
    if policy.mode in ("all_three", "random_one_to_one_to_one") and len(labels) < 1:
        raise ContractError("policy needs at least one severity preset")
    eligible = eligible_records(index, target_class, fraction, policy.seed)
    assignment = select_versions([r.image_id for r in eligible], policy, labels) if eligible else {}
    if dry_run:
        return [], assignment, []

    gallery_images = tuple(to_gray(im) for im in load_gallery_images(gallery))
    ctx = _Context(
        root=index.root, target_class=target_class,
        gallery=gallery,
        gallery_prepared=tuple(prepare(im, ssim_params) for im in gallery_images),
        gallery_images=gallery_images, bank=bank, presets=presets,
        ssim_params=ssim_params, texture=texture, seed=seed, tol=tol,
        mixed_gradients=mixed_gradients)
    items = [(r, assignment[r.image_id]) for r in eligible]
    work = partial(_process_image, ctx)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]

    img_dir = os.path.join(out_root, "images")
    ann_dir = os.path.join(out_root, "annotations")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(ann_dir, exist_ok=True)

    # originals of the training split are part of the output dataset
    for rec in index.subset("train"):
        img = load_image(index.image_path(rec))
        _write_pair(img, rec.annotations, img_dir, ann_dir, rec.image_id)

    records, skipped = [], []
    for (rec, labels_for), (image_id, canvases, extra) in zip(items, results):
        if canvases is None:
            log.warning("skipping %s: %s", image_id, extra)
            skipped.append({"image_id": image_id, "reason": extra})
            continue
        for lab in labels_for:
            stem = f"{image_id}_{lab}"
            _write_pair(canvases[lab], rec.annotations, img_dir, ann_dir, stem)
            records.append(AugmentedRecord(image_id, lab, extra, os.path.join("images", stem + ".png"),
                                           [a.as_dict() for a in rec.annotations]))
    manifest = {
        "target_class": target_class,
        "policy": asdict(policy),
        "presets": [asdict(p) for p in presets],
        "assignment": assignment,
        "records": [r.as_dict() for r in records],
        "skipped": skipped,
    }
    with open(os.path.join(out_root, "augmentation_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if skipped:
        log.warning("augmentation skipped %d of %d eligible images", len(skipped), len(items))
    return records, assignment, skipped


def _write_pair(image, annotations, img_dir, ann_dir, stem):
    save_image(image, os.path.join(img_dir, stem + ".png"))
    with open(os.path.join(ann_dir, stem + ".xml"), "wb") as fh:
        fh.write(voc_xml(stem + ".png", image.width, image.height, image.channels, annotations))
