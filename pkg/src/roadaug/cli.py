"""Command-line entry point: one subcommand per pipeline stage plus reporting.

Every stage reads the JSON config, writes only under the output root and
echoes the effective config there. Progress goes to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import dataset, ganlab, pipeline
from .config import echo_config, parse_config, with_overrides
from .errors import InputError, NumericalError, RoadAugError
from .imaging import save_image
from .texturelab import run_texture_synthesis

log = logging.getLogger("roadaug")

EXIT_USAGE, EXIT_INPUT, EXIT_NUMERICAL = 1, 2, 3
COMMANDS = ("ingest", "extract-rois", "train-gan", "gen-gallery", "match",
            "synth-texture", "augment", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="roadaug", description="Road-damage ROI augmentation pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output root (overrides config 'out')")
    common.add_argument("--seed", type=int, help="global seed (overrides config 'seed')")
    common.add_argument("--jobs", type=int, help="worker processes for per-image stages")
    common.add_argument("--dry-run", action="store_true", help="augment: print the assignment only")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "ingest": "index and split the dataset, write index.json",
        "extract-rois": "crop target-class ROIs into rois/",
        "train-gan": "train the WGAN-GP on extracted ROIs, write checkpoint.json",
        "gen-gallery": "sample generated ROIs into the gallery directory",
        "match": "best gallery match per target ROI, write matches.jsonl",
        "synth-texture": "texture synthesis from each target ROI into textures/",
        "augment": "build the augmented dataset",
        "report": "compare metrics records against the baseline",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _index(cfg):
    """Split index from a prior ``ingest`` if present, else built in memory."""
    path = os.path.join(cfg.out, "index.json")
    if os.path.exists(path):
        return dataset.load_index(path)
    return dataset.split(dataset.ingest(cfg.dataset_root), cfg.split.fraction, cfg.split.seed)


def cmd_ingest(cfg, args):
    index = dataset.split(dataset.ingest(cfg.dataset_root), cfg.split.fraction, cfg.split.seed)
    dataset.save_index(index, os.path.join(cfg.out, "index.json"))
    n_train = len(index.subset("train"))
    log.info("ingest: %d images, %d train / %d validation", len(index), n_train, len(index) - n_train)


def cmd_extract_rois(cfg, args):
    rois = dataset.extract_rois(_index(cfg), cfg.target_class, cfg.roi_subset)
    out_dir = os.path.join(cfg.out, "rois")
    os.makedirs(out_dir, exist_ok=True)
    listing = []
    for r in rois:
        fname = f"{r.image_id}_{r.annotation_index}.png"
        save_image(r.image, os.path.join(out_dir, fname))
        listing.append({"file": fname, "image_id": r.image_id,
                        "annotation_index": r.annotation_index, "box": r.box.as_dict()})
    with open(os.path.join(cfg.out, "rois.json"), "w") as fh:
        json.dump(listing, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("extract-rois: %d %s ROIs -> %s", len(rois), cfg.target_class, out_dir)


def cmd_train_gan(cfg, args):
    rois = dataset.extract_rois(_index(cfg), cfg.target_class, cfg.roi_subset)
    total = cfg.gan.total_steps

    def progress(step, loss, w):
        if (step + 1) % max(1, total // 20) == 0:
            log.info("train-gan: step %d/%d critic_loss=%.5f W=%.5f", step + 1, total, loss, w)

    ckpt = ganlab.train([r.image for r in rois], cfg.gan, progress)
    path = os.path.join(cfg.out, "checkpoint.json")
    ckpt.save(path)
    log.info("train-gan: checkpoint %s (sha256 %s)", path, ckpt.digest[:12])


def cmd_gen_gallery(cfg, args):
    path = os.path.join(cfg.out, "checkpoint.json")
    if not os.path.exists(path):
        raise InputError(f"checkpoint not found: {path} (run train-gan first)")
    ckpt = ganlab.Checkpoint.load(path)
    manifest = ganlab.generate_gallery(ckpt, cfg.gallery.count, cfg.gallery.seed, cfg.gallery_dir)
    log.info("gen-gallery: %d ROIs -> %s", len(manifest), manifest.root)


def cmd_match(cfg, args):
    gallery = ganlab.load_gallery(cfg.gallery_dir)
    rows = pipeline.match_dataset(_index(cfg), gallery, cfg.ssim, cfg.target_class, cfg.roi_subset)
    path = os.path.join(cfg.out, "matches.jsonl")
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    log.info("match: %d ROIs -> %s", len(rows), path)


def cmd_synth_texture(cfg, args):
    bank = cfg.bank.build()
    out_dir = os.path.join(cfg.out, "textures")
    os.makedirs(out_dir, exist_ok=True)
    rois = dataset.extract_rois(_index(cfg), cfg.target_class, cfg.roi_subset)
    done = 0
    for r in rois:
        seed = pipeline.derive_seed(cfg.seed, r.image_id, r.annotation_index)
        tcfg = dataclasses.replace(cfg.texture, init_seed=seed)
        try:
            res = run_texture_synthesis(r.image, bank, tcfg)
        except InputError as exc:
            log.warning("synth-texture: skipping %s/%d: %s", r.image_id, r.annotation_index, exc)
            continue
        save_image(res.image, os.path.join(out_dir, f"texture_{r.image_id}_{r.annotation_index}.png"))
        done += 1
    log.info("synth-texture: %d of %d ROIs -> %s", done, len(rois), out_dir)


def cmd_augment(cfg, args):
    gallery = ganlab.load_gallery(cfg.gallery_dir)
    records, assignment, skipped = pipeline.augment_dataset(
        _index(cfg), gallery, cfg.bank.build(), cfg.severity_presets(), cfg.policy, cfg.ssim, cfg.out,
        target_class=cfg.target_class, texture=cfg.texture, seed=cfg.seed,
        fraction=cfg.augment_fraction, jobs=cfg.jobs, tol=cfg.blend.tol,
        mixed_gradients=cfg.blend.mixed_gradients, dry_run=args.dry_run)
    if args.dry_run:
        for image_id, labels in assignment.items():
            print(f"{image_id}\t{','.join(labels)}")
        return
    log.info("augment: %d augmented images, %d skipped -> %s", len(records), len(skipped), cfg.out)


def cmd_report(cfg, args):
    if cfg.metrics is None:
        raise InputError("report needs 'metrics' (path to a metrics JSON file) in the config")
    table, text = pipeline.report(pipeline.load_metrics(cfg.metrics), cfg.baseline)
    pipeline.write_report(table, text, cfg.out)
    sys.stderr.write(text)


HANDLERS = {
    "ingest": cmd_ingest, "extract-rois": cmd_extract_rois, "train-gan": cmd_train_gan,
    "gen-gallery": cmd_gen_gallery, "match": cmd_match, "synth-texture": cmd_synth_texture,
    "augment": cmd_augment, "report": cmd_report,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "roadaug: error: a command is required")
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    try:
        cfg = with_overrides(parse_config(args.config), args.out, args.seed, args.jobs)
        if not args.dry_run:
            echo_config(cfg, cfg.out)
        HANDLERS[args.command](cfg, args)
    except NumericalError as exc:
        sys.stderr.write(f"error: numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (RoadAugError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
