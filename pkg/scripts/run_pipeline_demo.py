"""Every CLI stage on a generated toy dataset, with a small GAN.

Equivalent to running `roadaug <stage> --config <cfg>` for each stage in turn.
"""
import argparse
import json
import os
import sys

from roadaug.cli import main as cli
from roadaug.toydata import e2e_layout, write_dataset

STAGES = ("ingest", "extract-rois", "train-gan", "gen-gallery", "match", "synth-texture", "augment")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("workdir")
    ap.add_argument("--images", type=int, default=15)
    ap.add_argument("--gan-steps", type=int, default=200)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    data = os.path.join(args.workdir, "data")
    write_dataset(data, e2e_layout(args.images))
    cfg = {
        "dataset_root": data,
        "out": os.path.join(args.workdir, "out"),
        "roi_subset": "train",
        "jobs": args.jobs,
        "gan": {"noise_dim": 16, "roi_side": 32, "hidden": [64, 128],
                "total_steps": args.gan_steps, "batch_size": 8},
        "gallery": {"count": 32},
    }
    path = os.path.join(args.workdir, "config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2)
    for stage in STAGES:
        code = cli([stage, "--config", path])
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
