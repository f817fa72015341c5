"""Train the WGAN-GP on 8x8 blobs and report the Wasserstein-estimate trend."""
import argparse
import time

import numpy as np

from roadaug import ganlab
from roadaug.toydata import blob_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = blob_dataset(args.samples, 8, seed=args.seed).reshape(args.samples, 64)
    cfg = ganlab.GanConfig(roi_side=8, total_steps=args.steps, seed=args.seed)
    t0 = time.perf_counter()
    ck = ganlab.train(data, cfg)
    west = np.abs([e[2] for e in ck.log])
    k = min(100, len(west))
    fake = ganlab.sample(ck, args.samples, 1)
    print(f"steps {args.steps} in {time.perf_counter() - t0:.1f}s, digest {ck.digest[:12]}")
    print(f"|W| first {k}: {west[:k].mean():.4f}  last {k}: {west[-k:].mean():.4f}")
    print(f"pixel mean data {data.mean():.4f}  generated {fake.mean():.4f}")


if __name__ == "__main__":
    main()
