"""Synthesize a texture from a road exemplar and print the loss history."""
import argparse

import numpy as np

from roadaug.imaging import ImageBuffer, load_image, save_image
from roadaug.texturelab import TextureSynthConfig, make_bank, run_texture_synthesis
from roadaug.toydata import road_texture


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--source", help="exemplar image (default: a generated 32x32 road patch)")
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="texture.png")
    args = ap.parse_args()

    if args.source:
        src = load_image(args.source)
    else:
        src = ImageBuffer(road_texture(32, 32, np.random.default_rng(args.seed)))
    cfg = TextureSynthConfig(iterations=args.iterations, init_seed=args.seed)
    res = run_texture_synthesis(src, make_bank(args.seed), cfg)
    for i, v in enumerate(res.history):
        print(f"{i:3d}  {v:.6e}")
    print(f"ratio final/initial {res.history[-1] / res.history[0]:.4f}")
    save_image(res.image, args.out)


if __name__ == "__main__":
    main()
