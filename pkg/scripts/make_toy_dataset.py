"""Write a small VOC-style road dataset with painted potholes (D40 boxes)."""
import argparse

from roadaug.toydata import e2e_layout, write_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root", help="output dataset directory")
    ap.add_argument("-n", type=int, default=15, help="number of images")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    write_dataset(args.root, e2e_layout(args.n), seed=args.seed)
    print(f"wrote {args.n} images to {args.root}")


if __name__ == "__main__":
    main()
