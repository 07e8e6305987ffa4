"""Write the bundled 8x8 handwritten-digit set as IDX files (1000 train / 797 test)."""

import argparse
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

from stochact.data import write_idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/digits", help="output directory")
    ap.add_argument("--n-train", type=int, default=1000)
    args = ap.parse_args(argv)
    digits = load_digits()
    # pixel values are 0..16
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.n_train
    write_idx(out / "train-images-idx3-ubyte", images[:n])
    write_idx(out / "train-labels-idx1-ubyte", labels[:n])
    write_idx(out / "test-images-idx3-ubyte", images[n:])
    write_idx(out / "test-labels-idx1-ubyte", labels[n:])
    print(f"wrote {n} train / {len(images) - n} test digits to {out}")


if __name__ == "__main__":
    main()
