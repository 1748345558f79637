#!/usr/bin/env python3
"""Export scikit-learn's bundled handwritten digits (8x8, 10 classes) as IDX files.

The output is the MNIST-class desk dataset used by the training tests:
  digits-images-idx3-ubyte  (magic 0x00000803, N x 8 x 8 unsigned bytes)
  digits-labels-idx1-ubyte  (magic 0x00000801, N unsigned bytes)
Pixel intensities 0..16 are rescaled to 0..255.
"""
import argparse
import pathlib
import struct

import numpy as np
from sklearn.datasets import load_digits


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=pathlib.Path)
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    digits = load_digits()
    images = np.clip(np.round(digits.images * 255.0 / 16.0), 0, 255).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    n, h, w = images.shape

    with open(args.out_dir / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.tobytes())
    with open(args.out_dir / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} images of {h}x{w} to {args.out_dir}")


if __name__ == "__main__":
    main()
