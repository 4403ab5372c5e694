#!/usr/bin/env python3
"""Write scikit-learn's bundled 8x8 handwritten digits as IDX files.

Pixel intensities (0..16) are rescaled to 0..255 so the files look like any
other unsigned-byte IDX image set.
"""
import argparse
import struct
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def write_idx(path, array, magic):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for dim in array.shape:
            f.write(struct.pack(">I", dim))
        f.write(array.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    digits = load_digits()
    images = np.clip(np.rint(digits.images * 255.0 / 16.0), 0, 255)
    write_idx(out / "digits-images.idx", images, 0x00000803)
    write_idx(out / "digits-labels.idx", digits.target, 0x00000801)
    print(f"wrote {images.shape[0]} images of {images.shape[1]}x{images.shape[2]} to {out}")


if __name__ == "__main__":
    main()
