#!/usr/bin/env python3
"""Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

    pip download mlxtend --no-deps -d /tmp/pkgs
    python3 tools/make_mnist_subset.py /tmp/pkgs/mlxtend-*.whl data/mnist5k

The subset is class-sorted; it is shuffled with a fixed seed and split
4000 train / 1000 test.
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = np.loadtxt(gzip.decompress(raw).decode().splitlines(), delimiter=",")
    x, y = rows[:, :-1], rows[:, -1].astype(int)
    order = np.random.RandomState(0).permutation(len(y))
    x, y = x[order], y[order]
    write_idx_images(out / "train-images-idx3-ubyte", x[:4000])
    write_idx_labels(out / "train-labels-idx1-ubyte", y[:4000])
    write_idx_images(out / "t10k-images-idx3-ubyte", x[4000:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", y[4000:])


if __name__ == "__main__":
    main()
