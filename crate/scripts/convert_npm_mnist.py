#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the npm `mnist` package into
gzipped IDX files (the standard MNIST binary layout).

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/convert_npm_mnist.py package/src/digits data/mnist/raw

The digits are shuffled with a fixed seed and split 8,000 train / 2,000 test.
Pixels are stored as x/255 rounded to three decimals in the JSON files, so
round(v * 255) recovers the original bytes exactly.
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def main(src, dst, n_train=8000, seed=0):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            data = np.asarray(json.load(f)["data"], dtype=np.float64)
        data = np.round(data.reshape(-1, 784) * 255.0).astype(np.uint8)
        images.append(data)
        labels.append(np.full(len(data), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(seed).permutation(len(images))
    images, labels = images[order], labels[order]

    os.makedirs(dst, exist_ok=True)
    splits = {
        "train": (images[:n_train], labels[:n_train]),
        "t10k": (images[n_train:], labels[n_train:]),
    }
    for name, (x, y) in splits.items():
        with gzip.GzipFile(os.path.join(dst, f"{name}-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 2051, len(x), 28, 28))
            f.write(x.tobytes())
        with gzip.GzipFile(os.path.join(dst, f"{name}-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">II", 2049, len(y)))
            f.write(y.tobytes())
        print(name, len(x), np.bincount(y, minlength=10).tolist())


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
