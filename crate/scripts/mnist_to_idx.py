#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package into IDX files.

Usage: mnist_to_idx.py <path-to-unpacked-npm-package> <output-dir>

Produces a deterministic 8,000 / 2,000 train/test split of the 10,000 digits.
"""
import json
import os
import struct
import sys

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            data = np.asarray(json.load(f)["data"], dtype=np.float64)
        rows = data.reshape(-1, 784)
        images.append(np.rint(rows * 255.0).clip(0, 255))
        labels.append(np.full(len(rows), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    perm = np.random.default_rng(20221014).permutation(len(labels))
    images, labels = images[perm], labels[perm]
    os.makedirs(out, exist_ok=True)
    write_images(os.path.join(out, "train-images-idx3-ubyte"), images[:8000])
    write_labels(os.path.join(out, "train-labels-idx1-ubyte"), labels[:8000])
    write_images(os.path.join(out, "t10k-images-idx3-ubyte"), images[8000:])
    write_labels(os.path.join(out, "t10k-labels-idx1-ubyte"), labels[8000:])


if __name__ == "__main__":
    main()
