#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into gzipped IDX files.

The npm package ships 10000 MNIST digits as JSON arrays of pixel intensities
in [0, 1] (three decimals). This script rebuilds byte pixels, splits the
digits 8000/2000 (every fifth sample of each class goes to the test split)
and writes the four standard MNIST file names so the regular IDX loader can
read them.

usage: mnist_npm_to_idx.py <npm-package-dir> <out-dir>
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src = Path(sys.argv[1]) / "src" / "digits"
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(flat) // 784
        for i in range(count):
            px = [min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784]]
            (test if i % 5 == 4 else train).append((px, digit))
    rng = random.Random(20151119)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, split in (("train", train), ("t10k", test)):
        write_images(out / f"{name}-images-idx3-ubyte.gz", [p for p, _ in split])
        write_labels(out / f"{name}-labels-idx1-ubyte.gz", [l for _, l in split])
    print(f"train={len(train)} test={len(test)} -> {out}")


if __name__ == "__main__":
    main()
