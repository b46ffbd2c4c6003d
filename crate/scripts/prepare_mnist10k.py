#!/usr/bin/env python3
"""Build an IDX-format MNIST subset from the 10,000 digits bundled in the
`mnist` npm package (MIT licensed, digits from the MNIST database).

Usage: python3 scripts/prepare_mnist10k.py [OUT_DIR]

Writes gzip-compressed IDX files: 8,000 training and 2,000 evaluation
digits, shuffled with a fixed seed so the split is reproducible.
"""
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

import numpy as np

OUT = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
    os.path.dirname(__file__), "..", "data", "mnist10k")
N_TRAIN = 8000
SEED = 20210101


def write_idx(path, array, magic):
    dims = array.shape
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archives byte-reproducible
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as f:
            f.write(header + array.astype(np.uint8).tobytes())


def main():
    os.makedirs(OUT, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        images, labels = [], []
        for digit in range(10):
            path = os.path.join(tmp, "package", "src", "digits", f"{digit}.json")
            with open(path) as f:
                data = np.asarray(json.load(f)["data"], dtype=np.float64)
            pixels = np.rint(data * 255.0).clip(0, 255).astype(np.uint8)
            pixels = pixels.reshape(-1, 28, 28)
            images.append(pixels)
            labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(SEED).permutation(len(labels))
    images, labels = images[order], labels[order]

    write_idx(os.path.join(OUT, "train-images-idx3-ubyte.gz"), images[:N_TRAIN], 0x803)
    write_idx(os.path.join(OUT, "train-labels-idx1-ubyte.gz"), labels[:N_TRAIN], 0x801)
    write_idx(os.path.join(OUT, "t10k-images-idx3-ubyte.gz"), images[N_TRAIN:], 0x803)
    write_idx(os.path.join(OUT, "t10k-labels-idx1-ubyte.gz"), labels[N_TRAIN:], 0x801)
    print(f"wrote {N_TRAIN} train / {len(labels) - N_TRAIN} eval digits to {OUT}")


if __name__ == "__main__":
    main()
