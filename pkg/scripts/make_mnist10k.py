"""Rebuild data/mnist10k-*.gz from the digits bundled in the `mnist` npm package.

The npm package (https://github.com/cazala/mnist, v1.1.0) ships the first
10,000 MNIST training images as JSON arrays of ``round(byte / 255, 3)``.
That rounding is injective over 0..255, so the original bytes are recovered
exactly.  Run::

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python scripts/make_mnist10k.py package/src/digits data/
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(digits_dir, out_dir):
    digits_dir, out_dir = Path(digits_dir), Path(out_dir)
    lookup = {round(b / 255, 3): b for b in range(256)}
    images, labels = [], []
    for digit in range(10):
        values = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        raw = np.array([lookup[round(v, 3)] for v in values], dtype=np.uint8)
        raw = raw.reshape(-1, 784)
        images.append(raw)
        labels.append(np.full(len(raw), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    out_dir.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archives byte-reproducible
    with open(out_dir / "mnist10k-images-idx3-ubyte.gz", "wb") as raw_f:
        with gzip.GzipFile(fileobj=raw_f, mode="wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
            f.write(images.tobytes())
    with open(out_dir / "mnist10k-labels-idx1-ubyte.gz", "wb") as raw_f:
        with gzip.GzipFile(fileobj=raw_f, mode="wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x801, len(labels)))
            f.write(labels.tobytes())
    print(f"wrote {len(images)} images to {out_dir}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
