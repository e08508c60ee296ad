#!/usr/bin/env python3
"""Build a gzipped IDX copy of the 10,000 MNIST digits bundled in the npm `mnist` package.

Usage:
    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist

The package stores pixels as fractions in [0, 1] rounded to three decimals; they are
mapped back to bytes with round(v * 255). Rows are shuffled with a fixed seed so the
files look like an ordinary MNIST distribution instead of being grouped by digit.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 1
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        if len(raw) % 784:
            raise ValueError(f"{digit}.json: length {len(raw)} is not a multiple of 784")
        for start in range(0, len(raw), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in raw[start:start + 784])
            samples.append((pixels, digit))

    random.Random(20200817).shuffle(samples)

    with gzip.GzipFile(dst / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as out:
        out.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            out.write(pixels)
    with gzip.GzipFile(dst / "mnist10k-labels-idx1-ubyte.gz", "wb", mtime=0) as out:
        out.write(struct.pack(">II", 0x00000801, len(samples)))
        out.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
