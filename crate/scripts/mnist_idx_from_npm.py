#!/usr/bin/env python3
"""Rebuild IDX image/label files from the digit JSON shipped in the npm `mnist` package.

The package stores each pixel as round(byte / 255, 3); the byte is recovered
exactly as round(value * 255). Samples are interleaved round-robin by digit so
any prefix of the file is roughly class-balanced.

usage: mnist_idx_from_npm.py <package/src/digits> <out_dir>
"""
import json
import struct
import sys
from pathlib import Path

PIXELS = 28 * 28


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    per_digit = []
    for d in range(10):
        data = json.loads((src / f"{d}.json").read_text())["data"]
        assert len(data) % PIXELS == 0
        raw = bytes(round(v * 255) for v in data)
        per_digit.append([raw[i:i + PIXELS] for i in range(0, len(raw), PIXELS)])

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[d] < len(per_digit[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_digit[d]):
                images.append(per_digit[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1

    out.mkdir(parents=True, exist_ok=True)
    n = len(images)
    with open(out / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.writelines(images)
    with open(out / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
