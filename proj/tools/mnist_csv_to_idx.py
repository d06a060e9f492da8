#!/usr/bin/env python3
"""Convert an MNIST CSV (784 pixel columns then the label, optionally gzipped)
into IDX image/label file pairs for training and testing."""

import argparse
import csv
import gzip
import os
import random
import struct


def read_rows(path):
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rt") as f:
        for row in csv.reader(f):
            if not row:
                continue
            values = [int(float(v)) for v in row]
            yield values[:-1], values[-1]


def write_pair(prefix, rows):
    n = len(rows)
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in rows))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=1000, help="rows held out for the test pair")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = list(read_rows(args.csv))
    for pixels, label in rows:
        if len(pixels) != 784 or not 0 <= label <= 9:
            raise SystemExit("unexpected row layout: %d pixels, label %d" % (len(pixels), label))
    random.Random(args.seed).shuffle(rows)
    os.makedirs(args.out_dir, exist_ok=True)
    write_pair(os.path.join(args.out_dir, "train"), rows[args.test:])
    write_pair(os.path.join(args.out_dir, "t10k"), rows[: args.test])
    print("wrote %d train / %d test samples to %s" % (len(rows) - args.test, args.test, args.out_dir))


if __name__ == "__main__":
    main()
