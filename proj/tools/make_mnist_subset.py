#!/usr/bin/env python3
"""Write a class-balanced MNIST subset as an IDX image/label pair.

Source is the 5000-digit CSV shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns 0-255, then the label).
That file is sorted by digit, so the subset takes the first count/10 rows of
each digit and interleaves them (0, 1, ..., 9, 0, 1, ...).

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist --count 1000
"""

import argparse
import gzip
import io
import pathlib
import struct
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(source: pathlib.Path):
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as zf:
            raw = zf.read(MEMBER)
    else:
        raw = source.read_bytes()
    text = gzip.decompress(raw).decode("ascii")
    for line in io.StringIO(text):
        line = line.strip()
        if line:
            yield [int(float(v)) for v in line.split(",")]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", type=pathlib.Path, help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--count", type=int, default=1000)
    args = ap.parse_args()

    if args.count % 10:
        raise SystemExit("--count must be a multiple of 10")
    per_digit = args.count // 10
    by_digit = {d: [] for d in range(10)}
    for i, row in enumerate(read_rows(args.source)):
        if len(row) != 785:
            raise SystemExit(f"row {i} has {len(row)} columns, expected 785")
        bucket = by_digit[row[784]]
        if len(bucket) < per_digit:
            bucket.append(row)
    if any(len(b) < per_digit for b in by_digit.values()):
        raise SystemExit("source does not hold enough digits of every class")

    pixels = bytearray()
    labels = bytearray()
    for k in range(per_digit):
        for d in range(10):
            pixels.extend(by_digit[d][k][:784])
            labels.append(d)
    n = len(labels)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "images.idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + bytes(pixels))
    (args.out_dir / "labels.idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + bytes(labels))
    print(f"wrote {n} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
