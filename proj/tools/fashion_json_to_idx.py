#!/usr/bin/env python3
"""Convert the per-class JSON dump of FashionMNIST (npm package `fashion-mnist`,
src/clothes/<k>.json, each {"data": [[784 bytes], ...]}) into the four IDX files
expected by `mcel train --dataset fashion`.

The first 6000 images of every class go to the training split and the next 1000
to the test split, giving the standard 60000/10000 sizes. Classes are interleaved
round-robin so neither split is sorted by label.
"""
import argparse
import json
import pathlib
import struct

TRAIN_PER_CLASS = 6000
TEST_PER_CLASS = 1000


def write_idx(images, labels, prefix, out):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("clothes_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    args = ap.parse_args()

    per_class = []
    for k in range(10):
        data = json.loads((args.clothes_dir / f"{k}.json").read_text())["data"]
        # the dump contains a few empty placeholder rows
        data = [img for img in data if img]
        if len(data) < TRAIN_PER_CLASS + TEST_PER_CLASS:
            raise SystemExit(f"class {k}: only {len(data)} images")
        per_class.append(data)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for prefix, lo, hi in (("train", 0, TRAIN_PER_CLASS),
                           ("t10k", TRAIN_PER_CLASS, TRAIN_PER_CLASS + TEST_PER_CLASS)):
        images, labels = [], []
        for i in range(lo, hi):
            for k in range(10):
                img = per_class[k][i]
                if len(img) != 784 or min(img) < 0 or max(img) > 255:
                    raise SystemExit(f"class {k} image {i}: bad pixel data")
                images.append(img)
                labels.append(k)
        write_idx(images, labels, prefix, args.out_dir)
        print(f"{prefix}: {len(labels)} samples")


if __name__ == "__main__":
    main()
