#!/usr/bin/env python3
"""Build IDX-format MNIST files from the digits bundled in the npm `mnist` package.

Used when the canonical MNIST mirrors are unreachable. The npm package carries
10000 real MNIST digits as 3-decimal floats; they are requantized to bytes,
shuffled with a fixed seed and split into train/test IDX files that the C++
loader reads unchanged.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_proxy.py package/src/digits data/mnist --test 2000
"""
import argparse
import json
import pathlib
import random
import struct


def write_idx(path, magic, dims, payload):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        raw = json.loads((pathlib.Path(args.digits_dir) / f"{label}.json").read_text())["data"]
        for i in range(len(raw) // 784):
            px = bytes(min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784])
            samples.append((px, label))

    random.Random(args.seed).shuffle(samples)
    test, train = samples[: args.test], samples[args.test :]
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for prefix, split in (("train", train), ("t10k", test)):
        write_idx(out / f"{prefix}-images-idx3-ubyte", 2051, (len(split), 28, 28),
                  b"".join(px for px, _ in split))
        write_idx(out / f"{prefix}-labels-idx1-ubyte", 2049, (len(split),),
                  bytes(lbl for _, lbl in split))
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")


if __name__ == "__main__":
    main()
