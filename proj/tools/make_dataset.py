#!/usr/bin/env python3
"""Provision an MNIST-format dataset (IDX files) for the test harness.

Prefers real MNIST when available: point --source (or env DCONFUSE_MNIST_SOURCE)
at a directory holding the four canonical idx files and they are copied as-is.
Otherwise renders a deterministic surrogate: font-rendered digits (several
DejaVu faces) with random size, offset, rotation and pixel noise, written in
the same IDX layout. The surrogate keeps the harness self-contained on
machines where the original dataset cannot be downloaded.
"""

import argparse
import os
import shutil
import struct
import sys

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]

FONTS = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSerif.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSerif-Bold.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSansMono.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSansMono-Bold.ttf",
]


def have_all(directory):
    return all(os.path.isfile(os.path.join(directory, f)) for f in FILES)


def write_idx(outdir, prefix, images, labels):
    import numpy as np

    n, rows, cols = images.shape
    with open(os.path.join(outdir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())
    with open(os.path.join(outdir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.astype(np.uint8).tobytes())


def render(count, rng):
    import numpy as np
    from PIL import Image, ImageFont, ImageDraw

    fonts = {}
    for path in FONTS:
        for size in range(17, 24):
            try:
                fonts[(path, size)] = ImageFont.truetype(path, size)
            except OSError:
                pass
    if not fonts:
        sys.exit("no usable fonts found for the surrogate dataset")

    labels = np.tile(np.arange(10), count // 10 + 1)[:count]
    rng.shuffle(labels)
    images = np.zeros((count, 28, 28), dtype=np.uint8)
    font_paths = [p for p in FONTS if any(k[0] == p for k in fonts)]
    for i in range(count):
        digit = str(labels[i])
        path = font_paths[rng.randint(len(font_paths))]
        size = rng.randint(17, 24)
        font = fonts[(path, size)]
        canvas = Image.new("L", (48, 48), 0)
        draw = ImageDraw.Draw(canvas)
        x0, y0, x1, y1 = draw.textbbox((0, 0), digit, font=font)
        dx = (48 - (x1 - x0)) / 2 - x0 + rng.uniform(-2.5, 2.5)
        dy = (48 - (y1 - y0)) / 2 - y0 + rng.uniform(-2.5, 2.5)
        draw.text((dx, dy), digit, fill=255, font=font)
        canvas = canvas.rotate(rng.uniform(-10, 10), resample=Image.BILINEAR, center=(24, 24))
        img = np.asarray(canvas.crop((10, 10, 38, 38)), dtype=np.float64)
        img *= rng.uniform(0.85, 1.0)
        img += rng.normal(0.0, 5.0, img.shape)
        images[i] = np.clip(img, 0, 255).astype(np.uint8)
    return images, labels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--outdir", required=True)
    ap.add_argument("--train", type=int, default=4000)
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240501)
    ap.add_argument("--source", default=os.environ.get("DCONFUSE_MNIST_SOURCE", ""))
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()

    os.makedirs(args.outdir, exist_ok=True)
    if have_all(args.outdir) and not args.force:
        print(f"dataset already present in {args.outdir}")
        return

    if args.source and have_all(args.source):
        for f in FILES:
            shutil.copyfile(os.path.join(args.source, f), os.path.join(args.outdir, f))
        print(f"copied dataset from {args.source}")
        return

    import numpy as np

    rng = np.random.RandomState(args.seed)
    train_images, train_labels = render(args.train, rng)
    test_images, test_labels = render(args.test, rng)
    write_idx(args.outdir, "train", train_images, train_labels)
    write_idx(args.outdir, "t10k", test_images, test_labels)
    print(f"rendered surrogate dataset: {args.train} train / {args.test} test -> {args.outdir}")


if __name__ == "__main__":
    main()
