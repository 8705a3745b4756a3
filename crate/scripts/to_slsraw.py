#!/usr/bin/env python3
"""Pack images into the SLSRAW01 container read by `dataset = raw`.

Input is either an .npz file with `images` (N,H,W,C or N,C,H,W uint8) and `labels`,
or an image folder laid out as root/<class name>/<file>. Classes are numbered in
sorted folder order.

    python scripts/to_slsraw.py svhn_train.npz data/svhn/train.slsraw
    python scripts/to_slsraw.py flowers/train data/flowers/train.slsraw --size 32
"""
import argparse
import struct
from pathlib import Path

import numpy as np


def load_npz(path, channels_last):
    z = np.load(path)
    images, labels = z["images"], z["labels"].astype(np.int64).ravel()
    if channels_last is None:
        channels_last = images.shape[-1] in (1, 3) and images.shape[1] not in (1, 3)
    if channels_last:
        images = images.transpose(0, 3, 1, 2)
    return images, labels


def load_folder(root, size):
    from PIL import Image

    classes = sorted(p for p in Path(root).iterdir() if p.is_dir())
    images, labels = [], []
    for label, folder in enumerate(classes):
        for f in sorted(folder.iterdir()):
            img = Image.open(f).convert("RGB")
            if size:
                img = img.resize((size, size), Image.BILINEAR)
            images.append(np.asarray(img).transpose(2, 0, 1))
            labels.append(label)
    return np.stack(images), np.array(labels)


def write(path, images, labels, classes):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, c, h, w = images.shape
    width = 2 if classes > 256 else 1
    with open(path, "wb") as f:
        f.write(b"SLSRAW01")
        f.write(struct.pack("<5I", c, h, w, n, classes))
        f.write(bytes([width]))
        fmt = "<B" if width == 1 else "<H"
        for img, label in zip(images, labels):
            f.write(struct.pack(fmt, int(label)))
            f.write(img.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source")
    ap.add_argument("dest")
    ap.add_argument("--size", type=int, default=0, help="resize folder images to size x size")
    ap.add_argument("--classes", type=int, default=0, help="class count (default: max label + 1)")
    ap.add_argument("--channels-last", action="store_true", default=None)
    args = ap.parse_args()
    src = Path(args.source)
    if src.is_dir():
        images, labels = load_folder(src, args.size)
    else:
        images, labels = load_npz(src, args.channels_last)
    classes = args.classes or int(labels.max()) + 1
    Path(args.dest).parent.mkdir(parents=True, exist_ok=True)
    write(args.dest, images, labels, classes)
    print(f"{len(labels)} images {images.shape[1:]} with {classes} classes -> {args.dest}")


if __name__ == "__main__":
    main()
