"""Builds the desk corpus of small natural-image crops from scikit-image's
bundled sample photographs.

    python3 tools/make_corpus.py [out_dir]

Each source is downscaled so its short side is 1.5x the crop size, then
crops are taken at fixed, seeded offsets. Training and held-out crops come
from disjoint source photographs. 64 px crops are 2x box downsamples of the
128 px crops.
"""
import os
import random
import sys

import numpy as np
from PIL import Image
import skimage

SRC = os.path.join(os.path.dirname(skimage.__file__), "data")
TRAIN = [
    "astronaut.png", "coffee.png", "rocket.jpg", "hubble_deep_field.jpg",
    "ihc.png", "brick.png", "grass.png", "camera.png", "coins.png",
    "moon.png", "gravel.png", "color.png", "motorcycle_left.png",
]
HELDOUT = ["chelsea.png", "retina.jpg", "clock_motion.png", "cell.png", "motorcycle_right.png"]
CROP = 128


def crops(name, n, rng):
    im = Image.open(os.path.join(SRC, name)).convert("RGB")
    s = 1.5 * CROP / min(im.size)
    im = im.resize((round(im.width * s), round(im.height * s)), Image.LANCZOS)
    out = []
    for _ in range(n):
        x = rng.randrange(0, im.width - CROP + 1)
        y = rng.randrange(0, im.height - CROP + 1)
        out.append(im.crop((x, y, x + CROP, y + CROP)))
    return out


def half(im):
    a = np.asarray(im, dtype=np.float64)
    a = a.reshape(CROP // 2, 2, CROP // 2, 2, 3).mean(axis=(1, 3))
    return Image.fromarray(np.floor(a + 0.5).astype(np.uint8))


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "corpus"
    rng = random.Random(7)
    plan = [("train", TRAIN, 3), ("heldout", HELDOUT, 2)]
    for split, names, per in plan:
        for size in (128, 64):
            os.makedirs(os.path.join(out, str(size), split), exist_ok=True)
        for name in names:
            stem = os.path.splitext(name)[0]
            for i, im in enumerate(crops(name, per, rng)):
                fname = f"{stem}_{i}.png"
                im.save(os.path.join(out, "128", split, fname))
                half(im).save(os.path.join(out, "64", split, fname))


if __name__ == "__main__":
    main()
