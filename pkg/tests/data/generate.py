"""Regenerate the small Y-channel test corpus from scikit-image's sample images.

Run from the repository root: ``python tests/data/generate.py``.  Crops are
drawn with a fixed seed and kept only if they carry some texture.
"""
from pathlib import Path

import numpy as np
import skimage.data

from tansr.imaging import rgb_to_y, write_png

HERE = Path(__file__).parent
CROP = 96
TRAIN = {"astronaut": 3, "camera": 3, "coffee": 3, "chelsea": 3, "rocket": 2, "brick": 1,
         "grass": 1, "gravel": 1, "immunohistochemistry": 2, "page": 1}
HELDOUT = {"coins": 2, "stereo_motorcycle": 3}


def luma(name):
    img = getattr(skimage.data, name)()
    if isinstance(img, tuple):
        img = img[0]
    if img.ndim == 3:
        return rgb_to_y(img[..., :3]).data
    return img.astype(np.float64)


def detail(patch):
    """Mean absolute difference between neighbouring pixels."""
    return (np.abs(np.diff(patch, axis=0)).mean() + np.abs(np.diff(patch, axis=1)).mean()) / 2


def crops(name, count, size, rng, min_std=20.0, min_detail=4.0):
    y = luma(name)
    out = []
    while len(out) < count:
        top = int(rng.integers(0, y.shape[0] - size + 1))
        left = int(rng.integers(0, y.shape[1] - size + 1))
        patch = y[top:top + size, left:left + size]
        if patch.std() >= min_std and detail(patch) >= min_detail:
            out.append(patch)
    return out


def main():
    rng = np.random.default_rng(2019)
    for split, table in (("train", TRAIN), ("heldout", HELDOUT)):
        d = HERE / split
        d.mkdir(exist_ok=True)
        for name, count in table.items():
            for i, patch in enumerate(crops(name, count, CROP, rng)):
                write_png(d / f"{name}_{i}.png", patch)
    (patch,) = crops("camera", 1, 64, np.random.default_rng(7))
    write_png(HERE / "overfit.png", patch)


if __name__ == "__main__":
    main()
