"""Benchmark protocol: synthesize LR from HR, score SR and bicubic on the Y channel."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import DataError
from .imaging import ImagePlane, downscale, load_y, mod_crop, psnr, self_ensemble, ssim, upscale

Predictor = Callable[[str, ImagePlane], ImagePlane]


@dataclass
class ImageScore:
    image: str
    psnr: float
    ssim: float
    bicubic_psnr: float
    bicubic_ssim: float


def list_pngs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"image directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise DataError(f"no PNG images in {directory}")
    return files


def _crop(img: ImagePlane, shave: int) -> ImagePlane:
    return ImagePlane(img.data[shave:-shave, shave:-shave], img.range) if shave else img


def score_pair(sr: ImagePlane, hr: ImagePlane, shave: int) -> tuple[float, float]:
    """PSNR and SSIM of byte-range Y planes after clamping and border shave."""
    sr, hr = sr.to("byte").clamp(), hr.to("byte")
    return psnr(sr, hr, shave), ssim(_crop(sr, shave), _crop(hr, shave))


def model_predictor(model, use_ensemble: bool = False) -> Predictor:
    """Wrap a TanModel (or any ``upscale(array)`` object) as a predictor."""
    def predict(name: str, lr: ImagePlane) -> ImagePlane:
        lr = lr.to("unit")
        if use_ensemble:
            return self_ensemble(lr, model.upscale)
        return ImagePlane(model.upscale(lr.data), "unit")
    return predict


def directory_predictor(sr_dir) -> Predictor:
    """Read precomputed SR images named like the HR files."""
    sr_dir = Path(sr_dir)

    def predict(name: str, lr: ImagePlane) -> ImagePlane:
        path = sr_dir / name
        if not path.exists():
            raise DataError(f"missing SR image {path}")
        return load_y(path)
    return predict


def evaluate(hr_images: Iterable[tuple[str, ImagePlane]], predictor: Predictor, scale: int,
             shave: int | None = None) -> list[ImageScore]:
    shave = scale if shave is None else shave
    rows = []
    for name, hr in hr_images:
        # scored in its stored range: a unit/byte round trip is not bit-exact
        hr = mod_crop(hr, scale)
        lr = downscale(hr.to("unit"), scale)
        sr = predictor(name, lr)
        if sr.data.shape != hr.data.shape:
            raise DataError(f"{name}: SR size {sr.data.shape} differs from HR {hr.data.shape}")
        p, s = score_pair(sr, hr, shave)
        bp, bs = score_pair(upscale(lr, scale), hr, shave)
        rows.append(ImageScore(name, p, s, bp, bs))
    return rows


def evaluate_directory(hr_dir, predictor: Predictor, scale: int, shave: int | None = None) -> list[ImageScore]:
    return evaluate(((p.name, load_y(p)) for p in list_pngs(hr_dir)), predictor, scale, shave)


def mean_row(rows: list[ImageScore]) -> ImageScore:
    cols = [[getattr(r, f) for r in rows] for f in ("psnr", "ssim", "bicubic_psnr", "bicubic_ssim")]
    return ImageScore("mean", *(float(np.mean(c)) for c in cols))


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def to_csv(rows: list[ImageScore], with_mean: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"])
    for r in rows + ([mean_row(rows)] if with_mean and rows else []):
        writer.writerow([r.image, _fmt(r.psnr), _fmt(r.ssim), _fmt(r.bicubic_psnr), _fmt(r.bicubic_ssim)])
    return buf.getvalue()
