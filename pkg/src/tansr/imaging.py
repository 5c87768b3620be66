"""Image planes, colour conversion, bicubic resampling, metrics and self-ensemble."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .errors import ArgumentError, DataError, ShapeError

RANGES = {"unit": 1.0, "byte": 255.0}


@dataclass
class ImagePlane:
    """Single-channel float image; ``range`` is ``"unit"`` ([0,1]) or ``"byte"`` ([0,255])."""

    data: np.ndarray
    range: str = "byte"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"image planes are 2-D, got shape {self.data.shape}")
        if self.range not in RANGES:
            raise ArgumentError(f"unknown range tag {self.range!r}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def peak(self) -> float:
        return RANGES[self.range]

    def to(self, range_tag: str) -> "ImagePlane":
        if range_tag == self.range:
            return ImagePlane(self.data.copy(), self.range)
        return ImagePlane(self.data * (RANGES[range_tag] / self.peak), range_tag)

    def clamp(self) -> "ImagePlane":
        return ImagePlane(np.clip(self.data, 0.0, self.peak), self.range)


# ---------------------------------------------------------------------------
# PNG I/O and colour
# ---------------------------------------------------------------------------

def read_png(path) -> np.ndarray:
    """Load an 8-bit PNG as ``H x W`` (grayscale) or ``H x W x 3`` (RGB) uint8."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DataError(f"{path} is not a PNG file")
            if im.mode in ("L", "I;16", "I", "1"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return arr


def write_png(path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(Path(path), format="PNG")


# BT.601 studio-swing YCbCr, inputs in [0, 1], outputs in [0, 255]
_YCBCR = np.array([[65.481, 128.553, 24.966],
                   [-37.797, -74.203, 112.0],
                   [112.0, -93.786, -18.214]])
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    return rgb @ _YCBCR.T + _YCBCR_OFFSET


def ycbcr_to_rgb(ycbcr: np.ndarray) -> np.ndarray:
    rgb = (np.asarray(ycbcr, dtype=np.float64) - _YCBCR_OFFSET) @ np.linalg.inv(_YCBCR).T
    return rgb * 255.0


def rgb_to_y(rgb: np.ndarray) -> ImagePlane:
    """Luma plane of an 8-bit RGB image, byte range (16..235 for valid RGB)."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"expected H x W x 3 RGB, got {rgb.shape}")
    return ImagePlane(rgb_to_ycbcr(rgb)[..., 0], "byte")


def load_y(path) -> ImagePlane:
    """Y plane of a PNG; grayscale files are taken as luma directly."""
    pixels = read_png(path)
    if pixels.ndim == 2:
        return ImagePlane(pixels.astype(np.float64), "byte")
    return rgb_to_y(pixels)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------

def cubic(x, a: float = -0.5):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_weights(in_size: int, out_size: int, antialias: bool = True) -> np.ndarray:
    """``out_size x in_size`` interpolation matrix along one axis.

    Half-pixel centred mapping, edge-clamped taps.  When shrinking with
    ``antialias`` the kernel is stretched by the inverse scale (the
    MATLAB ``imresize`` convention used to build SR benchmarks).
    """
    if in_size < 1 or out_size < 1:
        raise ArgumentError(f"sizes must be positive, got {in_size} -> {out_size}")
    s = out_size / in_size
    stretch = 1.0 / s if (antialias and s < 1) else 1.0
    centres = (np.arange(out_size) + 0.5) / s - 0.5
    support = 2.0 * stretch
    first = np.floor(centres - support).astype(int) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    w = cubic((centres[:, None] - idx) / stretch) / stretch
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_size, in_size))
    rows = np.repeat(np.arange(out_size), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, in_size - 1).ravel()), w.ravel())
    return mat


def resize_array(arr: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Bicubic resize over the last two axes of ``arr``."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    wy = resize_weights(h, out_h, antialias)
    wx = resize_weights(w, out_w, antialias)
    return wy @ arr @ wx.T


def bicubic_resize(img: ImagePlane, out_w: int, out_h: int, antialias: bool = True) -> ImagePlane:
    return ImagePlane(resize_array(img.data, out_h, out_w, antialias), img.range)


def mod_crop(img: ImagePlane, scale: int) -> ImagePlane:
    h, w = img.height - img.height % scale, img.width - img.width % scale
    return ImagePlane(img.data[:h, :w], img.range)


def downscale(img: ImagePlane, scale: int) -> ImagePlane:
    """Bicubic LR synthesis; ``img`` must already be a multiple of ``scale``."""
    if img.height % scale or img.width % scale:
        raise ShapeError(f"{img.height}x{img.width} is not a multiple of {scale}")
    return bicubic_resize(img, img.width // scale, img.height // scale)


def upscale(img: ImagePlane, scale: int) -> ImagePlane:
    return bicubic_resize(img, img.width * scale, img.height * scale)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _shaved(img: ImagePlane, shave: int) -> np.ndarray:
    if shave < 0:
        raise ArgumentError(f"shave must be >= 0, got {shave}")
    if not shave:
        return img.data
    if 2 * shave >= min(img.height, img.width):
        raise ArgumentError(f"shave {shave} removes the whole {img.height}x{img.width} image")
    return img.data[shave:-shave, shave:-shave]


def _check_pair(a: ImagePlane, b: ImagePlane) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"image sizes differ: {a.data.shape} vs {b.data.shape}")
    if a.range != b.range:
        raise ArgumentError(f"range tags differ: {a.range} vs {b.range}")


def psnr(a: ImagePlane, b: ImagePlane, shave: int = 0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    _check_pair(a, b)
    diff = _shaved(a, shave) - _shaved(b, shave)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(a.peak ** 2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a: ImagePlane, b: ImagePlane, window: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM (Gaussian window, valid region only), byte-range inputs."""
    _check_pair(a, b)
    if a.range != "byte":
        a, b = a.to("byte"), b.to("byte")
    if min(a.height, a.width) < window:
        raise ArgumentError(f"{a.height}x{a.width} image is smaller than the {window}x{window} window")
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    g = gaussian_window(window, sigma)
    x, y = a.data, b.data
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# dihedral self-ensemble
# ---------------------------------------------------------------------------

# (quarter turns, flip first)
DIHEDRAL = tuple((k, flip) for flip in (False, True) for k in range(4))


def transform(arr: np.ndarray, t: tuple[int, bool]) -> np.ndarray:
    k, flip = t
    if flip:
        arr = np.flip(arr, axis=-1)
    return np.rot90(arr, k, axes=(-2, -1))


def inverse_transform(arr: np.ndarray, t: tuple[int, bool]) -> np.ndarray:
    k, flip = t
    arr = np.rot90(arr, -k, axes=(-2, -1))
    if flip:
        arr = np.flip(arr, axis=-1)
    return arr


def self_ensemble(lr: ImagePlane, model: Callable[[np.ndarray], np.ndarray]) -> ImagePlane:
    """Average ``model`` over the eight flips/rotations of ``lr``.

    Outputs are mapped back by the inverse transform and averaged.  The
    per-pixel values are sorted before summing so the result does not
    depend on the order in which the group elements are visited.
    """
    outs = []
    for t in DIHEDRAL:
        y = model(np.ascontiguousarray(transform(lr.data, t)))
        outs.append(inverse_transform(np.asarray(y, dtype=np.float64), t))
    stack = np.sort(np.stack(outs), axis=0)
    return ImagePlane(stack.sum(axis=0) / len(DIHEDRAL), lr.range)
