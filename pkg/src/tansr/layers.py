"""Differentiable layers: convolution, PReLU, sigmoid, pooling, sub-pixel shuffle."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, record

SUPPORTED_KERNELS = (1, 3, 5)
PRELU_INIT = 0.25


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Stride-1 cross-correlation with symmetric zero padding.

    ``weight`` is ``C_out x C_in x k x k``; ``bias`` is ``1 x C_out x 1 x 1``.
    Padding defaults to ``(k - 1) // 2`` which preserves H and W.
    """
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c != c_in:
        raise ShapeError(f"conv expects {c_in} input channels, got {c}")
    if kh != kw:
        raise ShapeError(f"only square kernels are supported, got {kh}x{kw}")
    k = kh
    p = (k - 1) // 2 if padding is None else padding
    ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"{k}x{k} kernel with padding {p} does not fit a {h}x{w} input")

    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    if k == 1:
        cols = xp.reshape(n, c, ho * wo)
    else:
        cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i:i + ho, j:j + wo]
        cols = cols.reshape(n, c * k * k, ho * wo)
    wmat = weight.data.reshape(c_out, c_in * k * k)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(1, c_out, 1)
    result = Tensor(out.reshape(n, c_out, ho, wo))

    def grad_fn(g):
        g2 = g.reshape(n, c_out, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2)).reshape(bias.shape)
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            if k == 1:
                gxp = gcols.reshape(xp.shape)
            else:
                gcols = gcols.reshape(n, c, k, k, ho, wo)
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + ho, j:j + wo] += gcols[:, :, i, j]
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    record("conv2d", inputs, (result,), grad_fn)
    return result


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``x`` where non-negative, ``slope[c] * x`` elsewhere."""
    if slope.shape != (1, x.channels, 1, 1):
        raise ShapeError(f"PReLU slope {slope.shape} does not match {x.shape}")
    xd, a = x.data, slope.data
    pos = xd >= 0
    out = Tensor(np.where(pos, xd, a * xd))

    def grad_fn(g):
        gx = np.where(pos, g, a * g) if x.requires_grad else None
        ga = None
        if slope.requires_grad:
            ga = np.where(pos, 0, g * xd).sum(axis=(0, 2, 3), keepdims=True)
        return gx, ga

    record("prelu", (x, slope), (out,), grad_fn)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = np.exp(-np.logaddexp(0, -x.data)).astype(x.dtype, copy=False)
    out = Tensor(y)
    record("sigmoid", (x,), (out,), lambda g: (g * y * (1 - y),))
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-sample, per-channel spatial mean; returns ``N x C x 1 x 1``."""
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    inv = x.dtype.type(1.0 / (h * w))
    record("global_avg_pool", (x,), (out,),
           lambda g: (np.broadcast_to(g * inv, x.shape).copy(),))
    return out


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange ``N x C*r^2 x H x W`` into ``N x C x rH x rW``.

    ``out[n, c, r*i + di, r*j + dj] = in[n, c*r*r + di*r + dj, i, j]``.
    """
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"{c} channels are not divisible by r^2 = {r * r}")
    co = c // (r * r)
    y = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)
    out = Tensor(y)

    def grad_fn(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    record("pixel_shuffle", (x,), (out,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

class ParamStore:
    """Ordered name -> learnable tensor mapping."""

    def __init__(self, named: Iterator[tuple[str, Tensor]]):
        self._params: OrderedDict[str, Tensor] = OrderedDict(named)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None


class Module:
    """Minimal parameter-holding layer; attributes define parameter order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def params(self) -> ParamStore:
        return ParamStore(self.named_parameters())

    def astype(self, dtype) -> "Module":
        for _, t in self.named_parameters():
            t.data = t.data.astype(dtype)
            t.grad = None
        return self


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, dtype=np.float32):
        if kernel not in SUPPORTED_KERNELS:
            raise ConfigError(f"kernel size {kernel} not in {SUPPORTED_KERNELS}")
        if in_channels < 1 or out_channels < 1:
            raise ConfigError(f"conv widths must be positive, got {in_channels}->{out_channels}")
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros((1, out_channels, 1, 1), dtype=dtype), requires_grad=True)

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.padding)


class PReLU(Module):
    def __init__(self, channels: int, dtype=np.float32):
        self.slope = Tensor(np.full((1, channels, 1, 1), PRELU_INIT, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)
