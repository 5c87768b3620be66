"""Channel, fuse-kernel and global spatial attention."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Conv2d, Module, PReLU, global_avg_pool, sigmoid
from .tensor import Tensor, add, add_n, mul_channelwise, scale, slice_channels

DEFAULT_REDUCTION = 16


class ChannelAttention(Module):
    """Squeeze-and-excitation gate: pool, 1x1 down, PReLU, 1x1 up, sigmoid.

    ``out_channels`` defaults to ``channels``; the spatial attention uses a
    narrower gate that weights only half of its expanded features.
    """

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator,
                 dtype=np.float32, out_channels: int | None = None):
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"reduction {reduction} does not divide {channels} channels")
        mid = channels // reduction
        self.conv_down = Conv2d(channels, mid, 1, rng, dtype)
        self.act = PReLU(mid, dtype)
        self.conv_up = Conv2d(mid, out_channels or channels, 1, rng, dtype)
        self.channels = channels

    def gate(self, x: Tensor) -> Tensor:
        """Sigmoid gate of shape ``N x C_out x 1 x 1``."""
        if x.channels != self.channels:
            raise ShapeError(f"attention built for {self.channels} channels, got {x.channels}")
        return sigmoid(self.conv_up(self.act(self.conv_down(global_avg_pool(x)))))

    def __call__(self, x: Tensor) -> Tensor:
        return mul_channelwise(x, self.gate(x))


def channel_attention(x: Tensor, p: ChannelAttention) -> Tensor:
    return p(x)


class KernelAttention(Module):
    """Parallel 3x3 / 5x5 PReLU branches, summed and reweighted by one gate."""

    def __init__(self, in_channels: int, out_channels: int, reduction: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.conv3 = Conv2d(in_channels, out_channels, 3, rng, dtype)
        self.act3 = PReLU(out_channels, dtype)
        self.conv5 = Conv2d(in_channels, out_channels, 5, rng, dtype)
        self.act5 = PReLU(out_channels, dtype)
        self.gate = ChannelAttention(out_channels, reduction, rng, dtype)

    def branches(self, x: Tensor) -> Tensor:
        b3 = self.act3(self.conv3(x))
        b5 = self.act5(self.conv5(x))
        if b3.shape != b5.shape:
            raise ShapeError(f"kernel branches disagree: {b3.shape} vs {b5.shape}")
        return add(b3, b5)

    def __call__(self, x: Tensor) -> Tensor:
        s = self.branches(x)
        # the gate vector multiplies s once; CA's rescaled output is not reused
        return mul_channelwise(s, self.gate.gate(s))


def kernel_attention(x: Tensor, p: KernelAttention) -> Tensor:
    return p(x)


class SpatialAttention(Module):
    """Reconstruction-stage fusion of the per-block features.

    Each block feature map (R channels) is expanded to 2R by a shared 1x1
    conv and split into a local half and a half weighted by a global channel
    gate computed from the full expansion.  The two halves are averaged and
    the blocks are combined with one learnable weight each.
    """

    def __init__(self, width: int, blocks: int, reduction: int,
                 rng: np.random.Generator, dtype=np.float32):
        if blocks < 1:
            raise ConfigError("spatial attention needs at least one block")
        self.expand = Conv2d(width, 2 * width, 1, rng, dtype)
        self.global_gate = ChannelAttention(2 * width, reduction, rng, dtype, out_channels=width)
        self.block_weights = [Tensor(np.full((1, 1, 1, 1), 1.0 / blocks, dtype=dtype), requires_grad=True)
                              for _ in range(blocks)]
        self.width = width

    def fuse_one(self, x: Tensor) -> Tensor:
        m = self.expand(x)
        local, rest = slice_channels(m, self.width)
        weighted = mul_channelwise(rest, self.global_gate.gate(m))
        return scale(add(local, weighted), 0.5)

    def __call__(self, features: Sequence[Tensor]) -> Tensor:
        features = list(features)
        if len(features) != len(self.block_weights):
            raise ConfigError(f"expected {len(self.block_weights)} block features, got {len(features)}")
        first = features[0].shape
        for f in features:
            if f.shape != first:
                raise ShapeError(f"block features disagree: {f.shape} vs {first}")
            if f.channels != self.width:
                raise ShapeError(f"spatial attention built for {self.width} channels, got {f.channels}")
        return add_n(mul_channelwise(self.fuse_one(f), w) for f, w in zip(features, self.block_weights))


def spatial_attention_fuse(features: Sequence[Tensor], p: SpatialAttention) -> Tensor:
    return p(features)
