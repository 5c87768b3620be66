"""Mixed link units and attention-enhanced mixed link blocks (AE-MLB).

A mixed link unit splits its ``n`` input channels into ``(n - k, k)`` and
its ``2k`` attended feature channels into ``(k, k)``.  The first feature
half is added onto the trailing ``k`` input channels (residual part) and
the second half is appended (dense part), so every unit grows the stack
by exactly ``k`` channels.

With ``split="half"`` the input is instead cut into equal halves and the
feature branch is as wide as the input, so each unit grows the stack by
``n / 2`` channels (geometric growth).  Both splits agree when ``n = 2k``.
"""
from __future__ import annotations

import numpy as np

from .attention import ChannelAttention, KernelAttention
from .errors import ConfigError
from .layers import Conv2d, Module, PReLU
from .tensor import Tensor, add, concat_channels, slice_channels

TOPOLOGIES = ("mixed", "residual", "dense")
SPLITS = ("growth", "half")


def unit_growth(topology: str, growth: int) -> int:
    """Channels a single unit appends to its input."""
    return {"mixed": growth, "dense": 2 * growth, "residual": 0}[topology]


class MixedLinkUnit(Module):
    def __init__(self, in_channels: int, growth: int, reduction: int, rng: np.random.Generator,
                 dtype=np.float32, use_ka: bool = True, use_ca: bool = True, topology: str = "mixed",
                 split: str = "growth"):
        if topology not in TOPOLOGIES:
            raise ConfigError(f"unknown connection topology {topology!r}")
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        if topology == "mixed" and split == "half":
            if in_channels % 2:
                raise ConfigError(f"half split needs an even channel count, got {in_channels}")
            growth = in_channels // 2
        if growth < 1:
            raise ConfigError(f"growth must be positive, got {growth}")
        if topology == "mixed" and in_channels < growth:
            raise ConfigError(f"mixed link needs at least {growth} input channels, got {in_channels}")
        width = in_channels if topology == "residual" else 2 * growth
        if use_ka:
            self.ka = KernelAttention(in_channels, width, reduction, rng, dtype)
        else:
            self.conv3 = Conv2d(in_channels, width, 3, rng, dtype)
            self.act3 = PReLU(width, dtype)
        if use_ca:
            self.ca = ChannelAttention(width, reduction, rng, dtype)
        self.in_channels = in_channels
        self.growth = growth
        self.topology = topology

    @property
    def out_channels(self) -> int:
        return self.in_channels + unit_growth(self.topology, self.growth)

    def features(self, x: Tensor) -> Tensor:
        """Attended branch output ``A_c(A_k(...))`` before the link."""
        h = self.ka(x) if hasattr(self, "ka") else self.act3(self.conv3(x))
        return self.ca(h) if hasattr(self, "ca") else h

    def __call__(self, x: Tensor) -> Tensor:
        h = self.features(x)
        if self.topology == "residual":
            return add(x, h)
        if self.topology == "dense":
            return concat_channels([x, h])
        k = self.growth
        h1, h2 = slice_channels(h, k)
        if x.channels == k:
            return concat_channels([add(h1, x), h2])
        x1, x2 = slice_channels(x, x.channels - k)
        return concat_channels([x1, add(h1, x2), h2])


def mixed_link_unit(x: Tensor, p: MixedLinkUnit) -> Tensor:
    return p(x)


class AEMLB(Module):
    """``U`` chained units followed by a 1x1 conv back to the block width."""

    def __init__(self, width: int, units: int, growth: int, reduction: int, rng: np.random.Generator,
                 dtype=np.float32, use_ka: bool = True, use_ca: bool = True, topology: str = "mixed",
                 split: str = "growth"):
        if units < 0:
            raise ConfigError(f"units per block must be >= 0, got {units}")
        self.units = []
        channels = width
        for _ in range(units):
            unit = MixedLinkUnit(channels, growth, reduction, rng, dtype, use_ka, use_ca, topology, split)
            self.units.append(unit)
            channels = unit.out_channels
        self.compress = Conv2d(channels, width, 1, rng, dtype)
        self.width = width

    def __call__(self, x: Tensor) -> Tensor:
        for unit in self.units:
            x = unit(x)
        return self.compress(x)


def ae_mlb(x: Tensor, p: AEMLB) -> Tensor:
    return p(x)
