"""Full network: shallow features, chained AE-MLBs, attention-fused reconstruction."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import DEFAULT_REDUCTION, SpatialAttention
from .errors import ConfigError, ShapeError
from .imaging import resize_array
from .layers import Conv2d, Module, pixel_shuffle
from .mixedlink import AEMLB, SPLITS, TOPOLOGIES
from .tensor import Tensor, add, add_n, no_grad, scale

MIN_INPUT = 8
SKIP_MODES = ("learned", "bicubic")
# parameter-name prefixes whose shapes depend on the upscaling factor
SCALE_DEPENDENT = ("skip.", "upsample.", "heads.")


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 2
    blocks: int = 6
    units: int = 4
    width: int = 64
    growth: int = 32
    reduction: int = DEFAULT_REDUCTION
    use_ca: bool = True
    use_ka: bool = True
    use_sa: bool = True
    topology: str = "mixed"
    split: str = "growth"
    skip: str = "learned"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.units < 0:
            raise ConfigError(f"units must be >= 0, got {self.units}")
        if self.width < 1 or self.growth < 1 or self.reduction < 1:
            raise ConfigError("width, growth and reduction must be positive")
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.skip not in SKIP_MODES:
            raise ConfigError(f"skip must be one of {SKIP_MODES}, got {self.skip!r}")
        if self.topology == "mixed" and self.units and self.width < self.growth:
            raise ConfigError(f"mixed link needs width >= growth ({self.width} < {self.growth})")

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


MICRO = ModelConfig(blocks=2, units=1, width=8, growth=4, reduction=4)
SMALL = ModelConfig(blocks=3, units=2, width=32, growth=16)


class TanModel(Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        c, r, b = config.width, config.scale, config.blocks
        kw = dict(use_ka=config.use_ka, use_ca=config.use_ca, topology=config.topology, split=config.split)
        self.sfe1 = Conv2d(1, c, 3, rng, dtype)
        self.sfe2 = Conv2d(c, c, 3, rng, dtype)
        self.blocks = [AEMLB(c, config.units, config.growth, config.reduction, rng, dtype, **kw)
                       for _ in range(b)]
        if config.use_sa:
            self.sa = SpatialAttention(c, b, config.reduction, rng, dtype)
        self.upsample = Conv2d(c, c * r * r, 3, rng, dtype)
        self.tail = Conv2d(c, 1, 3, rng, dtype)
        if config.skip == "learned":
            self.skip = Conv2d(c, r * r, 3, rng, dtype)
        self.heads = [Conv2d(c, r * r, 1, rng, dtype) for _ in range(b)]
        self.config = config

    @property
    def dtype(self):
        return self.sfe1.weight.dtype

    def reinit(self, names, seed: int) -> None:
        """Draw fresh values for the named parameters from a model built with ``seed``."""
        fresh = TanModel(self.config, seed=seed, dtype=self.dtype).params()
        mine = self.params()
        for name in names:
            mine[name].data = fresh[name].data.copy()

    def _skip(self, lr: Tensor, f0: Tensor) -> Tensor:
        r = self.config.scale
        if self.config.skip == "learned":
            return pixel_shuffle(self.skip(f0), r)
        n, _, h, w = lr.shape
        return Tensor(resize_array(lr.data, h * r, w * r).astype(self.dtype))

    def forward(self, lr: Tensor) -> tuple[list[Tensor], Tensor]:
        """Return the per-block HR outputs and the fused final HR output."""
        if lr.channels != 1:
            raise ShapeError(f"model input must be single-channel, got {lr.shape}")
        if min(lr.shape[2:]) < MIN_INPUT:
            raise ShapeError(f"input must be at least {MIN_INPUT}x{MIN_INPUT}, got {lr.shape[2:]}")
        r = self.config.scale
        f0 = self.sfe1(lr)
        skip = self._skip(lr, f0)
        x = self.sfe2(f0)
        features = []
        for block in self.blocks:
            x = block(x)
            features.append(x)
        hr_blocks = [add(pixel_shuffle(head(f), r), skip) for head, f in zip(self.heads, features)]
        if self.config.use_sa:
            fused = self.sa(features)
        else:
            fused = scale(add_n(features), 1.0 / len(features))
        hr = add(self.tail(pixel_shuffle(self.upsample(fused), r)), skip)
        return hr_blocks, hr

    __call__ = forward

    def upscale(self, lr: np.ndarray) -> np.ndarray:
        """Inference on one unit-range ``H x W`` array; returns the ``rH x rW`` output."""
        with no_grad():
            x = Tensor(np.asarray(lr, dtype=self.dtype)[None, None])
            _, hr = self.forward(x)
        return hr.data[0, 0].astype(np.float64)


def count_params(model: Module) -> int:
    return model.params().count()


def param_breakdown(model: TanModel) -> "OrderedDict[str, int]":
    """Parameter counts grouped by top-level component (``blocks.0``, ``sa``, ...)."""
    groups: OrderedDict[str, int] = OrderedDict()
    for name, t in model.named_parameters():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] in ("blocks", "heads") else parts[0]
        groups[key] = groups.get(key, 0) + t.data.size
    return groups


def scale_dependent(name: str) -> bool:
    return name.startswith(SCALE_DEPENDENT)
