"""Multi-supervised Charbonnier training with Adam on Y-channel patches."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ShapeError, StateError
from .imaging import DIHEDRAL, ImagePlane, downscale, mod_crop, transform
from .layers import ParamStore
from .model import TanModel
from .tensor import Tensor, add_n, mean, record, scale, sub

log = logging.getLogger(__name__)

CHARBONNIER_EPS = 1e-3


def charbonnier(x: Tensor, eps: float = CHARBONNIER_EPS) -> Tensor:
    """Elementwise ``sqrt(x^2 + eps^2)``."""
    xd = x.data
    y = np.sqrt(xd * xd + x.dtype.type(eps * eps))
    out = Tensor(y)
    record("charbonnier", (x,), (out,), lambda g: (g * xd / y,))
    return out


@dataclass
class LossReport:
    per_block: list[float]
    total: float
    loss: Tensor = field(repr=False)


def multi_supervised_loss(outputs: Sequence[Tensor], target: Tensor,
                          eps: float = CHARBONNIER_EPS) -> LossReport:
    """Arithmetic mean over outputs of the mean Charbonnier penalty against ``target``."""
    outputs = list(outputs)
    for o in outputs:
        if o.shape != target.shape:
            raise ShapeError(f"prediction {o.shape} does not match target {target.shape}")
    terms = [mean(charbonnier(sub(o, target), eps)) for o in outputs]
    total = scale(add_n(terms), 1.0 / len(terms))
    return LossReport([t.item() for t in terms], total.item(), total)


class Adam:
    """Adam with bias correction over a ParamStore."""

    def __init__(self, params: ParamStore, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise StateError(f"parameter {name} has no gradient; run backward() first")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            step = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= step.astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def moments(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_moments(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for name in self.m:
            self.m[name] = tensors[f"m.{name}"].astype(self.m[name].dtype)
            self.v[name] = tensors[f"v.{name}"].astype(self.v[name].dtype)
        self.t = t


def adam_step(params: ParamStore, state: Adam) -> None:
    state.step()


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def patch_boxes(lr_shape, scale: int, patch: int, rng: np.random.Generator):
    """Random aligned crop boxes ``(top, left, size)`` in LR and HR coordinates."""
    h, w = lr_shape
    if h < patch or w < patch:
        raise DataError(f"LR image {h}x{w} is smaller than the {patch}x{patch} patch")
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    return (top, left, patch), (top * scale, left * scale, patch * scale)


def sample_patches(hr: ImagePlane, scale: int, patch: int, rng: np.random.Generator,
                   augment: bool = False, lr: ImagePlane | None = None):
    """Random aligned ``(lr_patch, hr_patch)`` pair as 2-D arrays in the image's range.

    ``lr`` may be supplied when the bicubic downscale of ``hr`` is cached.
    """
    if hr.height < scale * patch or hr.width < scale * patch:
        raise DataError(f"{hr.height}x{hr.width} image cannot hold a {scale * patch}px HR patch")
    hr = mod_crop(hr, scale)
    lr = downscale(hr, scale) if lr is None else lr
    (lt, ll, lp), (ht, hl, hp) = patch_boxes(lr.data.shape, scale, patch, rng)
    lr_p = lr.data[lt:lt + lp, ll:ll + lp]
    hr_p = hr.data[ht:ht + hp, hl:hl + hp]
    if augment:
        t = DIHEDRAL[int(rng.integers(len(DIHEDRAL)))]
        lr_p, hr_p = transform(lr_p, t), transform(hr_p, t)
    return np.ascontiguousarray(lr_p), np.ascontiguousarray(hr_p)


class PatchSampler:
    """Caches (HR, bicubic LR) unit-range Y planes and draws batches."""

    def __init__(self, images: Sequence[ImagePlane], scale: int):
        if not images:
            raise DataError("no training images")
        self.scale = scale
        self.pairs = []
        for img in images:
            hr = mod_crop(img.to("unit"), scale)
            self.pairs.append((hr, downscale(hr, scale)))

    def batch(self, rng: np.random.Generator, size: int, patch: int, augment: bool = True,
              dtype=np.float32):
        lrs, hrs = [], []
        for _ in range(size):
            hr, lr = self.pairs[int(rng.integers(len(self.pairs)))]
            lp, hp = sample_patches(hr, self.scale, patch, rng, augment, lr=lr)
            lrs.append(lp)
            hrs.append(hp)
        return (np.stack(lrs)[:, None].astype(dtype), np.stack(hrs)[:, None].astype(dtype))


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay_steps: int = 200_000
    steps: int = 1000
    batch_size: int = 16
    patch_size: int = 48
    augment: bool = True
    charbonnier_eps: float = CHARBONNIER_EPS
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def lr_at(self, step: int) -> float:
        """Learning rate for 0-based ``step``: halved every ``lr_decay_steps``."""
        if self.lr_decay_steps <= 0:
            return self.lr
        return self.lr * 0.5 ** (step // self.lr_decay_steps)


@dataclass
class TrainState:
    step: int = 0
    seed: int = 0
    rng_state: dict | None = None
    history: list[float] = field(default_factory=list)


class Trainer:
    def __init__(self, model: TanModel, sampler: PatchSampler, cfg: TrainConfig):
        self.model = model
        self.sampler = sampler
        self.cfg = cfg
        self.params = model.params()
        self.optim = Adam(self.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.rng = np.random.default_rng(cfg.seed)
        self.state = TrainState(seed=cfg.seed)

    def train_step(self, lr_batch: np.ndarray, hr_batch: np.ndarray) -> "LossReport":
        dtype = self.model.dtype
        self.optim.lr = self.cfg.lr_at(self.state.step)
        self.optim.zero_grad()
        blocks, final = self.model(Tensor(lr_batch.astype(dtype, copy=False)))
        report = multi_supervised_loss(blocks + [final], Tensor(hr_batch.astype(dtype, copy=False)),
                                       self.cfg.charbonnier_eps)
        report.loss.backward()
        self.optim.step()
        self.state.step += 1
        self.state.history.append(report.total)
        return report

    def step(self) -> "LossReport":
        lr_b, hr_b = self.sampler.batch(self.rng, self.cfg.batch_size, self.cfg.patch_size,
                                        self.cfg.augment, self.model.dtype)
        return self.train_step(lr_b, hr_b)

    def run(self, steps: int | None = None, log_path=None, checkpoint_path=None,
            run_config: dict | None = None) -> list[float]:
        """Train until ``steps`` total steps have been taken (counting resumed ones)."""
        target = self.cfg.steps if steps is None else steps
        writer = fh = None
        if log_path is not None:
            log_path = Path(log_path)
            fresh = not log_path.exists() or self.state.step == 0
            fh = open(log_path, "w" if fresh else "a", newline="")
            writer = csv.writer(fh)
            if fresh:
                n_terms = len(self.model.blocks) + 1
                writer.writerow(["step"] + [f"block{i}" for i in range(1, n_terms)]
                                + ["final", "total", "lr"])
        try:
            while self.state.step < target:
                report = self.step()
                step = self.state.step
                if writer is not None:
                    writer.writerow([step] + [f"{v:.8g}" for v in report.per_block]
                                    + [f"{report.total:.8g}", f"{self.optim.lr:.8g}"])
                if self.cfg.log_every and step % self.cfg.log_every == 0:
                    log.info("step %d loss %.6f lr %.3g", step, report.total, self.optim.lr)
                if not math.isfinite(report.total):
                    raise StateError(f"loss diverged at step {step}")
                if checkpoint_path and self.cfg.checkpoint_every and step % self.cfg.checkpoint_every == 0:
                    self.save(checkpoint_path, run_config)
        finally:
            if fh is not None:
                fh.close()
        if checkpoint_path:
            self.save(checkpoint_path, run_config)
        return self.state.history

    # -- persistence ---------------------------------------------------------

    def save(self, path, run_config: dict | None = None) -> None:
        from .checkpoint import save_checkpoint

        state = {"step": self.state.step, "seed": self.state.seed, "adam_t": self.optim.t,
                 "rng_state": self.rng.bit_generator.state, "history": self.state.history,
                 "train": self.cfg.as_dict()}
        save_checkpoint(self.model, path, config=run_config, state=state, optim=self.optim.moments())

    def restore(self, ckpt) -> None:
        """Resume counters, optimizer moments and RNG from a loaded Checkpoint."""
        from .checkpoint import OPTIM_PREFIX

        if not ckpt.state:
            raise StateError("checkpoint has no training state to resume from")
        moments = {k[len(OPTIM_PREFIX):]: v for k, v in ckpt.tensors.items() if k.startswith(OPTIM_PREFIX)}
        self.optim.load_moments(moments, ckpt.state["adam_t"])
        self.rng.bit_generator.state = ckpt.state["rng_state"]
        self.state.step = ckpt.state["step"]
        self.state.seed = ckpt.state["seed"]
        self.state.history = list(ckpt.state["history"])
