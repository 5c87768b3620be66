"""Central finite-difference checks of the analytic gradients (double precision)."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .attention import ChannelAttention, KernelAttention, SpatialAttention
from .layers import conv2d, global_avg_pool, pixel_shuffle, prelu, sigmoid
from .mixedlink import AEMLB, MixedLinkUnit
from .model import MICRO, TanModel
from .tensor import (Tensor, add, concat_channels, mul_channelwise, no_grad, record,
                     slice_channels)
from .train import charbonnier, multi_supervised_loss

STEP = 1e-4
LAYER_TOL = 1e-4
MODEL_TOL = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise ``|a - n| / max(1, |a|)``."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def project(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``: a generic loss that exercises every output element."""
    out = Tensor(np.full((1, 1, 1, 1), np.sum(x.data * weights), dtype=x.dtype))
    record("project", (x,), (out,), lambda g: (g.reshape(()) * weights,))
    return out


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = STEP,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare backward() with central differences of ``loss_fn`` for each tensor.

    ``loss_fn`` must rebuild the graph from the tensors' current data.  With
    ``max_entries`` only a random subset of each tensor's elements is probed.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.empty(len(idx))
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                plus = loss_fn().item()
                flat[i] = orig - h
                minus = loss_fn().item()
                flat[i] = orig
                numeric[j] = (plus - minus) / (2 * h)
        worst = max(worst, relative_error(grad.reshape(-1)[idx], numeric))
    for t in tensors:
        t.grad = None
    return worst


@dataclass
class GradResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error < self.tolerance


def _rand(rng, shape, away_from_zero: float = 0.0) -> Tensor:
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = x + np.copysign(away_from_zero, x)
    return Tensor(x, requires_grad=True)


def _module_case(module, inputs: Sequence[Tensor], forward, rng, max_entries=None) -> float:
    out = forward(*inputs)
    weights = rng.standard_normal(out.shape)
    tensors = list(inputs) + [t for _, t in module.named_parameters()]
    return check_gradients(lambda: project(forward(*inputs), weights), tensors,
                           max_entries=max_entries, rng=rng)


def _op_case(forward, inputs: Sequence[Tensor], rng) -> float:
    weights = rng.standard_normal(forward(*inputs).shape)
    return check_gradients(lambda: project(forward(*inputs), weights), inputs, rng=rng)


def layer_cases(seed: int = 0) -> dict[str, Callable[[], float]]:
    """Named zero-argument callables, each returning a max relative error."""
    rng = np.random.default_rng(seed)
    f64 = np.float64

    def conv_case(k):
        def run():
            x = _rand(rng, (2, 2, 4, 3))
            w = _rand(rng, (3, 2, k, k))
            b = _rand(rng, (1, 3, 1, 1))
            return _op_case(lambda x, w, b: conv2d(x, w, b), (x, w, b), rng)
        return run

    cases = {
        "add": lambda: _op_case(add, (_rand(rng, (1, 3, 2, 2)), _rand(rng, (1, 3, 1, 1))), rng),
        "mul_channelwise": lambda: _op_case(mul_channelwise, (_rand(rng, (2, 3, 2, 1)),
                                                              _rand(rng, (2, 3, 1, 1))), rng),
        "slice_concat": lambda: _op_case(
            lambda x: concat_channels(list(reversed(slice_channels(x, 1)))), (_rand(rng, (1, 3, 2, 2)),), rng),
        "conv2d_1x1": conv_case(1),
        "conv2d_3x3": conv_case(3),
        "conv2d_5x5": conv_case(5),
        "prelu": lambda: _op_case(prelu, (_rand(rng, (1, 3, 2, 2), away_from_zero=1e-2),
                                          _rand(rng, (1, 3, 1, 1))), rng),
        "sigmoid": lambda: _op_case(sigmoid, (_rand(rng, (1, 2, 3, 2)),), rng),
        "global_avg_pool": lambda: _op_case(global_avg_pool, (_rand(rng, (2, 2, 2, 3)),), rng),
        "pixel_shuffle": lambda: _op_case(lambda x: pixel_shuffle(x, 2), (_rand(rng, (1, 4, 2, 2)),), rng),
        "charbonnier": lambda: _op_case(charbonnier, (_rand(rng, (1, 2, 2, 3)),), rng),
    }

    def ca():
        m = ChannelAttention(4, 2, rng, f64)
        return _module_case(m, (_rand(rng, (1, 4, 3, 3)),), m, rng)

    def ka():
        m = KernelAttention(2, 4, 2, rng, f64)
        return _module_case(m, (_rand(rng, (1, 2, 5, 5)),), m, rng)

    def sa():
        m = SpatialAttention(2, 2, 2, rng, f64)
        feats = (_rand(rng, (1, 2, 3, 3)), _rand(rng, (1, 2, 3, 3)))
        return _module_case(m, feats, lambda *f: m(list(f)), rng)

    def unit():
        m = MixedLinkUnit(4, 2, 2, rng, f64)
        return _module_case(m, (_rand(rng, (1, 4, 5, 5)),), m, rng)

    def block():
        m = AEMLB(4, 2, 2, 2, rng, f64)
        return _module_case(m, (_rand(rng, (1, 4, 5, 5)),), m, rng, max_entries=12)

    cases.update({"channel_attention": ca, "kernel_attention": ka, "spatial_attention": sa,
                  "mixed_link_unit": unit, "ae_mlb": block})
    return cases


def model_case(seed: int = 0, size: int = 16, max_entries: int = 4) -> float:
    """End-to-end check on the micro model with the multi-supervised loss."""
    rng = np.random.default_rng(seed)
    model = TanModel(MICRO, seed=seed, dtype=np.float64)
    r = MICRO.scale
    lr = Tensor(rng.uniform(0, 1, (1, 1, size, size)))
    hr = Tensor(rng.uniform(0, 1, (1, 1, size * r, size * r)))

    def loss():
        blocks, final = model(lr)
        return multi_supervised_loss(blocks + [final], hr).loss

    return check_gradients(loss, list(model.params().values()), max_entries=max_entries, rng=rng)


def run_suite(seed: int = 0) -> list[GradResult]:
    results = [GradResult(name, fn(), LAYER_TOL) for name, fn in layer_cases(seed).items()]
    results.append(GradResult("tan_model", model_case(seed), MODEL_TOL))
    return results


def format_results(results: Sequence[GradResult]) -> str:
    lines = [f"{'layer':<20} {'max_rel_err':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.error:12.3e} {r.tolerance:8.0e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)


if __name__ == "__main__":
    t0 = time.time()
    print(format_results(run_suite()))
    print(f"{time.time() - t0:.1f}s")
