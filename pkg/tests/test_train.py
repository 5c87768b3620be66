import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tansr.errors import DataError, ShapeError, StateError
from tansr.imaging import ImagePlane, downscale, load_y, mod_crop
from tansr.layers import ParamStore
from tansr.model import MICRO, TanModel
from tansr.tensor import Tensor
from tansr.train import (Adam, PatchSampler, TrainConfig, Trainer, charbonnier, multi_supervised_loss,
                         patch_boxes, sample_patches)

EPS = 1e-3


def keys(x, a=-0.5):
    """Scalar Keys kernel."""
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def resample_1d(signal, out_size):
    """Direct per-sample kernel evaluation, kernel widened by 1/scale when shrinking."""
    n = len(signal)
    s = out_size / n
    stretch = 1 / s if s < 1 else 1.0
    out = []
    for i in range(out_size):
        u = (i + 0.5) / s - 0.5
        lo, hi = math.floor(u - 2 * stretch), math.ceil(u + 2 * stretch)
        acc = norm = 0.0
        for j in range(lo, hi + 1):
            w = keys((u - j) / stretch)
            acc += w * signal[min(max(j, 0), n - 1)]
            norm += w
        out.append(acc / norm)
    return np.array(out)


class TestCharbonnier:
    def test_values(self):
        out = charbonnier(Tensor(np.array([0.0, 3e-3]).reshape(1, 1, 1, 2))).data.ravel()
        assert out[0] == pytest.approx(0.001, rel=1e-12)
        assert out[1] == pytest.approx(3.1623e-3, rel=1e-4)
        assert out[1] == pytest.approx(math.sqrt(9e-6 + 1e-6), rel=1e-12)

    @settings(max_examples=50)
    @given(st.floats(-1e3, 1e3, allow_nan=False))
    def test_bounds(self, v):
        x = Tensor(np.full((1, 1, 1, 1), v), requires_grad=True)
        y = charbonnier(x)
        assert y.item() >= abs(v) and y.item() >= EPS
        y.backward()
        assert abs(x.grad.item()) < 1


class TestMultiSupervisedLoss:
    def test_perfect_prediction(self, rng):
        y = rng.random((2, 1, 6, 6))
        report = multi_supervised_loss([Tensor(y.copy()) for _ in range(3)], Tensor(y))
        assert report.total == pytest.approx(EPS, rel=1e-12)

    def test_constant_residual(self, rng):
        y = rng.random((1, 1, 6, 6))
        report = multi_supervised_loss([Tensor(y + 0.25)], Tensor(y))
        assert report.total == pytest.approx(math.sqrt(0.25 ** 2 + EPS ** 2), rel=1e-9)

    def test_scalar_loop_oracle(self, rng):
        target = rng.random((2, 1, 4, 4))
        preds = [rng.random((2, 1, 4, 4)) for _ in range(3)]
        report = multi_supervised_loss([Tensor(p) for p in preds], Tensor(target))
        terms = []
        for p in preds:
            acc = 0.0
            for idx in np.ndindex(p.shape):
                d = p[idx] - target[idx]
                acc += math.sqrt(d * d + EPS * EPS)
            terms.append(acc / p.size)
        assert report.per_block == pytest.approx(terms, abs=1e-12)
        assert report.total == pytest.approx(sum(terms) / 3, abs=1e-7)

    def test_order_invariant(self, rng):
        target = Tensor(rng.random((1, 1, 4, 4)))
        preds = [Tensor(rng.random((1, 1, 4, 4))) for _ in range(4)]
        a = multi_supervised_loss(preds, target).total
        b = multi_supervised_loss(preds[::-1], target).total
        assert a == pytest.approx(b, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            multi_supervised_loss([Tensor(np.zeros((1, 1, 4, 4)))], Tensor(np.zeros((1, 1, 4, 5))))


def scalar_param(value=0.0):
    return ParamStore(iter([("p", Tensor(np.full((1, 1, 1, 1), value), requires_grad=True))]))


class TestAdam:
    def test_first_step_magnitude(self):
        params = scalar_param(1.0)
        params["p"].grad = np.ones((1, 1, 1, 1))
        Adam(params, lr=1e-4).step()
        # m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert 1.0 - params["p"].data.item() == pytest.approx(1e-4 / (1 + 1e-8), rel=1e-9)

    def test_zero_gradient(self):
        params = scalar_param(0.7)
        opt = Adam(params, lr=1e-2)
        for _ in range(5):
            params["p"].grad = np.zeros((1, 1, 1, 1))
            opt.step()
        assert params["p"].data.item() == 0.7

    def test_hand_recurrence(self):
        params = scalar_param(0.0)
        opt = Adam(params, lr=0.1)
        m = v = 0.0
        theta = 0.0
        for t, g in enumerate([0.5, -1.0, 2.0], 1):
            params["p"].grad = np.full((1, 1, 1, 1), g)
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            assert params["p"].data.item() == pytest.approx(theta, abs=1e-12)

    def test_missing_gradient(self):
        with pytest.raises(StateError):
            Adam(scalar_param()).step()


class TestPatches:
    def test_constant_image(self, rng):
        lr, hr = sample_patches(ImagePlane(np.full((40, 40), 0.3), "unit"), 2, 8, rng)
        np.testing.assert_allclose(lr, 0.3, atol=1e-12)
        np.testing.assert_allclose(hr, 0.3, atol=1e-12)

    @pytest.mark.parametrize("r", [2, 3, 4])
    def test_alignment(self, r):
        rng = np.random.default_rng(r)
        for _ in range(20):
            (lt, ll, lp), (ht, hl, hp) = patch_boxes((30, 25), r, 7, rng)
            assert (ht, hl, hp) == (lt * r, ll * r, lp * r)
            assert lt + lp <= 30 and ll + lp <= 25

    def test_patches_crop_the_same_place(self, rng):
        hr = ImagePlane(rng.random((48, 48)), "unit")
        lr_full = downscale(hr, 2).data
        lr, hr_p = sample_patches(hr, 2, 10, np.random.default_rng(3))
        (lt, ll, _), (ht, hl, _) = patch_boxes((24, 24), 2, 10, np.random.default_rng(3))
        np.testing.assert_array_equal(lr, lr_full[lt:lt + 10, ll:ll + 10])
        np.testing.assert_array_equal(hr_p, hr.data[ht:ht + 20, hl:hl + 20])

    def test_too_small(self, rng):
        with pytest.raises(DataError):
            sample_patches(ImagePlane(np.zeros((20, 20)), "unit"), 2, 12, rng)

    @pytest.mark.parametrize("r", [2, 3, 4])
    def test_downscaled_ramp_matches_kernel_oracle(self, r):
        ramp = np.linspace(0.0, 1.0, 12 * r)
        img = ImagePlane(np.tile(ramp, (12 * r, 1)), "unit")
        lr = downscale(img, r).data
        np.testing.assert_allclose(lr[0], resample_1d(ramp, 12), atol=1e-5)
        np.testing.assert_allclose(lr, np.tile(lr[0], (12, 1)), atol=1e-12)

    def test_sampler_batch(self, rng):
        sampler = PatchSampler([ImagePlane(rng.random((40, 40)), "unit")], 2)
        lr, hr = sampler.batch(rng, 4, 8)
        assert lr.shape == (4, 1, 8, 8) and hr.shape == (4, 1, 16, 16)
        assert lr.dtype == np.float32


def micro_trainer(seed, images, **cfg):
    cfg = TrainConfig(**{"lr": 1e-3, "batch_size": 2, "patch_size": 12, "seed": seed, **cfg})
    return Trainer(TanModel(MICRO, seed=seed), PatchSampler(images, 2), cfg)


class TestTrainer:
    def test_deterministic(self, rng):
        images = [ImagePlane(rng.random((40, 40)), "unit")]
        runs = []
        for _ in range(2):
            trainer = micro_trainer(7, images)
            trainer.run(3)
            runs.append({n: p.data.copy() for n, p in trainer.model.named_parameters()})
        for name in runs[0]:
            np.testing.assert_array_equal(runs[0][name], runs[1][name])

    def test_lr_schedule(self):
        cfg = TrainConfig(lr=1e-4, lr_decay_steps=10)
        assert [cfg.lr_at(s) for s in (0, 9, 10, 25)] == [1e-4, 1e-4, 5e-5, 2.5e-5]

    def test_fixed_patch_loss_decreases_for_most_seeds(self, data_dir):
        hr = mod_crop(load_y(data_dir / "overfit.png").to("unit"), 2)
        lr, hr_p = sample_patches(hr, 2, 16, np.random.default_rng(0))
        lr_b = lr[None, None].astype(np.float32)
        hr_b = hr_p[None, None].astype(np.float32)
        decreased = 0
        seeds = range(20)
        for seed in seeds:
            trainer = micro_trainer(seed, [hr])
            first = trainer.train_step(lr_b, hr_b).total
            for _ in range(49):
                last = trainer.train_step(lr_b, hr_b).total
            decreased += last < first
        assert decreased >= 0.95 * len(seeds)
