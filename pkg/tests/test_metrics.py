import numpy as np
import pytest

from qsopt.metrics import psnr, ssim


def test_psnr_identical_inputs_capped():
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x) == 100.0


def test_psnr_offset_pair():
    x = np.zeros((16, 16))
    assert psnr(x + 0.1, x, peak=1.0) == pytest.approx(20.0, abs=1e-12)


def test_psnr_scale_invariance(rng):
    x = rng.random((12, 12))
    y = x + rng.normal(0, 0.05, x.shape)
    a = psnr(y, x, peak=1.0)
    b = psnr(3.7 * y, 3.7 * x, peak=3.7)
    assert a == pytest.approx(b, abs=1e-10)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))


def test_psnr_rejects_bad_peak():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)), peak=0.0)


def test_ssim_identical_is_one(rng):
    x = rng.random((16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetry(rng):
    a = rng.random((16, 16))
    b = rng.random((16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_range(rng):
    for trial in range(5):
        a = rng.random((10, 10))
        b = rng.random((10, 10))
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0 + 1e-12


def test_ssim_independent_noise_low(rng):
    base = np.zeros((32, 32))
    a = base + rng.normal(0, 1.0, base.shape)
    b = base + rng.normal(0, 1.0, base.shape)
    assert ssim(a, b, peak=1.0) < 0.5


def test_ssim_rejects_small_image():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_ssim_multichannel_average(rng):
    a = rng.random((12, 12, 3))
    b = rng.random((12, 12, 3))
    peak = float(max(a.max(), b.max()))
    per = np.mean([ssim(a[:, :, c], b[:, :, c], peak=peak) for c in range(3)])
    assert ssim(a, b) == pytest.approx(per, abs=1e-12)


def test_psnr_monotone_in_noise():
    x = np.clip(np.random.default_rng(3).random((24, 24)), 0.05, None)
    for seed in range(3):
        noise = np.random.default_rng(100 + seed).normal(0, 1.0, x.shape)
        vals = [psnr(x + sigma * noise, x, peak=1.0)
                for sigma in np.linspace(0.01, 0.1, 6)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
