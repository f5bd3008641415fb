"""PSNR and SSIM image-quality metrics.

SSIM uses a Gaussian window of size 7 (sigma 1.5) rather than the common 11
because desk-scale phantoms are 32x32; multi-channel inputs are scored per
channel and averaged.
"""

from __future__ import annotations

import numpy as np

PSNR_CAP = 100.0
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(xhat: np.ndarray, x: np.ndarray, peak: float | None = None,
         cap: float = PSNR_CAP) -> float:
    """10*log10(peak^2 / MSE); identical inputs return the cap (dB).

    peak defaults to the ground-truth maximum.
    """
    xhat = np.asarray(xhat, dtype=float)
    x = np.asarray(x, dtype=float)
    if xhat.shape != x.shape:
        raise ValueError("psnr shape mismatch")
    if peak is None:
        peak = float(np.max(x))
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((xhat - x) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(peak * peak / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via sliding windows."""
    w = kernel.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (w, w))
    return np.tensordot(views, kernel, axes=([2, 3], [0, 1]))


def _ssim_single(a: np.ndarray, b: np.ndarray, kernel: np.ndarray,
                 c1: float, c2: float) -> float:
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a ** 2
    var_b = _windowed_mean(b * b, kernel) - mu_b ** 2
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(xhat: np.ndarray, x: np.ndarray, window: int = SSIM_WINDOW,
         k1: float = SSIM_K1, k2: float = SSIM_K2,
         sigma: float = SSIM_SIGMA, peak: float | None = None) -> float:
    """Mean local SSIM over valid Gaussian-window positions.

    Accepts (H, W) or (H, W, C); channels are scored independently and
    averaged.
    """
    xhat = np.asarray(xhat, dtype=float)
    x = np.asarray(x, dtype=float)
    if xhat.shape != x.shape:
        raise ValueError("ssim shape mismatch")
    if xhat.shape[0] < window or xhat.shape[1] < window:
        raise ValueError("image smaller than SSIM window")
    if peak is None:
        # symmetric default so ssim(a, b) == ssim(b, a)
        peak = float(max(np.max(x), np.max(xhat)))
        if peak <= 0:
            peak = 1.0
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    kernel = _gaussian_kernel(window, sigma)
    if xhat.ndim == 2:
        return _ssim_single(xhat, x, kernel, c1, c2)
    vals = [_ssim_single(xhat[:, :, c], x[:, :, c], kernel, c1, c2)
            for c in range(xhat.shape[2])]
    return float(np.mean(vals))
