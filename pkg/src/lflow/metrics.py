"""Reconstruction quality metrics: MSE, PSNR, SSIM.

PSNR follows 10 log10(peak^2 / MSE) and returns +inf when the images are
bit-identical (MSE = 0); report writers pass that sentinel through.
SSIM uses the standard 11x11 Gaussian window (std 1.5) with constants
C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2. Local statistics are computed
with circular boundary handling, consistent with the periodic convention
of the operators; a brute-force sliding-window implementation in the
test suite pins the values.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError
from .numerics import as_field
from .operators import CircConvOperator, Kernel, build_gaussian_kernel

SSIM_WINDOW_SIZE = 11
SSIM_WINDOW_STD = 1.5


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_field(a)
    b = as_field(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared error."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))


def ssim(a, b, peak: float = 1.0, window: Kernel | None = None) -> float:
    """Mean structural similarity over circularly filtered local windows.

    The default window is the 11x11 Gaussian with std 1.5; pass a custom
    Kernel to override. Images must be 2-D and at least window-sized.
    """
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ShapeMismatchError(f"ssim expects 2-D images, got {a.ndim}-D")
    if window is None:
        window = build_gaussian_kernel(SSIM_WINDOW_SIZE, SSIM_WINDOW_STD)
    filt = CircConvOperator(window, a.shape)
    mu_a = filt.apply(a)
    mu_b = filt.apply(b)
    var_a = filt.apply(a * a) - mu_a * mu_a
    var_b = filt.apply(b * b) - mu_b * mu_b
    cov_ab = filt.apply(a * b) - mu_a * mu_b
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
