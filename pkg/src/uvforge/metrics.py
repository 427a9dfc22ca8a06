"""Image quality metrics on [0,1] float images: PSNR and windowed SSIM.

Both accept an optional boolean mask. PSNR averages squared error over the
masked pixels; SSIM averages the per-pixel structural similarity over windows
that lie fully inside the mask (partially covered windows are dropped rather
than renormalized, which keeps the statistic unbiased near coverage edges).
"""

import numpy as np
from scipy import ndimage

from .errors import DimensionError, InvariantError

PSNR_CAP_DB = 99.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b, mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:2]:
            raise DimensionError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
    return a, b, mask


def mse(a, b, mask=None):
    a, b, mask = _check_pair(a, b, mask)
    d2 = (a - b) ** 2
    if mask is None:
        return float(d2.mean())
    if not mask.any():
        raise InvariantError("mse over an empty mask")
    return float(d2[mask].mean())


def psnr(a, b, mask=None):
    """10*log10(1/MSE) for [0,1] data, capped at 99 dB when MSE < 1e-10."""
    m = mse(a, b, mask)
    if m < 1e-10:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / m)))


def _gaussian_filter(img, sigma):
    # truncate at 5 taps each side so the kernel support is exactly 11
    return ndimage.gaussian_filter(img, sigma, truncate=(SSIM_WIN - 1) / 2 / sigma, mode="reflect")


def ssim(a, b, mask=None):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5, k1 0.01, k2 0.03).

    Windows touching the image border or any unmasked pixel are excluded
    from the mean. Multichannel images average the per-channel score.
    """
    a, b, mask = _check_pair(a, b, mask)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    H, W = a.shape[:2]
    pad = (SSIM_WIN - 1) // 2
    if H < SSIM_WIN or W < SSIM_WIN:
        raise DimensionError(f"image {H}x{W} smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")

    valid = np.zeros((H, W), dtype=bool)
    valid[pad : H - pad, pad : W - pad] = True
    if mask is not None:
        full = ndimage.minimum_filter(mask.astype(np.uint8), size=SSIM_WIN, mode="constant", cval=0)
        valid &= full.astype(bool)
    if not valid.any():
        raise InvariantError("no fully covered SSIM windows")

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        ux = _gaussian_filter(x, SSIM_SIGMA)
        uy = _gaussian_filter(y, SSIM_SIGMA)
        uxx = _gaussian_filter(x * x, SSIM_SIGMA)
        uyy = _gaussian_filter(y * y, SSIM_SIGMA)
        uxy = _gaussian_filter(x * y, SSIM_SIGMA)
        vx = uxx - ux * ux
        vy = uyy - uy * uy
        vxy = uxy - ux * uy
        s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        scores.append(s[valid].mean())
    return float(np.mean(scores))
