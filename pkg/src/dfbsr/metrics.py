"""PSNR, SSIM and high-frequency PSNR (PSNR after a discrete Laplacian).

All metrics work on every channel directly (no luma conversion) with a peak
value of 1.0. PSNR of identical images is ``math.inf``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_image, check_same_shape
from .exceptions import ImageTooSmallError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    hf_psnr: float


def psnr(ref, img, peak=1.0):
    ref = check_image(ref, "ref", dtype=np.float64)
    img = check_image(img, "img", dtype=np.float64)
    check_same_shape(ref, img, ("ref", "img"))
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((ref - img) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    """Normalised 2-D Gaussian window."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x, win):
    """Weighted local means over every fully-contained window position."""
    k = win.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(x, (k, k))
    return np.einsum("ijab,ab->ij", views, win)


def ssim(ref, img, data_range=1.0):
    """Mean local SSIM, Gaussian 11x11 window (sigma 1.5), averaged over channels.

    Local statistics use population (biased) moments; only windows lying
    entirely inside the image contribute.
    """
    ref = check_image(ref, "ref", dtype=np.float64)
    img = check_image(img, "img", dtype=np.float64)
    check_same_shape(ref, img, ("ref", "img"))
    if min(ref.shape[:2]) < SSIM_WIN:
        raise ImageTooSmallError(f"SSIM needs both dims >= {SSIM_WIN}, got {ref.shape[:2]}")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    win = gaussian_window()
    vals = []
    for c in range(ref.shape[2]):
        x, y = ref[:, :, c], img[:, :, c]
        mx = _filter_valid(x, win)
        my = _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def laplacian(img):
    """4-neighbour Laplacian per channel, same size, mirrored borders (edge pixel repeated)."""
    img = check_image(img, dtype=np.float64)
    if min(img.shape[:2]) < 3:
        raise ImageTooSmallError(f"Laplacian needs both dims >= 3, got {img.shape[:2]}")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.correlate(img[:, :, c], LAPLACIAN, mode="reflect")
    return out


def _roundoff_eps(*arrays):
    eps = [np.finfo(a.dtype).eps for a in map(np.asarray, arrays) if a.dtype.kind == "f"]
    return max(eps, default=np.finfo(np.float64).eps)


def hf_psnr(ref, img):
    """PSNR between the Laplacians of ``ref`` and ``img`` (peak 1.0).

    The Laplacian removes any constant offset, so images equal up to DC score
    ``inf``. Differences at the round-off level of the inputs (what adding an
    offset in floating point leaves behind) count as zero.
    """
    eps = _roundoff_eps(ref, img)
    lr, li = laplacian(ref), laplacian(img)
    check_same_shape(lr, li, ("ref", "img"))
    scale = max(float(np.max(np.abs(check_image(ref, dtype=np.float64)))),
                float(np.max(np.abs(check_image(img, dtype=np.float64)))), 1.0)
    if float(np.max(np.abs(lr - li))) <= 16.0 * eps * scale:
        return math.inf
    return psnr(lr, li, peak=1.0)


def evaluate(ref, img):
    return MetricReport(psnr(ref, img), ssim(ref, img), hf_psnr(ref, img))
