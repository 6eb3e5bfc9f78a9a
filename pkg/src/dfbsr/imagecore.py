"""Image arrays, bicubic resampling, residuals, patches and PNG I/O.

Images are ``(H, W, C)`` float32 arrays with nominal range [0, 1]. Resampling
never clips; clipping only happens in :func:`write_png`.
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ._validation import check_image, check_same_shape, check_scale
from .exceptions import NonDivisibleDimsError, PatchTooLargeError, ShapeMismatchError

# Catmull-Rom
CUBIC_A = -0.5


def cubic_kernel(x, a=CUBIC_A):
    """Keys cubic convolution kernel evaluated elementwise."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _reflect_index(j, n):
    """Half-sample symmetric reflection (edge pixel repeated): -1 -> 0, n -> n-1."""
    period = 2 * n
    j = np.mod(j, period)
    return np.where(j >= n, period - 1 - j, j)


def resize_matrix(n_in, n_out):
    """Dense ``(n_out, n_in)`` bicubic resampling matrix for one axis.

    Pixel centres are aligned (half-pixel convention). When shrinking, the
    kernel is stretched by the reduction factor so it acts as an antialiasing
    filter. Rows are normalised to sum to one, so constants are preserved.
    """
    ratio = n_out / n_in
    kscale = min(ratio, 1.0)
    support = 2.0 / kscale
    centres = (np.arange(n_out) + 0.5) / ratio - 0.5
    first = np.floor(centres - support).astype(int) + 1
    ntaps = int(np.ceil(2 * support)) + 1
    taps = first[:, None] + np.arange(ntaps)[None, :]
    weights = cubic_kernel((centres[:, None] - taps) * kscale) * kscale
    weights /= weights.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), ntaps)
    np.add.at(mat, (rows, _reflect_index(taps, n_in).ravel()), weights.ravel())
    return mat


def resize(img, height, width):
    """Separable bicubic resize of an ``(H, W, C)`` image to ``height x width``."""
    img = check_image(img)
    rows = resize_matrix(img.shape[0], height)
    cols = resize_matrix(img.shape[1], width)
    out = np.einsum("ij,jkc->ikc", rows, img.astype(np.float64))
    out = np.einsum("lk,ikc->ilc", cols, out)
    return out.astype(np.float32)


def downsample(img, scale):
    """Bicubic decimation by an integer factor in {2, 3, 4}."""
    scale = check_scale(scale)
    img = check_image(img)
    h, w = img.shape[:2]
    if h % scale or w % scale:
        raise NonDivisibleDimsError(f"dims {h}x{w} not divisible by scale {scale}")
    return resize(img, h // scale, w // scale)


def upsample(img, scale):
    """Bicubic interpolation by an integer factor in {2, 3, 4}."""
    scale = check_scale(scale)
    img = check_image(img)
    h, w = img.shape[:2]
    return resize(img, h * scale, w * scale)


def degrade(hr, scale):
    """Network input for an HR image: downsample then upsample back to HR size."""
    return upsample(downsample(hr, scale), scale)


def crop_to_multiple(img, scale):
    """Crop the bottom/right edge so both dims are divisible by ``scale``."""
    img = check_image(img)
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


def residual(y, yhat):
    """Elementwise ``y - yhat`` for two images of equal shape."""
    y = check_image(y, "y", dtype=None)
    yhat = check_image(yhat, "yhat", dtype=None)
    check_same_shape(y, yhat, ("y", "yhat"))
    return (y - yhat).astype(np.float32)


def extract_patches(img, size, stride):
    """All ``size x size`` windows at ``stride`` offsets, in row-major order."""
    img = check_image(img, dtype=None)
    h, w = img.shape[:2]
    if size < 1 or size > min(h, w):
        raise PatchTooLargeError(f"patch size {size} does not fit image {h}x{w}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return [
        img[r : r + size, c : c + size].copy()
        for r in range(0, h - size + 1, stride)
        for c in range(0, w - size + 1, stride)
    ]


def n_patches(h, w, size, stride):
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


def read_png(path):
    """Read an 8-bit grey or RGB PNG as ``(H, W, C)`` float32 in [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            if im.mode in ("LA", "I;16", "I", "F"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return check_image(arr)


def write_png(path, img):
    """Write an image with 1 or 3 channels as an 8-bit PNG, clipping to [0, 1]."""
    img = check_image(img, dtype=None)
    if img.shape[2] not in (1, 3):
        raise ShapeMismatchError(f"PNG export needs 1 or 3 channels, got {img.shape[2]}")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(Path(path), format="PNG")
