"""Quadratic-form matrices of residual energy seen through a k x k filter.

For a residual channel ``Y`` (``h x w``) and a filter ``f`` (``k x k``), the
energy of the full convolution is a quadratic form in the filter:

    ||conv2d_full(Y, f)||^2 = vec(f)^T (D^T D) vec(f)

where ``D`` is the doubly block circulant (Toeplitz) matrix of ``Y``. This
module builds ``D`` explicitly (small inputs, used for checking) and computes
``D^T D`` directly from the 2-D autocorrelation of ``Y``.

Vectorisation order is row-major everywhere: ``vec(f)[i * k + j] = f[i, j]``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_kernel_side
from .exceptions import (
    ChannelMismatchError,
    CirculantTooLargeError,
    EmptyInputError,
    EmptySampleSetError,
    ShapeMismatchError,
)

# Upper bound on l * k^2 for explicit circulant matrices.
MAX_CIRCULANT_ENTRIES = 4_000_000


@dataclass
class GramMatrix:
    """Sum over residuals of ``D^T D`` for one channel."""

    k: int
    entries: np.ndarray
    sample_count: int = 1

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.shape != (self.k * self.k, self.k * self.k):
            raise ShapeMismatchError(
                f"Gram entries shape {self.entries.shape} does not match k={self.k}"
            )

    def __add__(self, other):
        if other.k != self.k:
            raise ShapeMismatchError(f"cannot add Gram matrices with k={self.k}, k={other.k}")
        return GramMatrix(self.k, self.entries + other.entries,
                          self.sample_count + other.sample_count)

    @property
    def trace(self):
        return float(np.trace(self.entries))


def _as_channel(Y, name="Y"):
    Y = np.asarray(Y)
    if Y.ndim == 3 and Y.shape[2] == 1:
        Y = Y[:, :, 0]
    if Y.ndim != 2:
        raise ShapeMismatchError(f"{name} must be a 2-D channel, got shape {Y.shape}")
    if Y.size == 0:
        raise EmptyInputError(f"{name} is empty")
    return Y


def conv2d_full(x, f):
    """Full 2-D linear convolution with zero padding.

    Output has shape ``(h + k - 1, w + k - 1)``:
    ``out[p, q] = sum_{i,j} f[i, j] * x[p - i, q - j]``.
    """
    x = _as_channel(x, "x")
    f = np.asarray(f)
    if f.ndim != 2 or f.size == 0:
        raise EmptyInputError(f"kernel must be a non-empty 2-D array, got shape {f.shape}")
    kh, kw = f.shape
    xp = np.pad(x, ((kh - 1, kh - 1), (kw - 1, kw - 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw))
    return np.einsum("pqij,ij->pq", windows, f[::-1, ::-1])


def build_circulant(Y, k):
    """Explicit ``l x k^2`` matrix ``D`` with ``D @ vec(f) == vec(conv2d_full(Y, f))``.

    Column ``i * k + j`` holds ``Y`` shifted by ``(i, j)`` inside the
    ``(h + k - 1) x (w + k - 1)`` output grid. Intended as a checking oracle;
    raises :class:`CirculantTooLargeError` above ``MAX_CIRCULANT_ENTRIES``.
    """
    Y = _as_channel(Y)
    k = check_kernel_side(k)
    h, w = Y.shape
    H, W = h + k - 1, w + k - 1
    if H * W * k * k > MAX_CIRCULANT_ENTRIES:
        raise CirculantTooLargeError(
            f"circulant would have {H * W * k * k} entries (limit {MAX_CIRCULANT_ENTRIES})"
        )
    D = np.zeros((H * W, k * k), dtype=np.float64)
    grid = np.zeros((H, W), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            grid[:] = 0.0
            grid[i : i + h, j : j + w] = Y
            D[:, i * k + j] = grid.ravel()
    return D


def autocorrelation(Y, max_lag):
    """2-D autocorrelation ``R[dy + L, dx + L] = sum_p Y(p) Y(p + (dy, dx))``.

    Lags run over ``-L..L`` in both axes, zero padding outside ``Y``.
    Accumulated in float64 by direct sliding-window sums.
    """
    Y = _as_channel(Y).astype(np.float64)
    h, w = Y.shape
    L = max_lag
    R = np.zeros((2 * L + 1, 2 * L + 1))
    for dy in range(0, L + 1):
        for dx in range(-L, L + 1):
            if dy == 0 and dx < 0:
                continue
            if dy >= h or abs(dx) >= w:
                continue
            a = Y[: h - dy, max(0, -dx) : w - max(0, dx)]
            b = Y[dy:, max(0, dx) : w - max(0, -dx)]
            v = np.einsum("ij,ij->", a, b)
            R[L + dy, L + dx] = v
            R[L - dy, L - dx] = v
    return R


def gram_from_autocorr(Y, k):
    """``D^T D`` for residual channel ``Y`` without forming ``D``.

    Entry ``(a, b)`` is the autocorrelation of ``Y`` at the offset between
    the 2-D positions of vec indices ``a`` and ``b``.
    """
    Y = _as_channel(Y)
    k = check_kernel_side(k)
    R = autocorrelation(Y, k - 1)
    idx = np.arange(k * k)
    rows, cols = idx // k, idx % k
    dr = rows[:, None] - rows[None, :] + (k - 1)
    dc = cols[:, None] - cols[None, :] + (k - 1)
    return GramMatrix(k, R[dr, dc], 1)


def accumulate_gram(residuals, k):
    """Per-channel sum of ``gram_from_autocorr`` over a set of residuals.

    ``residuals`` is a sequence of ``(h, w, C)`` arrays (sizes may differ,
    channel counts may not). Summation runs in input order in float64.
    """
    residuals = list(residuals)
    if not residuals:
        raise EmptySampleSetError("no residuals to accumulate")
    arrays = []
    for r in residuals:
        r = np.asarray(r)
        if r.ndim == 2:
            r = r[:, :, None]
        arrays.append(r)
    channels = arrays[0].shape[2]
    for r in arrays:
        if r.ndim != 3 or r.shape[2] != channels:
            raise ChannelMismatchError(
                f"residual with shape {r.shape} does not have {channels} channels"
            )
    k = check_kernel_side(k)
    out = []
    for c in range(channels):
        total = np.zeros((k * k, k * k))
        for r in arrays:
            total += gram_from_autocorr(r[:, :, c], k).entries
        out.append(GramMatrix(k, total, len(arrays)))
    return out
