"""Three-layer pre-upsampling SR network with explicit backpropagation.

Layout is ``(N, H, W, C)`` for activations and ``(C_out, C_in, kh, kw)`` for
kernels. Every convolution uses zero "same" padding, so the output has the
shape of the (bicubic pre-upsampled) input.

Losses follow the per-image sum convention: the pixel term is the squared
l2 norm of each residual averaged over the batch, and the filter term is the
energy of the residual after full convolution with every bank filter,
divided by ``M * N``.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_batch, check_random_state
from .exceptions import (
    ChannelMismatchError,
    EmptyBatchError,
    FormatError,
    NegativeAlphaError,
    ShapeMismatchError,
)
from .filterdesign import check_bank_channels

DEFAULT_WIDTHS = (64, 32)
DEFAULT_KERNELS = (9, 5, 5)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_MAGIC = b"SRNW1"


@dataclass
class ModelParams:
    """Kernels ``(C_out, C_in, kh, kw)`` and biases ``(C_out,)`` per layer."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatchError("weights and biases must have one entry per layer")
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 4 or b.shape != (W.shape[0],):
                raise ShapeMismatchError(f"bad layer shapes {W.shape} / {b.shape}")

    @property
    def channels(self):
        return self.weights[0].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self):
        """All parameter arrays in checkpoint order: W1, b1, W2, b2, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def n_params(self):
        return sum(a.size for a in self.arrays())

    def copy(self):
        return ModelParams.from_arrays([a.copy() for a in self.arrays()])

    def astype(self, dtype):
        return ModelParams.from_arrays([a.astype(dtype) for a in self.arrays()])

    def zeros_like(self):
        return ModelParams.from_arrays([np.zeros_like(a) for a in self.arrays()])


def n_params_for(channels, widths=DEFAULT_WIDTHS, kernels=DEFAULT_KERNELS):
    dims = [channels, *widths, channels]
    return sum(k * k * cin * cout + cout for k, cin, cout in zip(kernels, dims[:-1], dims[1:]))


def init_params(channels, widths=DEFAULT_WIDTHS, kernels=DEFAULT_KERNELS, seed=0,
                dtype=np.float32):
    """He-uniform kernels and zero biases."""
    if len(kernels) != len(widths) + 1:
        raise ValueError("need one kernel size per layer (len(widths) + 1)")
    rng = check_random_state(seed)
    dims = [channels, *widths, channels]
    weights, biases = [], []
    for k, cin, cout in zip(kernels, dims[:-1], dims[1:]):
        if k % 2 == 0:
            raise ValueError(f"kernel sizes must be odd for same padding, got {k}")
        limit = np.sqrt(6.0 / (cin * k * k))
        weights.append(rng.uniform(-limit, limit, size=(cout, cin, k, k)).astype(dtype))
        biases.append(np.zeros(cout, dtype=dtype))
    return ModelParams(weights, biases)


# ---------------------------------------------------------------------------
# convolution primitives


def _im2col(x, k):
    """``(N, H, W, C)`` -> ``(N*H*W, C*k*k)`` patches with zero same-padding."""
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return win.reshape(-1, x.shape[3] * k * k)


def conv_same(x, W, b):
    """Same-padded cross-correlation of ``(N, H, W, C_in)`` with ``W``."""
    N, H, Wd, _ = x.shape
    cout, _, k, _ = W.shape
    cols = _im2col(x, k)
    out = cols @ W.reshape(cout, -1).T + b
    return out.reshape(N, H, Wd, cout), cols


def conv_same_backward(dout, cols, W, need_dx=True):
    cout, cin, k, _ = W.shape
    d2 = dout.reshape(-1, cout)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        dcols = _im2col(dout, k)
        Wflip = W[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(-1, cin)
        dx = (dcols @ Wflip).reshape(dout.shape[:3] + (cin,))
    return dx, dW, db


# ---------------------------------------------------------------------------
# network


def _as_batch(x, params):
    single = np.ndim(x) in (2, 3)
    xb = check_batch(x, "x")
    if xb.shape[3] != params.channels:
        raise ChannelMismatchError(
            f"input has {xb.shape[3]} channels, model expects {params.channels}"
        )
    return xb.astype(params.dtype, copy=False), single


def _forward_cached(params, xb):
    cache = []
    h = xb
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z, cols = conv_same(h, W, b)
        mask = None
        if i < last:
            mask = z > 0
            z = z * mask
        cache.append((cols, mask))
        h = z
    return h, cache


def forward(params, x):
    """Network output for an image ``(H, W, C)`` or a batch ``(N, H, W, C)``."""
    xb, single = _as_batch(x, params)
    out, _ = _forward_cached(params, xb)
    return out[0] if single else out


def _backward_cached(params, cache, dout):
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    d = dout
    for i in range(len(params.weights) - 1, -1, -1):
        cols, mask = cache[i]
        if mask is not None:
            d = d * mask
        d, grads_w[i], grads_b[i] = conv_same_backward(d, cols, params.weights[i], need_dx=i > 0)
    return ModelParams(grads_w, grads_b)


# ---------------------------------------------------------------------------
# losses


def _pair(y, yhat):
    yb = check_batch(y, "y")
    yhb = check_batch(yhat, "yhat")
    if yb.shape != yhb.shape:
        raise ShapeMismatchError(f"y and yhat differ in shape: {yb.shape} vs {yhb.shape}")
    return yb, yhb


def pixel_loss(y, yhat):
    """Batch mean of the squared l2 norm of ``y - yhat`` (sum over pixels and channels)."""
    yb, yhb = _pair(y, yhat)
    r = yb.astype(np.float64) - yhb.astype(np.float64)
    return float(np.sum(r * r) / yb.shape[0])


def _filter_responses(res, bank):
    """Full convolution of every residual channel with its bank filters.

    ``res`` is ``(N, H, W, C)``; returns ``(N, C, M, H+k-1, W+k-1)``.
    """
    N, H, W, C = res.shape
    k, M = bank.k, bank.n_filters
    rp = np.pad(res, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
    out = np.empty((N, C, M, H + k - 1, W + k - 1), dtype=np.float64)
    for c in range(C):
        win = np.lib.stride_tricks.sliding_window_view(rp[..., c], (k, k), axis=(1, 2))
        flipped = bank.filters[c, :, ::-1, ::-1].reshape(M, -1)
        z = win.reshape(-1, k * k) @ flipped.T
        out[:, c] = z.reshape(N, H + k - 1, W + k - 1, M).transpose(0, 3, 1, 2)
    return out


def filter_loss(y, yhat, bank):
    """Residual energy through the bank, ``sum ||F_cm * (y - yhat)_c||^2 / (M N)``.

    The alpha weight is not applied here.
    """
    yb, yhb = _pair(y, yhat)
    check_bank_channels(bank, yb.shape[3])
    res = yb.astype(np.float64) - yhb.astype(np.float64)
    z = _filter_responses(res, bank)
    return float(np.sum(z * z) / (bank.n_filters * yb.shape[0]))


def _filter_loss_grad(res, bank):
    """Loss and gradient of the filter term with respect to the residual."""
    N, H, W, C = res.shape
    k, M = bank.k, bank.n_filters
    z = _filter_responses(res, bank)
    loss = float(np.sum(z * z) / (M * N))
    grad = np.empty_like(res, dtype=np.float64)
    for c in range(C):
        # valid correlation of each response with its filter, summed over filters
        win = np.lib.stride_tricks.sliding_window_view(z[:, c], (k, k), axis=(2, 3))
        grad[..., c] = np.einsum("nmhwij,mij->nhw", win, bank.filters[c], optimize=True)
    grad *= 2.0 / (M * N)
    return loss, grad


def total_loss(y, yhat, bank, alpha):
    """``pixel_loss + alpha * filter_loss``; exactly ``pixel_loss`` when alpha is 0."""
    if alpha < 0:
        raise NegativeAlphaError(f"alpha must be >= 0, got {alpha}")
    pix = pixel_loss(y, yhat)
    if alpha == 0:
        return pix
    return pix + alpha * filter_loss(y, yhat, bank)


def loss_and_grad(params, x, y, bank=None, alpha=0.0):
    """Forward and backward pass over one batch.

    Returns ``(pixel_loss, filter_loss, grads)``. With ``alpha == 0`` the
    filter term never touches the gradient; it is still reported when a bank
    is given, and is 0.0 otherwise.
    """
    if alpha < 0:
        raise NegativeAlphaError(f"alpha must be >= 0, got {alpha}")
    if len(x) == 0:
        raise EmptyBatchError("batch is empty")
    xb, _ = _as_batch(x, params)
    yb = check_batch(y, "y").astype(np.float64)
    if xb.shape != yb.shape:
        raise ShapeMismatchError(f"x and y differ in shape: {xb.shape} vs {yb.shape}")
    N = xb.shape[0]
    yhat, cache = _forward_cached(params, xb)
    res = yb - yhat
    pix = float(np.sum(res * res) / N)
    dyhat = (-2.0 / N) * res
    filt = 0.0
    if alpha > 0:
        check_bank_channels(bank, xb.shape[3])
        filt, gres = _filter_loss_grad(res, bank)
        dyhat -= alpha * gres
    elif bank is not None:
        check_bank_channels(bank, xb.shape[3])
        z = _filter_responses(res, bank)
        filt = float(np.sum(z * z) / (bank.n_filters * N))
    grads = _backward_cached(params, cache, dyhat.astype(params.dtype))
    return pix, filt, grads


def backward(params, x, y, bank=None, alpha=0.0):
    """Gradient of ``total_loss`` over the batch, shaped like ``params``."""
    return loss_and_grad(params, x, y, bank, alpha)[2]


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        arrs = params.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], 0)


def adam_step(params, grads, state, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    p_arrs, g_arrs = params.arrays(), grads.arrays()
    if len(p_arrs) != len(g_arrs) or len(p_arrs) != len(state.m) or any(
        p.shape != g.shape or p.shape != m.shape for p, g, m in zip(p_arrs, g_arrs, state.m)
    ):
        raise ShapeMismatchError("params, grads and optimiser state shapes disagree")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrs, g_arrs, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append((p - upd).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return ModelParams.from_arrays(new_p), AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# checkpoints
#
# SRNW1 layout (all little-endian):
#   b"SRNW1"
#   uint32 number of layers L
#   L x 4 uint32: C_out, C_in, kh, kw
#   per layer: kernel as float32 in C order (C_out, C_in, kh, kw), then bias float32 (C_out,)


def params_to_bytes(params):
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(params.weights))]
    for W in params.weights:
        parts.append(struct.pack("<4I", *W.shape))
    for W, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def params_from_bytes(blob):
    if blob[:5] != CHECKPOINT_MAGIC:
        raise FormatError("not an SRNW1 checkpoint")
    pos = 5
    try:
        (L,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shapes = []
        for _ in range(L):
            shapes.append(struct.unpack_from("<4I", blob, pos))
            pos += 16
        weights, biases = [], []
        for shape in shapes:
            n = int(np.prod(shape))
            weights.append(np.frombuffer(blob, "<f4", n, pos).reshape(shape).astype(np.float32))
            pos += 4 * n
            biases.append(np.frombuffer(blob, "<f4", shape[0], pos).astype(np.float32))
            pos += 4 * shape[0]
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated SRNW1 checkpoint: {exc}") from exc
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes in SRNW1 checkpoint")
    return ModelParams(weights, biases)


def save_params(params, path):
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path):
    return params_from_bytes(Path(path).read_bytes())
