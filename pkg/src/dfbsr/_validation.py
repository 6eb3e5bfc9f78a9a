"""Input validation helpers shared by the public functions and estimators."""

import numpy as np

from .exceptions import (
    BadScaleError,
    ChannelMismatchError,
    EmptyInputError,
    ShapeMismatchError,
)

VALID_SCALES = (2, 3, 4)


def check_image(img, name="img", dtype=np.float32):
    """Return ``img`` as an ``(H, W, C)`` floating array.

    2-D input is treated as a single-channel image. Values are not clipped.
    """
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeMismatchError(f"{name} must be HxW or HxWxC, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise EmptyInputError(f"{name} has an empty dimension: {arr.shape}")
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return arr


def check_batch(batch, name="batch", dtype=None):
    """Return a stack of images as an ``(N, H, W, C)`` array."""
    if isinstance(batch, (list, tuple)):
        if len(batch) == 0:
            raise EmptyInputError(f"{name} is empty")
        batch = np.stack([check_image(b, name, dtype=None) for b in batch])
    arr = np.asarray(batch)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ShapeMismatchError(f"{name} must be NxHxWxC, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyInputError(f"{name} is empty")
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{names[0]} and {names[1]} differ in shape: {a.shape} vs {b.shape}"
        )


def check_channels(arr, channels, name="input"):
    if arr.shape[-1] != channels:
        raise ChannelMismatchError(
            f"{name} has {arr.shape[-1]} channels, expected {channels}"
        )


def check_scale(scale):
    if isinstance(scale, bool) or int(scale) != scale or int(scale) not in VALID_SCALES:
        raise BadScaleError(f"scale must be one of {VALID_SCALES}, got {scale!r}")
    return int(scale)


def check_kernel_side(k):
    if int(k) != k or k < 1:
        raise EmptyInputError(f"filter side must be a positive integer, got {k!r}")
    return int(k)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
