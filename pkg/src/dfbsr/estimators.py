"""scikit-learn style wrappers around filter design and training."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import srnet
from ._validation import check_batch, check_image, check_scale
from .filterdesign import DEFAULT_EPSILON, check_bank_channels, design_filter_bank
from .gram import accumulate_gram
from .imagecore import upsample
from .metrics import psnr
from .orchestrator import TrainingConfig, run_training, split_dataset


def _image_list(X, name):
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return [check_image(x, name, dtype=np.float64) for x in X]
    if isinstance(X, np.ndarray) and X.ndim in (2, 3):
        return [check_image(X, name, dtype=np.float64)]
    return [check_image(x, name, dtype=np.float64) for x in X]


class DiscriminatorFilterBank(TransformerMixin, BaseEstimator):
    """Design a bank of unit-norm, zero-sum, near-orthogonal filters.

    ``fit`` takes residual images (or predictions ``X`` with targets ``y``,
    in which case the residual is ``y - X``) and keeps, per channel, the
    ``n_filters`` directions of largest residual energy. ``transform`` returns
    the full-convolution responses with shape ``(N, C, M, H+k-1, W+k-1)``.
    """

    def __init__(self, k=7, n_filters=32, epsilon=DEFAULT_EPSILON, random_state=0):
        self.k = k
        self.n_filters = n_filters
        self.epsilon = epsilon
        self.random_state = random_state

    def fit(self, X, y=None):
        res = _image_list(X, "X")
        if y is not None:
            targets = _image_list(y, "y")
            if len(targets) != len(res):
                raise ValueError(f"X has {len(res)} images but y has {len(targets)}")
            res = [t - r for t, r in zip(targets, res)]
        grams = accumulate_gram(res, self.k)
        seed = 0 if self.random_state is None else int(self.random_state)
        self.bank_ = design_filter_bank(grams, self.n_filters, self.epsilon, seed)
        self.filters_ = self.bank_.filters
        self.objectives_ = self.bank_.objectives
        self.n_channels_ = self.bank_.channels
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        xb = check_batch(X, "X", dtype=np.float64)
        check_bank_channels(self.bank_, xb.shape[3])
        return srnet._filter_responses(xb, self.bank_)

    def energy(self, X):
        """Per-image filter loss of residuals ``X``: ``sum ||F * x||^2 / M``."""
        z = self.transform(X)
        return np.sum(z * z, axis=(1, 2, 3, 4)) / self.bank_.n_filters


class AdaptiveLossSR(RegressorMixin, BaseEstimator):
    """Three-layer super-resolution CNN trained under ``pixel + alpha * filter`` loss.

    ``fit`` takes high-resolution images and builds the low-resolution inputs
    itself. ``predict`` takes low-resolution images and returns images
    ``scale`` times larger.
    """

    def __init__(self, alpha=1.0, n_filters=32, k=7, design_samples=300, design_interval=5,
                 epochs=100, batch_size=32, lr=1e-3, epsilon=DEFAULT_EPSILON, scale=2,
                 widths=(64, 32), crop_size=48, crops_per_image=1, patience=10,
                 val_fraction=0.1, random_state=0):
        self.alpha = alpha
        self.n_filters = n_filters
        self.k = k
        self.design_samples = design_samples
        self.design_interval = design_interval
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.epsilon = epsilon
        self.scale = scale
        self.widths = widths
        self.crop_size = crop_size
        self.crops_per_image = crops_per_image
        self.patience = patience
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _config(self):
        return TrainingConfig(
            alpha=float(self.alpha), filters=self.n_filters, k=self.k,
            design_samples=self.design_samples, design_interval=self.design_interval,
            epochs=self.epochs, batch_size=self.batch_size, lr=float(self.lr),
            epsilon=float(self.epsilon), seed=0 if self.random_state is None else int(self.random_state),
            scale=self.scale, patience=self.patience, widths=tuple(self.widths),
            crop_size=self.crop_size, crops_per_image=self.crops_per_image,
            val_fraction=self.val_fraction, use_filter_bank=self.alpha > 0, deterministic=True,
        ).validate()

    def fit(self, X, y=None, out_dir=None):
        config = self._config()
        images = [im.astype(np.float32) for im in _image_list(X, "X")]
        train, val = split_dataset([(f"img{i:06d}", im) for i, im in enumerate(images)],
                                   config.val_fraction)
        self.history_, self.params_, self.banks_ = run_training(config, train, val, out_dir)
        self.n_channels_ = self.params_.channels
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        scale = check_scale(self.scale)
        single = isinstance(X, np.ndarray) and X.ndim in (2, 3)
        out = [srnet.forward(self.params_, upsample(x, scale)) for x in _image_list(X, "X")]
        return out[0] if single else out

    def score(self, X, y, sample_weight=None):
        """Mean PSNR (dB) of ``predict(X)`` against ``y``."""
        preds = self.predict(X)
        if isinstance(preds, np.ndarray):
            preds = [preds]
        targets = _image_list(y, "y")
        vals = [psnr(t, p) for t, p in zip(targets, preds)]
        return float(np.average(vals, weights=sample_weight))
