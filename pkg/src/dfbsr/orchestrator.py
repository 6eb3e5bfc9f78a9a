"""Alternating filter-bank design and network training.

Each design round samples ``design_samples`` training images, measures the
current network's residuals on them, designs a new bank from those
residuals, and then trains for ``design_interval`` epochs under
``pixel + alpha * filter`` loss. Rounds repeat until ``epochs`` is reached or
validation PSNR stops improving.
"""

import csv
import dataclasses
import hashlib
import io
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import srnet
from ._validation import VALID_SCALES
from .exceptions import (
    ConfigError,
    DegenerateGramWarning,
    EmptyDatasetError,
    SampleTooLargeError,
)
from .filterdesign import design_filter_bank, save_bank
from .gram import accumulate_gram
from .imagecore import crop_to_multiple, degrade, read_png
from .metrics import hf_psnr, psnr, ssim

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = (
    "epoch", "round", "loss_pixel", "loss_filter", "alpha",
    "val_psnr", "val_ssim", "val_hf_psnr", "seconds",
)
MIN_PSNR_DELTA = 0.01


@dataclass
class TrainingConfig:
    """Every scalar of a training run."""

    alpha: float = 1.0
    filters: int = 32
    k: int = 7
    design_samples: int = 300
    design_interval: int = 5
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    epsilon: float = 0.05
    seed: int = 0
    scale: int = 2
    patience: int = 10
    widths: tuple = (64, 32)
    crop_size: int = 48
    crops_per_image: int = 1
    checkpoint_every: int = 5
    design_max_side: int = 256
    val_fraction: float = 0.1
    use_filter_bank: bool = True
    deterministic: bool = False
    hr_dir: str = ""
    out_dir: str = ""

    def validate(self):
        def fail(key, msg):
            raise ConfigError(f"{key}: {msg}", key)

        if self.alpha < 0:
            fail("alpha", f"must be >= 0, got {self.alpha}")
        if self.k < 2:
            fail("k", f"must be >= 2, got {self.k}")
        if not 1 <= self.filters <= self.k * self.k - 1:
            fail("filters", f"must be in [1, k^2-1={self.k * self.k - 1}], got {self.filters}")
        if self.design_samples < 1:
            fail("design_samples", f"must be >= 1, got {self.design_samples}")
        if self.design_interval < 1:
            fail("design_interval", f"must be >= 1, got {self.design_interval}")
        if self.epochs < 0:
            fail("epochs", f"must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            fail("batch_size", f"must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            fail("lr", f"must be > 0, got {self.lr}")
        if self.epsilon < 0:
            fail("epsilon", f"must be >= 0, got {self.epsilon}")
        if self.scale not in VALID_SCALES:
            fail("scale", f"must be one of {VALID_SCALES}, got {self.scale}")
        if self.patience < 1:
            fail("patience", f"must be >= 1, got {self.patience}")
        if len(self.widths) != 2 or min(self.widths) < 1:
            fail("widths", f"need two positive layer widths, got {self.widths}")
        if self.crop_size < self.scale:
            fail("crop_size", f"must be >= scale, got {self.crop_size}")
        if self.crops_per_image < 1:
            fail("crops_per_image", f"must be >= 1, got {self.crops_per_image}")
        if self.checkpoint_every < 1:
            fail("checkpoint_every", f"must be >= 1, got {self.checkpoint_every}")
        if self.design_max_side < self.k:
            fail("design_max_side", f"must be >= k, got {self.design_max_side}")
        if self.alpha > 0 and not self.use_filter_bank:
            fail("alpha", "alpha > 0 needs use_filter_bank=true")
        if not 0 < self.val_fraction < 1:
            fail("val_fraction", f"must be in (0, 1), got {self.val_fraction}")
        return self

    # flat key=value serialisation

    def to_manifest(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def parse_value(cls, key, text):
        """Convert the string ``text`` to the type of field ``key``."""
        types = {f.name: f.default for f in dataclasses.fields(cls)}
        if key not in types:
            raise ConfigError(f"unknown configuration key {key!r}", key)
        default = types[key]
        text = str(text).strip()
        try:
            if isinstance(default, bool):
                low = text.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
            if isinstance(default, int):
                return int(text)
            if isinstance(default, float):
                return float(text)
            if isinstance(default, tuple):
                return tuple(int(x) for x in text.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {text!r}", key) from exc
        return text

    @classmethod
    def from_mapping(cls, mapping):
        values = {key: cls.parse_value(key, v) for key, v in mapping.items()}
        return cls(**values)


def parse_config_text(text):
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        TrainingConfig.parse_value(key, value)
        out[key] = value.strip()
    return out


# ---------------------------------------------------------------------------
# history


@dataclass
class EpochRecord:
    epoch: int
    round: int
    loss_pixel: float
    loss_filter: float
    alpha: float
    val_psnr: float
    val_ssim: float
    val_hf_psnr: float
    seconds: float


@dataclass
class DesignRecord:
    round: int
    epoch: int
    timestamp: float
    objectives: np.ndarray


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    designs: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must be strictly increasing")
        self.records.append(record)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def __len__(self):
        return len(self.records)

    def to_csv(self, deterministic=False):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for r in self.records:
            row = dataclasses.astuple(r)
            if deterministic:
                row = row[:-1] + (0.0,)
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def smoothed(values, window=5):
    """Trailing moving average over full windows."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return np.array([])
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def should_stop(history, patience, min_delta=MIN_PSNR_DELTA):
    """True once validation PSNR has gone ``patience`` epochs without beating
    its best value by more than ``min_delta`` dB."""
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    if isinstance(history, RunHistory):
        values = history.column("val_psnr")
    else:
        values = np.asarray(history, dtype=np.float64)
    if len(values) == 0:
        return False
    best = values[0]
    stale = 0
    for v in values[1:]:
        if v > best + min_delta:
            best = v
            stale = 0
        else:
            stale += 1
    return stale >= patience


# ---------------------------------------------------------------------------
# data


def load_hr_dir(path, scale=None):
    """All ``*.png`` files under ``path`` (sorted by name) as ``(name, image)`` pairs."""
    path = Path(path)
    if not path.is_dir():
        raise EmptyDatasetError(f"{path} is not a directory")
    items = []
    for p in sorted(path.glob("*.png")):
        img = read_png(p)
        if scale is not None:
            img = crop_to_multiple(img, scale)
        items.append((p.stem, img))
    if not items:
        raise EmptyDatasetError(f"no PNG images in {path}")
    return items


def split_dataset(items, val_fraction=0.1):
    """Deterministic train/validation split ordered by SHA-256 of the names.

    The first ``max(1, round(n * val_fraction))`` names in hash order go to
    validation. Both halves are returned sorted by name.
    """
    items = list(items)
    if len(items) < 2:
        raise EmptyDatasetError(f"need at least 2 images to split, got {len(items)}")
    order = sorted(items, key=lambda it: hashlib.sha256(it[0].encode()).hexdigest())
    n_val = min(len(items) - 1, max(1, round(len(items) * val_fraction)))
    val = sorted(order[:n_val], key=lambda it: it[0])
    train = sorted(order[n_val:], key=lambda it: it[0])
    return train, val


def sample_design_set(dataset, n_samples, seed):
    """Uniform sample without replacement, reproducible for a given seed."""
    dataset = list(dataset)
    if n_samples > len(dataset):
        raise SampleTooLargeError(f"cannot draw {n_samples} samples from {len(dataset)} images")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    idx = np.random.default_rng(seed).permutation(len(dataset))[:n_samples]
    return [dataset[i] for i in idx]


def _image_of(item):
    return item[1] if isinstance(item, tuple) else item


def _center_crop(img, side, scale):
    h, w = img.shape[:2]
    th = min(h, side) - min(h, side) % scale
    tw = min(w, side) - min(w, side) % scale
    top, left = (h - th) // 2, (w - tw) // 2
    return img[top : top + th, left : left + tw]


def _derive_seed(seed, *path):
    return int(np.random.SeedSequence([int(seed), *path]).generate_state(1)[0])


def design_round(params, design_set, config, seed=None):
    """Bank designed from the network's residuals on ``design_set``."""
    residuals = []
    for item in design_set:
        hr = _center_crop(_image_of(item), config.design_max_side, config.scale)
        pred = srnet.forward(params, degrade(hr, config.scale))
        residuals.append(hr.astype(np.float64) - pred.astype(np.float64))
    grams = accumulate_gram(residuals, config.k)
    return design_filter_bank(
        grams, config.filters, config.epsilon, config.seed if seed is None else seed
    )


# ---------------------------------------------------------------------------
# training


def _validation_metrics(params, val_inputs):
    ps, ss, hs = [], [], []
    for x, hr in val_inputs:
        pred = srnet.forward(params, x)
        ps.append(psnr(hr, pred))
        ss.append(ssim(hr, pred) if min(hr.shape[:2]) >= 11 else math.nan)
        hs.append(hf_psnr(hr, pred))
    return float(np.mean(ps)), float(np.mean(ss)), float(np.mean(hs))


def _crop_batches(train_images, crop, config, rng):
    """Random HR crops for one epoch, shuffled and grouped into batches."""
    crops = []
    for img in train_images:
        h, w = img.shape[:2]
        for _ in range(config.crops_per_image):
            top = int(rng.integers(0, h - crop + 1))
            left = int(rng.integers(0, w - crop + 1))
            crops.append(img[top : top + crop, left : left + crop])
    order = rng.permutation(len(crops))
    for start in range(0, len(order), config.batch_size):
        ys = np.stack([crops[i] for i in order[start : start + config.batch_size]])
        xs = np.stack([degrade(y, config.scale) for y in ys])
        yield xs, ys


def run_training(config, train, val, out_dir=None):
    """Run the alternating design/train loop.

    ``train`` and ``val`` are sequences of ``(name, image)`` pairs or bare
    images. When ``out_dir`` (or ``config.out_dir``) is set, the manifest,
    history CSV, every bank, and checkpoints are written there.

    Returns ``(history, params, banks)`` where ``banks`` lists the bank of
    every design round.
    """
    config.validate()
    train_images = [_image_of(it) for it in train]
    val_images = [_image_of(it) for it in val]
    if not train_images:
        raise EmptyDatasetError("training set is empty")
    if not val_images:
        raise EmptyDatasetError("validation set is empty")
    channels = train_images[0].shape[2]
    out = Path(out_dir or config.out_dir) if (out_dir or config.out_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.txt").write_text(config.to_manifest())

    train_images = [crop_to_multiple(im, config.scale) for im in train_images]
    val_inputs = []
    for im in val_images:
        hr = crop_to_multiple(im, config.scale)
        val_inputs.append((degrade(hr, config.scale), hr))
    crop = min(config.crop_size, *(min(im.shape[:2]) for im in train_images))
    crop -= crop % config.scale
    if config.use_filter_bank and config.epochs > 0 and config.design_samples > len(train_images):
        raise SampleTooLargeError(
            f"design_samples={config.design_samples} exceeds {len(train_images)} training images"
        )

    params = srnet.init_params(
        channels, tuple(config.widths), seed=_derive_seed(config.seed, 0)
    )
    state = srnet.AdamState.zeros_like(params)
    rng = np.random.default_rng(_derive_seed(config.seed, 2))
    history = RunHistory()
    banks = []
    bank = None
    round_idx = -1
    t0 = time.perf_counter()

    def checkpoint(epoch):
        if out is not None:
            srnet.save_params(params, out / f"model_epoch_{epoch}.srnw")

    def write_history():
        if out is not None:
            (out / "history.csv").write_text(history.to_csv(config.deterministic))

    checkpoint(0)
    write_history()
    last_saved = 0
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        if (epoch - 1) % config.design_interval == 0:
            round_idx += 1
            if config.use_filter_bank:
                design_set = sample_design_set(
                    train_images, config.design_samples, _derive_seed(config.seed, 1, round_idx)
                )
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", DegenerateGramWarning)
                    bank = design_round(params, design_set, config,
                                        seed=_derive_seed(config.seed, 3, round_idx))
                if caught:
                    logger.warning("round %d: %d degenerate filter(s) replaced by fallback",
                                   round_idx, len(caught))
                banks.append(bank)
                history.designs.append(
                    DesignRecord(round_idx, epoch - 1, time.perf_counter() - t0, bank.objectives)
                )
                if out is not None:
                    save_bank(bank, out / f"bank_round_{round_idx}.dfbk")

        pix_sum = filt_sum = 0.0
        count = 0
        for xs, ys in _crop_batches(train_images, crop, config, rng):
            pix, filt, grads = srnet.loss_and_grad(params, xs, ys, bank, config.alpha)
            params, state = srnet.adam_step(params, grads, state, config.lr)
            pix_sum += pix * len(xs)
            filt_sum += filt * len(xs)
            count += len(xs)
        vp, vs, vh = _validation_metrics(params, val_inputs)
        history.append(EpochRecord(
            epoch, round_idx, pix_sum / count, filt_sum / count, config.alpha,
            vp, vs, vh, time.perf_counter() - t0,
        ))
        logger.info("epoch %d round %d loss %.4f/%.4f val psnr %.3f hf %.3f",
                    epoch, round_idx, pix_sum / count, filt_sum / count, vp, vh)
        write_history()
        if epoch % config.checkpoint_every == 0:
            checkpoint(epoch)
            last_saved = epoch
        if should_stop(history, config.patience):
            logger.info("early stop at epoch %d", epoch)
            break
    if epoch != last_saved:
        checkpoint(epoch)
    return history, params, banks
