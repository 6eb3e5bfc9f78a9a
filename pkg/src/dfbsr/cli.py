"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data or runtime error.
"""

import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import srnet
from .datasets import natural_crops, synthetic_textures
from .exceptions import ConfigError, DegenerateGramWarning, DFBSRError
from .filterdesign import design_filter_bank, load_bank, save_bank
from .gram import accumulate_gram
from .imagecore import crop_to_multiple, degrade, write_png
from .metrics import hf_psnr, psnr, ssim
from .orchestrator import (
    TrainingConfig,
    design_round,
    load_hr_dir,
    parse_config_text,
    run_training,
    split_dataset,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
TILE_ZOOM = 16
RESIDUAL_OFFSET = 0.5

_DEFAULTS = TrainingConfig()

# (flag, config key, type, help)
TRAIN_FLAGS = [
    ("--alpha", "alpha", float, "weight of the filter-bank loss"),
    ("--k", "k", int, "filter side length"),
    ("--filters", "filters", int, "filters per channel (at most k^2-1)"),
    ("--design-samples", "design_samples", int, "training images sampled per design round"),
    ("--design-interval", "design_interval", int, "epochs between design rounds"),
    ("--epochs", "epochs", int, "maximum number of epochs"),
    ("--batch-size", "batch_size", int, "crops per optimisation step"),
    ("--lr", "lr", float, "Adam learning rate"),
    ("--epsilon", "epsilon", float, "orthogonality slack between filters"),
    ("--seed", "seed", int, "master random seed"),
    ("--scale", "scale", int, "upscaling factor (2, 3 or 4)"),
    ("--patience", "patience", int, "early-stop patience in epochs on validation PSNR"),
    ("--widths", "widths", str, "hidden layer widths, comma separated"),
    ("--crop-size", "crop_size", int, "HR training crop side"),
    ("--crops-per-image", "crops_per_image", int, "random crops per image per epoch"),
    ("--checkpoint-every", "checkpoint_every", int, "epochs between checkpoints"),
    ("--design-max-side", "design_max_side", int, "design images are centre-cropped to this side"),
    ("--val-fraction", "val_fraction", float, "fraction of images held out for validation"),
]


def _default_text(key):
    v = getattr(_DEFAULTS, key)
    return ",".join(map(str, v)) if isinstance(v, tuple) else v


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dfbsr",
        description="Train and inspect super-resolution CNNs under a designed filter-bank loss.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="alternate filter design and CNN training")
    p.add_argument("--hr-dir", help="directory of HR PNG images (at least 2)", default=None)
    p.add_argument("--out-dir", help="where manifest, history, banks and checkpoints go",
                   default=None)
    p.add_argument("--config", help="flat key=value file; flags given here take precedence",
                   default=None)
    for flag, key, typ, text in TRAIN_FLAGS:
        # None marks "not given" so config-file values are not overridden
        p.add_argument(flag, dest=key, type=typ, default=None,
                       help=f"{text} (default: {_default_text(key)})")
    p.add_argument("--no-filter-bank", dest="use_filter_bank", action="store_const",
                   const=False, default=None, help="skip design rounds entirely (needs alpha 0)")
    p.add_argument("--deterministic", action="store_const", const=True, default=None,
                   help="write 0.0 in the seconds column so reruns are byte-identical")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "design-filters", help="design one filter bank from a model's residuals",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        description="Residual PNGs for --residual-dir are offset-encoded: pixel value 0.5 "
                    "means zero residual (stored value = residual + 0.5).",
    )
    p.add_argument("--model", help="SRNW1 checkpoint (with --hr-dir)")
    p.add_argument("--hr-dir", help="HR PNG images to measure residuals on")
    p.add_argument("--residual-dir", help="offset-encoded residual PNGs (0.5 = zero)")
    p.add_argument("--out", required=True, help="output DFBK1 bank file")
    p.add_argument("--k", type=int, default=_DEFAULTS.k, help="filter side length")
    p.add_argument("--filters", type=int, default=_DEFAULTS.filters, help="filters per channel")
    p.add_argument("--epsilon", type=float, default=_DEFAULTS.epsilon,
                   help="orthogonality slack stored with the bank")
    p.add_argument("--seed", type=int, default=_DEFAULTS.seed, help="random seed")
    p.add_argument("--scale", type=int, default=_DEFAULTS.scale, help="upscaling factor")
    p.add_argument("--design-max-side", type=int, default=_DEFAULTS.design_max_side,
                   help="HR images are centre-cropped to this side")
    p.set_defaults(func=cmd_design_filters)

    p = sub.add_parser("evaluate", help="per-image PSNR, SSIM and HF-PSNR as CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", help="SRNW1 checkpoint")
    p.add_argument("--hr-dir", required=True, help="HR PNG images")
    p.add_argument("--scale", type=int, default=_DEFAULTS.scale, help="upscaling factor")
    p.add_argument("--identity", action="store_true",
                   help="score the HR images against themselves (no model)")
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-filters", help="render a bank as one PNG grid per channel",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--bank", required=True, help="DFBK1 bank file")
    p.add_argument("--out-dir", required=True, help="directory for filters_c<channel>.png")
    p.set_defaults(func=cmd_export_filters)

    p = sub.add_parser("make-dataset", help="write a small reproducible PNG dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--n", type=int, default=32, help="number of images")
    p.add_argument("--size", type=int, default=96, help="image side")
    p.add_argument("--source", choices=("natural", "synthetic"), default="natural",
                   help="photo crops (needs scikit-image) or procedural textures")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_make_dataset)
    return parser


class _DataError(Exception):
    pass


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def resolve_train_config(args):
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}", "config") from exc
        values.update(parse_config_text(text))
    for key in TrainingConfig.field_names():
        given = getattr(args, key, None)
        if given is not None:
            values[key] = given
    values = {k: (v if isinstance(v, str) else str(v)) for k, v in values.items()}
    if "widths" in values:
        values["widths"] = values["widths"].strip("()").replace(" ", "")
    return TrainingConfig.from_mapping(values).validate()


def cmd_train(args):
    config = resolve_train_config(args)
    if not config.hr_dir:
        raise ConfigError("--hr-dir is required", "hr_dir")
    if not config.out_dir:
        raise ConfigError("--out-dir is required", "out_dir")
    items = load_hr_dir(config.hr_dir, config.scale)
    if len(items) < 2:
        raise _DataError(f"{config.hr_dir} holds {len(items)} image(s); need at least 2")
    train, val = split_dataset(items, config.val_fraction)
    sys.stdout.write(config.to_manifest())
    history, _, banks = run_training(config, train, val, config.out_dir)
    print(f"trained {len(history)} epoch(s), {len(banks)} design round(s) -> {config.out_dir}",
          file=sys.stderr)
    return EXIT_OK


def _load_model(path):
    try:
        return srnet.load_params(path)
    except OSError as exc:
        raise _DataError(f"cannot read model {path}: {exc}") from exc


def decode_residual(img):
    """Undo the +0.5 offset. 8-bit PNGs cannot store 0.5 itself, so codes
    127 and 128 (within half a step of it) decode to exactly zero."""
    r = np.asarray(img, dtype=np.float64) - RESIDUAL_OFFSET
    r[np.abs(r) <= 0.5 / 255 + 1e-6] = 0.0
    return r


def cmd_design_filters(args):
    if bool(args.residual_dir) == bool(args.model or args.hr_dir):
        raise ConfigError("give either --residual-dir or both --model and --hr-dir", "residual_dir")
    if not args.residual_dir and not (args.model and args.hr_dir):
        raise ConfigError("--model and --hr-dir must be given together", "model")
    config = TrainingConfig(
        k=args.k, filters=args.filters, epsilon=args.epsilon, seed=args.seed,
        scale=args.scale, design_max_side=args.design_max_side,
    ).validate()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateGramWarning)
        if args.residual_dir:
            residuals = [decode_residual(img) for _, img in load_hr_dir(args.residual_dir)]
            bank = design_filter_bank(accumulate_gram(residuals, config.k), config.filters,
                                      config.epsilon, config.seed)
        else:
            params = _load_model(args.model)
            images = [img for _, img in load_hr_dir(args.hr_dir, config.scale)]
            bank = design_round(params, images, config, seed=config.seed)
    degenerate = [w for w in caught if issubclass(w.category, DegenerateGramWarning)]
    if degenerate:
        print(f"warning: {len(degenerate)} filter(s) from a degenerate (near-zero) residual "
              "Gram matrix; using the seeded fallback", file=sys.stderr)
    save_bank(bank, args.out)
    for c in range(bank.channels):
        for m in range(bank.n_filters):
            print(f"{c} {m} {float(bank.objectives[c, m])!r}")
    return EXIT_OK


def _fmt(v):
    return repr(float(v))


def evaluate_rows(items, params, scale, identity=False):
    """``(name, psnr, ssim, hf_psnr)`` per image, then a ``MEAN`` row over finite values."""
    rows = []
    for name, hr in items:
        hr = crop_to_multiple(hr, scale)
        pred = hr if identity else srnet.forward(params, degrade(hr, scale))
        rows.append((name, psnr(hr, pred), ssim(hr, pred), hf_psnr(hr, pred)))
    means = []
    for col in range(1, 4):
        finite = [r[col] for r in rows if math.isfinite(r[col])]
        means.append(float(np.mean(finite)) if finite else math.inf)
    rows.append(("MEAN", *means))
    return rows


def cmd_evaluate(args):
    if not args.identity and not args.model:
        raise ConfigError("--model is required unless --identity is given", "model")
    params = None if args.identity else _load_model(args.model)
    scale = TrainingConfig(scale=args.scale).validate().scale
    rows = evaluate_rows(load_hr_dir(args.hr_dir), params, scale, args.identity)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("name", "psnr", "ssim", "hf_psnr"))
        for name, *vals in rows:
            writer.writerow([name, *map(_fmt, vals)])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def normalize_filter(f):
    """Min-max scale to [0, 1]; a constant filter maps to 0.5."""
    lo, hi = float(f.min()), float(f.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
        return np.full(f.shape, 0.5)
    return (f - lo) / (hi - lo)


def filter_grid(filters, zoom=TILE_ZOOM):
    """Tile ``(M, k, k)`` filters row-major into one grey image with 1-pixel black lines."""
    M, k, _ = filters.shape
    cols = math.ceil(math.sqrt(M))
    rows = math.ceil(M / cols)
    tile = k * zoom
    grid = np.zeros((rows * (tile + 1) + 1, cols * (tile + 1) + 1))
    for m in range(M):
        r, c = divmod(m, cols)
        top, left = 1 + r * (tile + 1), 1 + c * (tile + 1)
        big = np.kron(normalize_filter(filters[m]), np.ones((zoom, zoom)))
        grid[top : top + tile, left : left + tile] = big
    return grid


def cmd_export_filters(args):
    bank = load_bank(args.bank)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c in range(bank.channels):
        path = out / f"filters_c{c}.png"
        write_png(path, filter_grid(bank.filters[c]))
        print(path)
    return EXIT_OK


def cmd_make_dataset(args):
    if args.n < 1 or args.size < 1:
        raise ConfigError("--n and --size must be positive", "n")
    make = natural_crops if args.source == "natural" else synthetic_textures
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(make(args.n, args.size, seed=args.seed)):
        write_png(out / f"img{i:03d}.png", img)
    print(f"wrote {args.n} image(s) to {out}", file=sys.stderr)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        msg = str(exc)
        if exc.key:
            msg = f"--{exc.key.replace('_', '-')}: {msg.removeprefix(exc.key + ': ')}"
        _err(msg)
        return EXIT_CONFIG
    except (DFBSRError, _DataError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
