"""Command line entry point ``lrtc-csc``.

Configuration precedence for ``complete``: command-line flags, then
``LRTC_CSC_*`` environment variables (e.g. ``LRTC_CSC_BETA1=0.2``), then
the ``--config`` key-value file, then built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .csc import CscParams, DictionaryError, save_dictionary, train_dictionary
from .harness import (ConsistencyError, ExperimentSpec, env_overrides, generate_mask,
                      parse_config_text, run_experiment, _write_csv, METRIC_COLUMNS)
from .lrtc import ConfigError, DivergenceError
from .metrics import evaluate

# exit code and category per failure class, most specific first
_ERRORS = [
    (ConsistencyError, 6, "consistency"),
    (DivergenceError, 5, "divergence"),
    (ConfigError, 2, "config"),
    (DictionaryError, 3, "format"),
    (tio.FormatError, 3, "format"),
    (FileNotFoundError, 4, "io"),
    (OSError, 4, "io"),
    (ValueError, 2, "input"),
]


def _parse_dims(text: str):
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected N1xN2xN3") from None
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected N1xN2xN3")
    return dims


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrtc-csc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("complete", help="mask an input tensor and recover it")
    c.add_argument("--input", required=True)
    c.add_argument("--method", required=True, choices=["csc1", "csc2", "halrtc", "tnn"])
    c.add_argument("--missing-ratio", type=float, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dict")
    c.add_argument("--config")
    c.add_argument("--mask", help="TNS1 mask file (overrides --missing-ratio/--seed)")
    c.add_argument("--per-pixel", action="store_true",
                   help="erase (i, j) positions across all bands jointly")
    c.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    c.add_argument("--out", required=True)
    c.add_argument("--metrics", required=True)
    c.add_argument("--trace", required=True)

    t = sub.add_parser("train-dict", help="learn a convolutional dictionary")
    t.add_argument("--inputs", required=True, help="directory of .png / .tns images")
    t.add_argument("--filters", type=int, required=True)
    t.add_argument("--size", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--iters", type=int, default=20)
    t.add_argument("--lambda", dest="Lambda", type=float, default=10.0)
    t.add_argument("--tau", type=float, default=0.06)
    t.add_argument("--inner-iters", type=int, default=50)
    t.add_argument("--lambda-lp", type=float, default=5.0)
    t.add_argument("--scale", type=float, default=255.0)
    t.add_argument("--crop", type=int, default=0,
                   help="train on seeded random crops of this size (0: whole images)")
    t.add_argument("--crops-per-image", type=int, default=1)

    m = sub.add_parser("mask", help="write a seeded observation mask")
    m.add_argument("--dims", type=_parse_dims, required=True)
    m.add_argument("--missing-ratio", type=float, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--per-pixel", action="store_true")
    m.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score a recovered tensor against the truth")
    e.add_argument("--recovered", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--metrics", required=True)
    e.add_argument("--peak", type=float, default=1.0)
    return p


def _cmd_complete(a) -> None:
    overrides = {}
    if a.config:
        overrides.update(parse_config_text(Path(a.config).read_text(encoding="utf-8")))
    overrides.update(env_overrides())
    overrides.update(_parse_set(a.set))
    spec = ExperimentSpec(
        input=a.input, method=a.method, missing_ratio=a.missing_ratio, seed=a.seed,
        dictionary=a.dict, overrides=overrides, out=a.out, metrics=a.metrics,
        trace=a.trace, per_pixel=a.per_pixel, mask=a.mask,
    )
    outcome = run_experiment(spec)
    r = outcome.report
    print(f"{outcome.config.method}: psnr={r.psnr_mean:.4f} ssim={r.ssim_mean:.4f} "
          f"re={r.re:.4g} iters={outcome.result.iterations}")


def _load_training(directory, crop: int, per_image: int, seed: int) -> list:
    paths = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() in (".png", ".tns"))
    if not paths:
        raise ValueError(f"no .png or .tns files in {directory}")
    rng = np.random.default_rng(seed)
    images = []
    for path in paths:
        x = tio.load_input(path)
        if not crop:
            images.append(x)
            continue
        if crop > min(x.shape[:2]):
            raise ValueError(f"{path}: crop {crop} exceeds image size {x.shape[:2]}")
        for _ in range(per_image):
            i = rng.integers(0, x.shape[0] - crop + 1)
            j = rng.integers(0, x.shape[1] - crop + 1)
            images.append(x[i:i + crop, j:j + crop, :])
    return images


def _cmd_train(a) -> None:
    images = _load_training(a.inputs, a.crop, a.crops_per_image, a.seed)
    p = CscParams(Lambda=a.Lambda, tau_g=a.tau, inner_iters=a.inner_iters)
    hist = []
    d = train_dictionary(images, a.filters, a.size, p, outer_iters=a.iters, seed=a.seed,
                         lambda_lp=a.lambda_lp, scale=a.scale, history=hist)
    save_dictionary(d, a.out)
    print(f"trained {d.K} filters of {d.r}x{d.r}; objective {hist[0]:.6g} -> {hist[-1]:.6g}")


def _cmd_mask(a) -> None:
    mask = generate_mask(a.dims, a.missing_ratio, a.seed, a.per_pixel)
    tio.write_tns(a.out, mask.astype(np.float64))
    print(f"{int(mask.sum())} of {mask.size} entries observed")


def _cmd_eval(a) -> None:
    x = tio.load_input(a.recovered)
    t = tio.load_input(a.truth)
    r = evaluate(x, t, a.peak, with_ssim=min(t.shape[:2]) >= 11)
    row = {"method": "", "mr": "", "seed": "", "psnr": r.psnr_mean, "ssim": r.ssim_mean,
           "re": r.re, "iters": "", "seconds": ""}
    _write_csv(a.metrics, METRIC_COLUMNS, [row])
    print(f"psnr={r.psnr_mean:.4f} ssim={r.ssim_mean:.4f} re={r.re:.4g}")


_COMMANDS = {"complete": _cmd_complete, "train-dict": _cmd_train,
             "mask": _cmd_mask, "eval": _cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args)
    except Exception as exc:
        for cls, code, category in _ERRORS:
            if isinstance(exc, cls):
                break
        else:
            code, category = 1, "internal"
        print(f"error[{category}]: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
