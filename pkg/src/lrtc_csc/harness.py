"""Experiment harness: seeded masks, single runs, sweeps and CSV reports.

Masks
-----
``generate_mask`` draws observed positions with NumPy's PCG64 bit
generator seeded through ``SeedSequence(seed)``: the linear indices
(column-major, mode-1 fastest) of the first ``round((1 - ratio) * N)``
entries of ``Generator(PCG64(seed)).permutation(N)`` are observed.
``round`` is Python's round-half-to-even.  In per-pixel mode ``N`` is
``n1 * n2`` and each drawn pixel is observed in every band.

CSV schemas
-----------
metrics (one row per run)::

    method,mr,seed,psnr,ssim,re,iters,seconds

sweep rows prepend ``input`` and append ``status``; with per-band output
they continue with ``psnr_b1..psnr_bN,ssim_b1..ssim_bN``.

trace (one row per outer iteration), preceded by a ``# config: {...}``
provenance line::

    iter,re,psnr,residual,seconds

Infinite PSNR is written as ``inf``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as tio
from .csc import CscParams, load_dictionary
from .lrtc import CompletionResult, LrtcConfig, Observation, complete
from .metrics import MetricReport, evaluate
from .prox import SnnWeights

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["method", "mr", "seed", "psnr", "ssim", "re", "iters", "seconds"]
SWEEP_COLUMNS = ["input"] + METRIC_COLUMNS + ["status"]
TRACE_COLUMNS = ["iter", "re", "psnr", "residual", "seconds"]
ENV_PREFIX = "LRTC_CSC_"


class ConsistencyError(RuntimeError):
    """Recovered tensor disagrees with the observations on the mask."""


# ---------------------------------------------------------------------------
# masks

def generate_mask(dims, missing_ratio: float, seed: int, per_pixel: bool = False) -> np.ndarray:
    """Boolean mask with exactly ``round((1 - missing_ratio) * N)`` observed cells."""
    if not 0.0 <= missing_ratio < 1.0:
        raise ValueError(f"missing ratio must be in [0, 1), got {missing_ratio}")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    n = dims[0] * dims[1] if per_pixel else math.prod(dims)
    n_obs = round((1.0 - missing_ratio) * n)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    flat = np.zeros(n, dtype=bool)
    flat[rng.permutation(n)[:n_obs]] = True
    if per_pixel:
        plane = flat.reshape(dims[:2], order="F")
        return np.repeat(plane[:, :, None], dims[2], axis=2)
    return flat.reshape(dims, order="F")


# ---------------------------------------------------------------------------
# configuration

_FLOAT_KEYS = {"beta2", "lambda_lp", "tol", "csc_scale", "peak", "rho",
               "tau_g", "inner_tol", "Lambda"}
_INT_KEYS = {"max_iters", "inner_iters"}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items()
            if k.startswith(ENV_PREFIX)}


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    if key in ("beta1", "alpha"):
        parts = [float(v) for v in value.replace(",", " ").split()]
        return parts[0] if key == "beta1" and len(parts) == 1 else tuple(parts)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _INT_KEYS:
        return int(value)
    if key == "warm_start":
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def build_config(method: str, overrides: dict | None = None, dictionary=None) -> tuple[LrtcConfig, float]:
    """Build an :class:`LrtcConfig` from defaults and string/number overrides.

    Returns the config and the metric peak value.
    """
    o = {("Lambda" if k.lower() == "lambda" else k): _coerce(k, v)
         for k, v in (overrides or {}).items()}
    known = {"beta1", "beta2", "alpha", "lambda_lp", "max_iters", "tol", "snn_modes",
             "csc_scale", "warm_start", "peak", "Lambda", "rho", "tau_g",
             "inner_iters", "inner_tol"}
    unknown = set(o) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    csc_kw = {"Lambda": o.get("Lambda", 10.0), "tau_g": o.get("tau_g", 0.06),
              "inner_iters": o.get("inner_iters", 50), "tol": o.get("inner_tol", 1e-4)}
    if "rho" in o:
        csc_kw["rho"] = o["rho"]
    kw = dict(
        method=method,
        csc=CscParams(**csc_kw),
        dictionary=dictionary if method in ("csc1", "csc2") else None,
    )
    if "alpha" in o:
        kw["alpha"] = SnnWeights(tuple(o["alpha"]))
    for src, dst in (("beta1", "beta1"), ("beta2", "beta2"), ("lambda_lp", "lambda_lp"),
                     ("max_iters", "max_outer_iters"), ("tol", "outer_tol"),
                     ("snn_modes", "snn_modes"), ("csc_scale", "csc_scale"),
                     ("warm_start", "warm_start")):
        if src in o:
            kw[dst] = o[src]
    return LrtcConfig(**kw), float(o.get("peak", 1.0))


def describe_config(cfg: LrtcConfig) -> dict:
    d = {
        "method": cfg.method, "alpha": list(cfg.alpha.alpha),
        "beta1": cfg.beta1 if np.isscalar(cfg.beta1) else list(cfg.beta1),
        "beta2": cfg.beta2, "lambda_lp": cfg.lambda_lp,
        "max_outer_iters": cfg.max_outer_iters, "outer_tol": cfg.outer_tol,
        "snn_modes": cfg.snn_modes, "csc_scale": cfg.csc_scale,
        "warm_start": cfg.warm_start, "csc": asdict(cfg.csc),
    }
    if cfg.dictionary is not None:
        d["dictionary"] = {"K": cfg.dictionary.K, "r": cfg.dictionary.r}
    return d


# ---------------------------------------------------------------------------
# experiments

@dataclass
class ExperimentSpec:
    input: str
    method: str = "halrtc"
    missing_ratio: float = 0.8
    seed: int = 0
    dictionary: str | None = None
    overrides: dict = field(default_factory=dict)
    out: str | None = None
    metrics: str | None = None
    trace: str | None = None
    per_pixel: bool = False
    mask: str | None = None

    def validate(self) -> None:
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ValueError(f"missing ratio must be in [0, 1), got {self.missing_ratio}")
        for p in (self.input, self.dictionary, self.mask):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(p)


@dataclass
class ExperimentOutcome:
    report: MetricReport
    result: CompletionResult
    config: LrtcConfig
    seconds: float

    def row(self, spec: ExperimentSpec) -> dict:
        return {
            "method": self.config.method, "mr": spec.missing_ratio, "seed": spec.seed,
            "psnr": self.report.psnr_mean, "ssim": self.report.ssim_mean,
            "re": self.report.re, "iters": self.result.iterations,
            "seconds": round(self.seconds, 3),
        }


def fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _write_csv(path, columns, rows, preamble: str | None = None) -> None:
    buf = _io.StringIO()
    if preamble:
        buf.write(preamble + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def check_consistency(x: np.ndarray, obs: Observation) -> None:
    if not np.array_equal(x[obs.mask], obs.data[obs.mask]):
        raise ConsistencyError("recovered tensor differs from the observations on the mask")


def run_experiment(spec: ExperimentSpec) -> ExperimentOutcome:
    """Mask the input, complete it, and write the requested artifacts."""
    spec.validate()
    truth = tio.load_input(spec.input)
    if spec.mask:
        mask = tio.read_tns(spec.mask) != 0
        if mask.shape != truth.shape:
            raise ValueError(f"mask shape {mask.shape} != input shape {truth.shape}")
    else:
        mask = generate_mask(truth.shape, spec.missing_ratio, spec.seed, spec.per_pixel)
    dictionary = load_dictionary(spec.dictionary) if spec.dictionary else None
    cfg, peak = build_config(spec.method, spec.overrides, dictionary)
    obs = Observation(truth, mask)

    t0 = time.perf_counter()
    result = complete(obs, cfg, ground_truth=truth, peak=peak)
    seconds = time.perf_counter() - t0
    check_consistency(result.recovered, obs)
    report = evaluate(result.recovered, truth, peak, with_ssim=min(truth.shape[:2]) >= 11)
    outcome = ExperimentOutcome(report, result, cfg, seconds)

    if spec.out:
        tio.save_output(result.recovered, spec.out)
    if spec.metrics:
        _write_csv(spec.metrics, METRIC_COLUMNS, [outcome.row(spec)])
    if spec.trace:
        rows = [{"iter": r.iter, "re": r.re, "psnr": r.psnr, "residual": r.residual,
                 "seconds": round(r.seconds, 3)} for r in result.trace]
        pre = "# config: " + json.dumps(describe_config(cfg), sort_keys=True)
        _write_csv(spec.trace, TRACE_COLUMNS, rows, preamble=pre)
    return outcome


def _sweep_one(spec: ExperimentSpec, per_band: bool) -> dict:
    row = {"input": spec.input, "method": spec.method, "mr": spec.missing_ratio,
           "seed": spec.seed}
    try:
        outcome = run_experiment(spec)
    except Exception as exc:  # recorded per row; the sweep continues
        logger.warning("sweep entry %s/%s failed: %s", spec.input, spec.method, exc)
        row["status"] = f"error: {type(exc).__name__}: {exc}"
        return row
    row.update(outcome.row(spec))
    row["status"] = "ok"
    if per_band:
        for b, p, s in outcome.report.per_band:
            row[f"psnr_b{b + 1}"] = p
            row[f"ssim_b{b + 1}"] = s
    return row


def sweep(specs: list, out: str | None = None, per_band: bool = False,
          workers: int = 1) -> str:
    """Run every spec, one CSV row each, and return (and optionally write) the CSV."""
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_one, specs, [per_band] * len(specs)))
    else:
        rows = [_sweep_one(s, per_band) for s in specs]
    columns = list(SWEEP_COLUMNS)
    if per_band:
        nb = max((sum(1 for k in r if k.startswith("psnr_b")) for r in rows), default=0)
        columns += [f"psnr_b{i}" for i in range(1, nb + 1)]
        columns += [f"ssim_b{i}" for i in range(1, nb + 1)]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    text = buf.getvalue()
    if out:
        Path(out).write_text(text, encoding="utf-8")
    return text
