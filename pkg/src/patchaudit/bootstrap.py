"""Variable-size bootstrap over record subsets.

Each iteration draws its sample size uniformly from [size_lo, size_hi],
resamples the subset with replacement, and evaluates the requested
metrics.  Iteration i uses the Philox sub-stream (seed, i), so results are
independent of execution order and identical under any parallelism.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .metrics import METRIC_NAMES, label_arrays, score_array
from .records import PredictionRecord
from .rng import TAG_BOOTSTRAP, substream


class BootstrapError(ValueError):
    """Invalid bootstrap specification or an unusable run."""


@dataclass(frozen=True)
class BootstrapSpec:
    """Protocol for one bootstrap: iteration count, inclusive size range, seed."""

    size_lo: int
    size_hi: int
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise BootstrapError("iterations must be >= 1")
        if self.size_lo < 1 or self.size_hi < self.size_lo:
            raise BootstrapError(
                f"bad size range [{self.size_lo}, {self.size_hi}]"
            )

    def validate_for(self, n_records: int) -> None:
        if self.size_hi > n_records:
            raise BootstrapError(
                f"size_hi {self.size_hi} exceeds subset size {n_records}"
            )


@dataclass(frozen=True)
class BootstrapDistribution:
    """Per-iteration metric values (nan = undefined) plus their summary."""

    metric: str
    values: np.ndarray
    sizes: np.ndarray
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    ci_method: str
    n_defined: int

    @property
    def iterations(self) -> int:
        return int(self.values.shape[0])

    @property
    def ci_halfwidth(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0


def summarize(values, method: str = "normal") -> tuple[float, float, tuple[float, float]]:
    """(mean, sample sd, 95% CI) over the defined values.

    ``normal`` gives mean +/- 1.96*sd (not clamped to [0,1]); ``percentile``
    gives the 2.5/97.5 linear-interpolation quantiles.
    """
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[~np.isnan(arr)]
    if arr.size < 2:
        raise BootstrapError("summarize needs at least 2 defined values")
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1))
    if method == "normal":
        ci = (mean - 1.96 * sd, mean + 1.96 * sd)
    elif method == "percentile":
        lo, hi = np.quantile(arr, [0.025, 0.975])
        ci = (float(lo), float(hi))
    else:
        raise BootstrapError(f"unknown CI method {method!r}")
    return mean, sd, ci


def _draw(spec: BootstrapSpec, iteration: int, n_records: int) -> np.ndarray:
    gen = substream(spec.seed, TAG_BOOTSTRAP, iteration)
    size = int(gen.integers(spec.size_lo, spec.size_hi + 1))
    return gen.integers(0, n_records, size=size, dtype=np.int64)


def _evaluate(metrics, truth, pred, score, idx) -> dict[str, float]:
    out: dict[str, float] = {}
    label_metrics = [m for m in metrics if m != "auc"]
    if label_metrics:
        tp, fp, tn, fn = kernels.confusion_counts(truth, pred, idx)
        pos, neg = tp + fn, tn + fp
        n = pos + neg
        for m in label_metrics:
            if m == "accuracy":
                out[m] = (tp + tn) / n if n else math.nan
            elif m == "recall":
                out[m] = tp / pos if pos else math.nan
            elif m == "fnr":
                out[m] = fn / pos if pos else math.nan
            elif m == "fpr":
                out[m] = fp / neg if neg else math.nan
            elif m == "precision":
                out[m] = tp / (tp + fp) if (tp + fp) else math.nan
            elif m == "f1":
                if pos and (tp + fp):
                    p, r = tp / (tp + fp), tp / pos
                    out[m] = 2 * p * r / (p + r) if (p + r) > 0 else math.nan
                else:
                    out[m] = math.nan
    if "auc" in metrics:
        out["auc"] = kernels.rank_auc(truth, score, idx)
    return out


def run_bootstrap_multi(
    records: Sequence[PredictionRecord],
    spec: BootstrapSpec,
    metrics: Sequence[str],
    threshold: float = 0.5,
    ci_method: str = "normal",
    workers: int = 1,
) -> dict[str, BootstrapDistribution]:
    """Bootstrap several metrics on the same resamples.

    Raises when a metric comes out undefined in more than half of the
    iterations; undefined iterations are kept (as nan), never dropped
    silently.
    """
    for m in metrics:
        if m not in METRIC_NAMES:
            raise BootstrapError(f"unknown metric {m!r}")
    spec.validate_for(len(records))
    truth, pred = label_arrays(records, threshold)
    score = score_array(records)
    n = len(records)

    def one(i: int) -> tuple[int, dict[str, float]]:
        idx = _draw(spec, i, n)
        return idx.shape[0], _evaluate(metrics, truth, pred, score, idx)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(spec.iterations)))
    else:
        results = [one(i) for i in range(spec.iterations)]

    sizes = np.array([r[0] for r in results], dtype=np.int64)
    out: dict[str, BootstrapDistribution] = {}
    for m in metrics:
        values = np.array([r[1][m] for r in results], dtype=np.float64)
        n_defined = int(np.count_nonzero(~np.isnan(values)))
        if n_defined * 2 < spec.iterations:
            raise BootstrapError(
                f"metric {m!r} undefined in {spec.iterations - n_defined} of "
                f"{spec.iterations} iterations"
            )
        mean, sd, (lo, hi) = summarize(values, ci_method)
        out[m] = BootstrapDistribution(
            metric=m,
            values=values,
            sizes=sizes,
            mean=mean,
            sd=sd,
            ci_low=lo,
            ci_high=hi,
            ci_method=ci_method,
            n_defined=n_defined,
        )
    return out


def run_bootstrap(
    records: Sequence[PredictionRecord],
    spec: BootstrapSpec,
    metric: str,
    threshold: float = 0.5,
    ci_method: str = "normal",
    workers: int = 1,
) -> BootstrapDistribution:
    """Bootstrap a single named metric over the records."""
    return run_bootstrap_multi(
        records, spec, [metric], threshold=threshold, ci_method=ci_method, workers=workers
    )[metric]
