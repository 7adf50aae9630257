"""Welch's unequal-variance t test and Bonferroni adjustment.

Two-sided p-values come from the t distribution evaluated through the
regularized incomplete beta function (continued-fraction form), so the
package needs no external statistics dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

ALPHA = 0.05

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_FPMIN = 1e-300


class StatError(ValueError):
    """Invalid input to a statistical test."""


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise StatError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise StatError("betainc requires a > 0 and b > 0")
    if x < 0 or x > 1:
        raise StatError("betainc requires x in [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise StatError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def normal_two_sided_p(z: float) -> float:
    """P(|Z| >= |z|) under the standard normal."""
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass(frozen=True)
class TestResult:
    """Two-sample test outcome; ``degenerate`` marks a zero-variance pair."""

    __test__ = False  # keep pytest from collecting this as a test class

    t: float
    df: float
    p: float
    p_adjusted: float | None = None
    alpha: float = ALPHA
    degenerate: bool = False

    @property
    def significant(self) -> bool:
        p = self.p if self.p_adjusted is None else self.p_adjusted
        return p < self.alpha

    def with_adjusted(self, p_adjusted: float) -> "TestResult":
        return replace(self, p_adjusted=p_adjusted)


def welch_t(a: Sequence[float], b: Sequence[float], alpha: float = ALPHA) -> TestResult:
    """Welch's unequal-variance two-sample t test, two-sided.

    When both samples have zero variance the test degenerates: p = 1 for
    equal means, else p = 0 with the degenerate flag set.
    """
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    if xa.size < 2 or xb.size < 2:
        raise StatError("welch_t needs at least 2 values per sample")
    ma, mb = float(xa.mean()), float(xb.mean())
    va, vb = float(xa.var(ddof=1)), float(xb.var(ddof=1))
    na, nb = xa.size, xb.size
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            return TestResult(t=0.0, df=math.nan, p=1.0, alpha=alpha, degenerate=True)
        return TestResult(
            t=math.copysign(math.inf, ma - mb),
            df=math.nan,
            p=0.0,
            alpha=alpha,
            degenerate=True,
        )
    sa, sb = va / na, vb / nb
    se = math.sqrt(sa + sb)
    t = (ma - mb) / se
    df = (sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return TestResult(t=t, df=df, p=t_two_sided_p(t, df), alpha=alpha)


def bonferroni(pvalues: Sequence[float], m: int | None = None) -> list[float]:
    """Adjusted p-values min(1, p*m); m defaults to the family size."""
    ps = list(pvalues)
    if m is None:
        m = len(ps)
    if m < 1:
        raise StatError("comparison count m must be >= 1")
    if m < len(ps):
        raise StatError(f"m={m} is smaller than the {len(ps)} p-values tested")
    return [min(1.0, p * m) for p in ps]
