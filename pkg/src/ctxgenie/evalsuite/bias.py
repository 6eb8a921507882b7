"""Option-position bias test: chi-square goodness of fit between the letter
distribution a model predicts and the gold letter distribution.

The tail probability is computed in-package via the regularized upper
incomplete gamma function (series expansion below a+1, Lentz continued
fraction above), double precision throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ..errors import DataError

_EPS = 3e-16
_FPMIN = 1e-300
_MAX_ITER = 1000


def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by series, for x < a + 1."""
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _upper_continued_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by modified Lentz, x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_q(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a), the normalized upper tail."""
    if a <= 0.0:
        raise ValueError("a must be positive")
    if x < 0.0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_continued_fraction(a, x)


def chi_square_tail(statistic: float, df: int) -> float:
    """P(X >= statistic) for X ~ chi-square with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if statistic < 0.0:
        raise ValueError("statistic must be non-negative")
    return regularized_gamma_q(df / 2.0, statistic / 2.0)


def format_p(p: float, floor: float = 1e-10) -> str:
    """Display form of a p-value: scientific notation, clamped below `floor`."""
    if p < floor:
        return f"<{floor:.0e}"
    return f"{p:.1e}"


@dataclass(frozen=True)
class BiasResult:
    statistic: float
    df: int
    p_value: float
    expected: tuple[float, ...]
    dropped: tuple[int, ...]

    @property
    def p_display(self) -> str:
        return format_p(self.p_value)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "p_display": self.p_display,
            "expected": list(self.expected),
            "dropped_categories": list(self.dropped),
        }


def chi_square_bias(predicted: Sequence[float], gold: Sequence[float]) -> BiasResult:
    """Goodness-of-fit of predicted letter counts against the gold distribution.

    Expected counts scale the gold proportions to the full predicted total:
    expected_i = gold_i / sum(gold) * sum(predicted). Categories whose expected
    count is zero are dropped from the sum (their indices are reported), and
    df = kept - 1. The null hypothesis is that the model's predictive letter
    distribution equals the empirically observed gold one.
    """
    if len(predicted) != len(gold):
        raise DataError("predicted and gold category counts must align")
    if len(predicted) == 0:
        raise DataError("no categories")
    pred = [float(v) for v in predicted]
    gld = [float(v) for v in gold]
    if any(v < 0 for v in pred) or any(v < 0 for v in gld):
        raise DataError("counts must be non-negative")
    gold_total = sum(gld)
    pred_total = sum(pred)
    if gold_total <= 0 or pred_total <= 0:
        raise DataError("category totals must be positive")

    expected = tuple(g / gold_total * pred_total for g in gld)
    kept = [i for i, e in enumerate(expected) if e > 0.0]
    dropped = tuple(i for i, e in enumerate(expected) if e == 0.0)
    if len(kept) < 2:
        raise DataError("need at least two categories with nonzero expected count")

    statistic = sum((pred[i] - expected[i]) ** 2 / expected[i] for i in kept)
    df = len(kept) - 1
    return BiasResult(
        statistic=statistic,
        df=df,
        p_value=chi_square_tail(statistic, df),
        expected=expected,
        dropped=dropped,
    )
