"""Daily series, smoothing, Granger-causality tests, and Welch t-tests.

Series are date-indexed with missing values (None) standing for
zero-denominator days such as collection outages; every operation here
tolerates them. The Granger test compares nested OLS models fit by normal
equations with partial pivoting, and its p-values come from the F
distribution realized through a native regularized incomplete beta
(continued fraction), accurate to well below 1e-10 absolute.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import PipelineError


class SingularMatrixError(PipelineError):
    """The regression design is rank deficient."""


class InsufficientDataError(PipelineError):
    """Not enough complete aligned observations for the requested test."""


@dataclass
class DailySeries:
    """One value per consecutive UTC day from `start_date`; None = missing."""

    start_date: date
    values: list[float | None]

    def __post_init__(self):
        if not self.values:
            raise ValueError("series must cover at least one day")
        cleaned: list[float | None] = []
        for v in self.values:
            if v is None:
                cleaned.append(None)
                continue
            v = float(v)
            if math.isnan(v):
                raise ValueError("NaN is not allowed; encode missing days as None")
            cleaned.append(v)
        self.values = cleaned

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=len(self.values) - 1)

    def date_at(self, i: int) -> date:
        return self.start_date + timedelta(days=i)

    def items(self) -> Iterator[tuple[date, float | None]]:
        for i, v in enumerate(self.values):
            yield self.date_at(i), v


@dataclass(frozen=True)
class PredictionRow:
    """A dated model prediction, the unit all series and group stats consume."""

    id: str
    day: date
    detected: frozenset[str]
    negatives: frozenset[str]
    group_tags: frozenset[str] = frozenset()
    bot_flag: bool | None = None

    def __post_init__(self):
        if not self.negatives <= self.detected:
            raise ValueError("negative aspects must be a subset of detected aspects")


SERIES_MODES = ("count", "aspect-proportion", "negative-proportion", "nonnegative-proportion")


def daily_series(
    rows: Sequence[PredictionRow],
    mode: str,
    aspect: str | None = None,
    start: date | None = None,
    end: date | None = None,
) -> DailySeries:
    """Build one value per day: tweet counts or within-day proportions.

    Proportions on a zero-denominator day are missing (None), never 0/0;
    counts on an empty day are 0. The date range defaults to the span of the
    input rows and may be widened or narrowed explicitly.
    """
    if mode not in SERIES_MODES:
        raise ValueError(f"unknown series mode {mode!r}")
    if mode != "count" and aspect is None:
        raise ValueError(f"mode {mode!r} requires an aspect")
    if start is None or end is None:
        if not rows:
            raise PipelineError("empty date range: no rows and no explicit start/end")
        days = [r.day for r in rows]
        start = start or min(days)
        end = end or max(days)
    if start > end:
        raise PipelineError("empty date range: start is after end")

    n_days = (end - start).days + 1
    buckets: list[list[PredictionRow]] = [[] for _ in range(n_days)]
    for r in rows:
        offset = (r.day - start).days
        if 0 <= offset < n_days:
            buckets[offset].append(r)

    values: list[float | None] = []
    for bucket in buckets:
        if mode == "count":
            values.append(float(len(bucket)))
            continue
        if mode == "aspect-proportion":
            denom = len(bucket)
            num = sum(1 for r in bucket if aspect in r.detected)
        else:
            mentions = [r for r in bucket if aspect in r.detected]
            denom = len(mentions)
            neg = sum(1 for r in mentions if aspect in r.negatives)
            num = neg if mode == "negative-proportion" else denom - neg
        values.append(num / denom if denom else None)
    return DailySeries(start, values)


def smooth_ma(series: DailySeries, window: int = 7) -> DailySeries:
    """Centered moving average over present values, truncated at boundaries.

    A day is missing in the output iff no present value falls inside its
    window.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    half = (window - 1) // 2
    n = len(series.values)
    out: list[float | None] = []
    for i in range(n):
        vals = [
            v
            for v in series.values[max(0, i - half) : min(n, i + half + 1)]
            if v is not None
        ]
        out.append(math.fsum(vals) / len(vals) if vals else None)
    return DailySeries(series.start_date, out)


def _solve_ppivot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting for a small dense system."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    k = a.shape[0]
    scale = np.abs(a).max()
    tol = max(scale, 1.0) * 1e-12
    for col in range(k):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot_row, col]) <= tol:
            raise SingularMatrixError("design matrix is rank deficient")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= np.outer(factors, a[col, col:])
        b[col + 1 :] -= factors * b[col]
    x = np.zeros(k)
    for row in range(k - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Least squares via the normal equations; returns (coefficients, RSS)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError("y length must match the rows of X")
    if n <= k:
        raise InsufficientDataError(f"need more observations ({n}) than regressors ({k})")
    beta = _solve_ppivot(X.T @ X, X.T @ y)
    resid = y - X @ beta
    return beta, float(resid @ resid)


# --- distribution tails via the regularized incomplete beta function ---

_BETACF_TINY = 1e-300
_BETACF_EPS = 3e-16
_BETACF_MAX_ITER = 500


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz iteration)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
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
    return 1.0 - math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + b * math.log1p(-x)
        + a * math.log(x)
    ) * _betacf(b, a, 1.0 - x) / b


def f_pvalue(f_stat: float, d1: float, d2: float) -> float:
    """Upper-tail p of the F distribution, p = 1 - CDF_F(f; d1, d2)."""
    if f_stat < 0:
        raise ValueError("F statistic must be nonnegative")
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if f_stat == 0.0:
        return 1.0
    return betainc_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f_stat))


def t_pvalue_two_sided(t_stat: float, df: float) -> float:
    """Two-sided Student-t tail probability P(|T| >= |t|)."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t_stat == 0.0:
        return 1.0
    if math.isinf(t_stat):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t_stat * t_stat))


@dataclass(frozen=True)
class GrangerResult:
    f_stat: float
    p_value: float
    lag: int
    n_used: int
    direction: tuple[str, str]  # (cause, effect)


def granger_test(
    x: DailySeries,
    y: DailySeries,
    lag: int = 1,
    names: tuple[str, str] = ("x", "y"),
) -> GrangerResult:
    """Does x Granger-cause y? F-test of nested OLS models at the given lag.

    Unrestricted model: y_t on an intercept, lags of y, and lags of x; the
    restricted model drops the x lags. Rows whose lag window touches a
    missing day are dropped pairwise, and the raw (unsmoothed) series should
    be supplied, since pre-smoothing induces autocorrelation that inflates F.
    """
    if lag < 1:
        raise ValueError("lag must be a positive integer")
    if len(x) != len(y) or x.start_date != y.start_date:
        raise PipelineError("series are not aligned on the same dates")
    xs, ys = x.values, y.values
    rows_y: list[float] = []
    design_u: list[list[float]] = []
    design_r: list[list[float]] = []
    for t in range(lag, len(ys)):
        window = [ys[t]] + [ys[t - j] for j in range(1, lag + 1)] + [
            xs[t - j] for j in range(1, lag + 1)
        ]
        if any(v is None for v in window):
            continue
        rows_y.append(ys[t])
        y_lags = [ys[t - j] for j in range(1, lag + 1)]
        x_lags = [xs[t - j] for j in range(1, lag + 1)]
        design_u.append([1.0] + y_lags + x_lags)
        design_r.append([1.0] + y_lags)

    n_used = len(rows_y)
    k = 2 * lag + 1
    if n_used < lag + 4 or n_used <= k:
        raise InsufficientDataError(
            f"granger test needs at least {max(lag + 4, k + 1)} complete aligned days, got {n_used}"
        )
    yy = np.asarray(rows_y)
    _, rss_u = ols(np.asarray(design_u), yy)
    _, rss_r = ols(np.asarray(design_r), yy)
    if rss_u <= 0.0:
        raise PipelineError("degenerate series: unrestricted model fits exactly")
    f_stat = max(((rss_r - rss_u) / lag) / (rss_u / (n_used - k)), 0.0)
    return GrangerResult(
        f_stat=f_stat,
        p_value=f_pvalue(f_stat, lag, n_used - k),
        lag=lag,
        n_used=n_used,
        direction=names,
    )


def stars_for(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class TTestResult:
    mean_a: float
    mean_b: float
    difference: float
    t_stat: float
    df: float
    p_value: float
    stars: str
    degenerate: bool = False


def welch_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Welch two-sample t-test with Welch-Satterthwaite degrees of freedom.

    When both samples have zero variance the result is flagged degenerate:
    equal means give (t=0, p=1); different means report p -> 0 with an
    infinite statistic.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise PipelineError(f"welch t-test needs >= 2 samples per group, got {na} and {nb}")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    diff = mean_a - mean_b
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        if diff == 0.0:
            return TTestResult(mean_a, mean_b, 0.0, 0.0, float(na + nb - 2), 1.0, "", True)
        t_stat = math.copysign(math.inf, diff)
        return TTestResult(
            mean_a, mean_b, diff, t_stat, float(na + nb - 2), 0.0, "***", True
        )
    sa, sb = va / na, vb / nb
    s = sa + sb
    t_stat = diff / math.sqrt(s)
    # Welch-Satterthwaite df, computed on the scale-free ratios sa/s and sb/s
    # so that denormal variances cannot underflow the squares
    ra, rb = sa / s, sb / s
    df = 1.0 / (ra * ra / (na - 1) + rb * rb / (nb - 1))
    p = t_pvalue_two_sided(t_stat, df)
    return TTestResult(mean_a, mean_b, diff, t_stat, df, p, stars_for(p))


GROUP_COMPARE_MODES = ("aspect-proportion", "sentiment-mean")


def group_compare(
    rows: Sequence[PredictionRow],
    in_group_a: Callable[[PredictionRow], bool],
    in_group_b: Callable[[PredictionRow], bool],
    mode: str,
    aspects: Sequence[str] | None = None,
) -> dict[str, TTestResult]:
    """Per-aspect Welch t-tests between two tweet groups.

    Mode "aspect-proportion" compares per-tweet binary aspect indicators;
    mode "sentiment-mean" encodes negative=1 / non-negative=2 over the tweets
    mentioning the aspect. Aspects with fewer than two usable samples on
    either side are skipped. By default the proportion mode covers the five
    content aspects and the sentiment mode additionally includes Overall.
    """
    if mode not in GROUP_COMPARE_MODES:
        raise ValueError(f"unknown comparison mode {mode!r}")
    group_a = [r for r in rows if in_group_a(r)]
    group_b = [r for r in rows if in_group_b(r)]
    if not group_a or not group_b:
        raise PipelineError("both comparison groups must be non-empty")
    if aspects is None:
        from .corpus import A_USED, CONTENT_ASPECTS

        pool = CONTENT_ASPECTS if mode == "aspect-proportion" else A_USED
        aspects = [a.value for a in pool]

    out: dict[str, TTestResult] = {}
    for aspect in aspects:
        if mode == "aspect-proportion":
            xa = [1.0 if aspect in r.detected else 0.0 for r in group_a]
            xb = [1.0 if aspect in r.detected else 0.0 for r in group_b]
        else:
            xa = [1.0 if aspect in r.negatives else 2.0 for r in group_a if aspect in r.detected]
            xb = [1.0 if aspect in r.negatives else 2.0 for r in group_b if aspect in r.detected]
        if len(xa) < 2 or len(xb) < 2:
            continue
        out[aspect] = welch_ttest(xa, xb)
    return out


def write_series_csv(path, series: DailySeries) -> None:
    """CSV `date,value` with an empty cell for missing days."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "value"])
        for day, value in series.items():
            writer.writerow([day.isoformat(), "" if value is None else repr(value)])


def read_series_csv(path) -> DailySeries:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["date", "value"]:
            raise PipelineError(f"{path}: expected a 'date,value' series CSV")
        days: list[date] = []
        values: list[float | None] = []
        for row in reader:
            if not row:
                continue
            days.append(date.fromisoformat(row[0]))
            values.append(float(row[1]) if len(row) > 1 and row[1] != "" else None)
    if not days:
        raise PipelineError(f"{path}: series file has no rows")
    for prev, nxt in zip(days, days[1:]):
        if (nxt - prev).days != 1:
            raise PipelineError(f"{path}: series dates must be consecutive days")
    return DailySeries(days[0], values)
