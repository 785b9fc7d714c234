"""Descriptive statistics over the joined panel: summary rows and correlations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .errors import InsufficientOverlap
from .ingest import SCORE_FIELDS, AlignedPanel

# Market-side columns derivable from an aligned panel.
MARKET_FIELDS = ("market_cap", "dollar_volume", "spread_bps", "o2o_return")

#: Default Table-2-style correlation subset.
CORR_FIELDS = (
    "attractiveness_1d",
    "attractiveness_1w",
    "attractiveness_1m",
    "russell_attractiveness_1d",
    "market_sentiment",
    "market_divergence",
    "prob_beat",
    "market_cap",
    "dollar_volume",
    "spread_bps",
    "o2o_return",
)


@dataclass(frozen=True)
class PanelColumn:
    """One panel variable flattened over (date, stock) cells; NaN is missing."""

    name: str
    values: np.ndarray
    units: str = ""


@dataclass(frozen=True)
class SummaryRow:
    count: int
    min: float
    p1: float
    p25: float
    median: float
    p75: float
    p99: float
    max: float
    mean: float
    sd: float
    skew: float

    FIELDS = ("count", "min", "p1", "p25", "median", "p75", "p99", "max", "mean", "sd", "skew")


@dataclass(frozen=True)
class CorrelationCell:
    rho: float
    p_value: float
    stars: str
    n: int


def stars_for(p: float) -> str:
    """Significance stars at the 10/5/1 percent levels."""
    if np.isnan(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def column_from_panel(panel: AlignedPanel, name: str, units: str = "") -> PanelColumn:
    """Flatten a named panel variable into a PanelColumn."""
    if name in SCORE_FIELDS:
        values = panel.scores[name]
    elif name == "o2o_return":
        values = panel.simple_returns
        units = units or "decimal"
    elif name in ("market_cap", "dollar_volume", "spread_bps"):
        values = getattr(panel, name)
    else:
        raise KeyError(name)
    return PanelColumn(name, values.ravel().astype(float), units)


def summary_stats(column: PanelColumn) -> SummaryRow:
    """Distributional summary of one column, missing values skipped.

    Percentiles interpolate linearly between order statistics; sd is the
    sample standard deviation (n-1); skew is adjusted Fisher-Pearson.
    Degenerate cases: an empty column yields count 0 with NaN statistics,
    n < 2 yields NaN sd, and a zero second moment yields skew 0.
    """
    x = np.asarray(column.values, dtype=float)
    x = x[~np.isnan(x)]
    n = x.size
    if n == 0:
        nan = float("nan")
        return SummaryRow(0, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan)
    p1, p25, median, p75, p99 = np.percentile(x, [1, 25, 50, 75, 99], method="linear")
    mean = float(np.mean(x))
    sd = float(np.std(x, ddof=1)) if n >= 2 else float("nan")
    m2 = float(np.mean((x - mean) ** 2))
    if m2 == 0.0:
        skew = 0.0
    elif n < 3:
        skew = float("nan")
    else:
        g1 = float(np.mean((x - mean) ** 3)) / m2**1.5
        skew = g1 * np.sqrt(n * (n - 1)) / (n - 2)
    return SummaryRow(
        count=int(n),
        min=float(np.min(x)),
        p1=float(p1),
        p25=float(p25),
        median=float(median),
        p75=float(p75),
        p99=float(p99),
        max=float(np.max(x)),
        mean=mean,
        sd=sd,
        skew=float(skew),
    )


def _pair_cell(x: np.ndarray, y: np.ndarray, pair) -> CorrelationCell:
    mask = ~(np.isnan(x) | np.isnan(y))
    n = int(mask.sum())
    if n < 3:
        raise InsufficientOverlap(pair, n)
    xc = x[mask] - x[mask].mean()
    yc = y[mask] - y[mask].mean()
    sx = np.sqrt(np.dot(xc, xc))
    sy = np.sqrt(np.dot(yc, yc))
    if sx == 0.0 or sy == 0.0:
        return CorrelationCell(float("nan"), float("nan"), "", n)
    rho = float(np.clip(np.dot(xc, yc) / (sx * sy), -1.0, 1.0))
    if abs(rho) >= 1.0:
        p = 0.0
    else:
        t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
        p = float(2.0 * sstats.t.sf(abs(t), n - 2))
    return CorrelationCell(rho, p, stars_for(p), n)


def correlation_matrix(columns: list[PanelColumn]) -> list[list[CorrelationCell]]:
    """Pairwise-complete Pearson correlations with t-transform p-values.

    Pairwise (not listwise) completion because columns have different
    coverage.  Diagonal cells are exactly rho=1 with no test attached.
    """
    k = len(columns)
    if k < 2:
        raise InsufficientOverlap("matrix", k)
    out: list[list[CorrelationCell]] = [[None] * k for _ in range(k)]
    for i in range(k):
        xi = np.asarray(columns[i].values, dtype=float)
        n_i = int((~np.isnan(xi)).sum())
        out[i][i] = CorrelationCell(1.0, float("nan"), "", n_i)
        for j in range(i + 1, k):
            cell = _pair_cell(
                xi,
                np.asarray(columns[j].values, dtype=float),
                (columns[i].name, columns[j].name),
            )
            out[i][j] = cell
            out[j][i] = cell
    return out
