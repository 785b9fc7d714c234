"""Rank-based portfolio formation, holding-period accounting and turnover.

Portfolios enter at the opening auction of day t on signals generated
overnight and exit at the opening auction of day t+1, so all accounting
runs on simple open-to-open returns (a value-weighted portfolio return is
linear in simple returns, not in log returns).  Horizons beyond daily use
the overlapping-cohort scheme: K staggered sub-portfolios, each weighted
1/K, buy-and-hold within their life.

Carry-forward dates (no fresh signal) hold the previous portfolio
passively: no cohort enters or retires and turnover is exactly zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllMembersMissing,
    DroppedMemberWarning,
    EmptyUniverse,
    NonPositiveCap,
    NonPositivePrice,
    ShortUniverseWarning,
    WarmupWarning,
)
from .ingest import AlignedPanel

#: Trading-day holding periods per signal horizon.
HORIZON_DAYS = {"1d": 1, "1w": 5, "1m": 21, "1q": 63}

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class PortfolioSnapshot:
    """Dated holdings with formation-time value weights for one horizon."""

    date: object
    horizon_days: int
    tier: str                      # "top", "bottom" or "group_<g>"
    n_target: int
    members: tuple                 # ((stock_id, weight), ...)
    carry_forward: bool = False

    def __post_init__(self):
        ids = [m[0] for m in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate members in snapshot {self.date}")
        if len(ids) > self.n_target:
            raise ValueError(f"snapshot holds {len(ids)} > N={self.n_target}")
        weights = [m[1] for m in self.members]
        if any(w <= 0 for w in weights):
            raise ValueError("snapshot weights must be strictly positive")
        if abs(sum(weights) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"snapshot weights sum to {sum(weights)}, not 1")

    @property
    def member_ids(self) -> frozenset:
        return frozenset(m[0] for m in self.members)


@dataclass
class ReturnSeries:
    """Daily portfolio returns; excess = raw - rf elementwise."""

    dates: tuple
    raw: np.ndarray
    excess: np.ndarray
    warmup: np.ndarray = None      # True while fewer than K cohorts are live

    def __post_init__(self):
        if len(self.dates) != len(self.raw) or len(self.raw) != len(self.excess):
            raise ValueError("return series vectors differ in length")
        if self.warmup is None:
            self.warmup = np.zeros(len(self.raw), dtype=bool)


@dataclass
class TurnoverSeries:
    dates: tuple
    turnover: np.ndarray
    carry_forward: np.ndarray


@dataclass
class BacktestResult:
    horizon: str
    tier: str
    n_target: int
    snapshots: list
    returns: ReturnSeries
    turnover: TurnoverSeries


# --------------------------------------------------------------------------
# Formation primitives
# --------------------------------------------------------------------------

def rank_universe(scores: dict, caps: dict) -> list:
    """Stocks in descending score order.

    Ties break descending by market capitalization (favouring liquidity),
    then ascending by stock id so the order is total and deterministic.
    Every scored stock must have a cap.
    """
    if not scores:
        raise EmptyUniverse("no scored stocks")
    return sorted(scores, key=lambda s: (-scores[s], -caps[s], s))


def select_top_n(ranked: list, n: int) -> list:
    """First min(n, len) entries; warns when the universe is short."""
    if not ranked:
        raise EmptyUniverse("ranking is empty")
    if len(ranked) < n:
        warnings.warn(
            f"universe of {len(ranked)} smaller than N={n}", ShortUniverseWarning, stacklevel=2
        )
    return list(ranked[: min(n, len(ranked))])


def select_bottom_n(ranked: list, n: int) -> list:
    """Last min(n, len) entries, in rank order."""
    if not ranked:
        raise EmptyUniverse("ranking is empty")
    if len(ranked) < n:
        warnings.warn(
            f"universe of {len(ranked)} smaller than N={n}", ShortUniverseWarning, stacklevel=2
        )
    return list(ranked[-min(n, len(ranked)) :])


def rank_groups(ranked: list, g: int = 50) -> list:
    """Partition a ranking into g contiguous slices.

    Sizes differ by at most one, with the remainder going to the earliest
    groups; the union is the universe and slices are pairwise disjoint.
    """
    if g < 1:
        raise ValueError("g must be >= 1")
    n = len(ranked)
    groups = []
    base, rem = divmod(n, g)
    pos = 0
    for i in range(g):
        size = base + (1 if i < rem else 0)
        groups.append(list(ranked[pos : pos + size]))
        pos += size
    return groups


def value_weights(members: list, caps: dict) -> list:
    """(stock, weight) pairs with weights proportional to market cap."""
    for m in members:
        if caps[m] <= 0:
            raise NonPositiveCap(m, caps[m])
    total = math.fsum(caps[m] for m in members)
    return [(m, caps[m] / total) for m in members]


def open_to_open_return(open_t: float, open_t1: float, mode: str = "simple") -> float:
    """Return from day t's open to day t+1's open.

    ``simple`` is used everywhere in portfolio aggregation; ``log`` is the
    per-stock diagnostic form.
    """
    if open_t <= 0:
        raise NonPositivePrice("open_t", open_t)
    if open_t1 <= 0:
        raise NonPositivePrice("open_t1", open_t1)
    if mode == "simple":
        return open_t1 / open_t - 1.0
    if mode == "log":
        return math.log(open_t1 / open_t)
    raise ValueError(f"unknown return mode {mode!r}")


def snapshot_return(snapshot: PortfolioSnapshot, returns: dict) -> float:
    """Weighted portfolio return; members without a return are dropped
    with weight renormalization."""
    held = [(m, w) for m, w in snapshot.members]
    valid = [(m, w) for m, w in held if returns.get(m) is not None]
    if not valid:
        raise AllMembersMissing(f"no member of {snapshot.date} has a return")
    if len(valid) < len(held):
        warnings.warn(
            f"{len(held) - len(valid)} member(s) dropped on {snapshot.date}",
            DroppedMemberWarning,
            stacklevel=2,
        )
    total_w = math.fsum(w for _, w in valid)
    return math.fsum(w * returns[m] for m, w in valid) / total_w


def overlapping_series(lag_returns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate K staggered cohorts, each weighted 1/K.

    ``lag_returns`` is (K, T): row l holds the daily return of the cohort
    that is l formations old, NaN where no such cohort is live.  The
    aggregate day-t return is the mean over live cohorts; days with fewer
    than K live cohorts are flagged as warm-up.  K=1 returns the single
    row unchanged.
    """
    lag_returns = np.asarray(lag_returns, dtype=float)
    if lag_returns.ndim != 2 or lag_returns.shape[0] < 1:
        raise ValueError("expected a (K, T) lag matrix")
    k = lag_returns.shape[0]
    live = (~np.isnan(lag_returns)).sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # empty columns stay NaN
        agg = np.nanmean(lag_returns, axis=0)
    warmup = (live > 0) & (live < k)
    if warmup.any():
        warnings.warn(
            f"{int(warmup.sum())} day(s) averaged over fewer than K={k} cohorts",
            WarmupWarning,
            stacklevel=2,
        )
    return agg, warmup


def turnover(current: frozenset, previous: frozenset, n: int, carry_forward: bool = False) -> float:
    """Fraction of the N slots filled by new names, |H_t \\ H_{t-1}| / N.

    Carry-forward dates hold the previous portfolio passively and return
    exactly zero.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if carry_forward:
        return 0.0
    return len(frozenset(current) - frozenset(previous)) / n


def membership_frequency(snapshots: list, stock_id: str) -> float:
    """Share of valid (fresh-signal) dates on which the stock is held."""
    fresh = [s for s in snapshots if not s.carry_forward]
    if not fresh:
        raise ValueError("no snapshots with fresh signals")
    return sum(stock_id in s.member_ids for s in fresh) / len(fresh)


def average_score_leaderboard(panel: AlignedPanel, horizon: str = "1d", top_k: int = 20) -> list:
    """Stocks ranked by mean attractiveness over their non-missing dates."""
    scores = panel.scores[f"attractiveness_{horizon}"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.nanmean(scores, axis=0)
    entries = [
        (stock, float(means[i])) for i, stock in enumerate(panel.stocks) if not np.isnan(means[i])
    ]
    entries.sort(key=lambda e: (-e[1], e[0]))
    return entries[:top_k]


# --------------------------------------------------------------------------
# Backtest engine
# --------------------------------------------------------------------------

def formation_rankings(panel: AlignedPanel, horizon: str) -> dict:
    """Ranked universe per formable fresh-signal date.

    Formation on day t uses scores dated t and market caps from the prior
    trading day's market rows (no lookahead); the first calendar date has
    no prior row and is skipped.  Scored stocks without a prior-day cap
    are excluded from that day's universe.
    """
    field_name = f"attractiveness_{horizon}"
    scores = panel.scores[field_name]
    rankings: dict[int, list] = {}
    dropped = 0
    for t in range(1, len(panel.dates)):
        if not panel.fresh_signal[t]:
            continue
        score_row = scores[t]
        cap_row = panel.market_cap[t - 1]
        scored = ~np.isnan(score_row)
        usable = scored & ~np.isnan(cap_row) & (cap_row > 0)
        dropped += int(scored.sum() - usable.sum())
        idx = np.nonzero(usable)[0]
        if idx.size == 0:
            continue
        score_map = {panel.stocks[i]: float(score_row[i]) for i in idx}
        cap_map = {panel.stocks[i]: float(cap_row[i]) for i in idx}
        rankings[t] = rank_universe(score_map, cap_map)
    if dropped:
        warnings.warn(
            f"{dropped} scored stock-days lacked a prior-day cap and were excluded",
            DroppedMemberWarning,
            stacklevel=2,
        )
    return rankings


class _Cohort:
    """Buy-and-hold positions of one formation; weights drift daily."""

    __slots__ = ("idx", "weights")

    def __init__(self, idx: np.ndarray, weights: np.ndarray):
        self.idx = idx
        self.weights = weights

    def step(self, returns_row: np.ndarray, date) -> float:
        r = returns_row[self.idx]
        valid = np.isfinite(r)
        if not valid.any():
            raise AllMembersMissing(f"cohort lost every member on {date}")
        if not valid.all():
            warnings.warn(
                f"{int((~valid).sum())} member(s) dropped on {date}",
                DroppedMemberWarning,
                stacklevel=3,
            )
            self.idx = self.idx[valid]
            self.weights = self.weights[valid] / self.weights[valid].sum()
            r = r[valid]
        ret = float(self.weights @ r)
        grown = self.weights * (1.0 + r)
        self.weights = grown / grown.sum()
        return ret


def _run_chain(
    panel: AlignedPanel,
    horizon: str,
    tier: str,
    n_target: int,
    member_sets: dict,
) -> BacktestResult:
    """Sequential snapshot chain and cohort accounting for one member rule.

    ``member_sets`` maps formable date index -> list of member stock ids.
    """
    k = HORIZON_DAYS[horizon]
    n_dates = len(panel.dates)
    returns_matrix = panel.simple_returns
    stock_index = panel.stock_index

    snapshots: list[PortfolioSnapshot] = []
    turnover_dates, turnover_values, turnover_carry = [], [], []
    cohorts: list[_Cohort] = []
    lag_rows: list[np.ndarray] = [np.full(n_dates, np.nan) for _ in range(k)]
    prev_snapshot: PortfolioSnapshot | None = None
    first_t: int | None = None

    for t in range(n_dates):
        if t in member_sets:
            members = member_sets[t]
            caps = {m: float(panel.market_cap[t - 1, stock_index[m]]) for m in members}
            weighted = value_weights(members, caps)
            snap = PortfolioSnapshot(
                panel.dates[t], k, tier, max(n_target, len(weighted)), tuple(weighted)
            )
            if prev_snapshot is not None:
                turnover_dates.append(panel.dates[t])
                turnover_values.append(
                    turnover(snap.member_ids, prev_snapshot.member_ids, n_target)
                )
                turnover_carry.append(False)
            cohorts.append(
                _Cohort(
                    np.array([stock_index[m] for m, _ in weighted], dtype=int),
                    np.array([w for _, w in weighted], dtype=float),
                )
            )
            if len(cohorts) > k:
                cohorts.pop(0)
            for age, cohort in enumerate(reversed(cohorts)):
                cohort.age = age  # type: ignore[attr-defined]
            snapshots.append(snap)
            prev_snapshot = snap
            if first_t is None:
                first_t = t
        elif prev_snapshot is not None and not panel.fresh_signal[t]:
            snap = PortfolioSnapshot(
                panel.dates[t],
                k,
                tier,
                prev_snapshot.n_target,
                prev_snapshot.members,
                carry_forward=True,
            )
            snapshots.append(snap)
            turnover_dates.append(panel.dates[t])
            turnover_values.append(turnover(snap.member_ids, prev_snapshot.member_ids, n_target, True))
            turnover_carry.append(True)
            prev_snapshot = snap

        if cohorts and t < n_dates - 1:
            for age, cohort in enumerate(reversed(cohorts)):
                lag_rows[age][t] = cohort.step(returns_matrix[t], panel.dates[t])

    if first_t is None:
        raise EmptyUniverse(f"no formable date for tier {tier!r} horizon {horizon!r}")

    lag_matrix = np.vstack(lag_rows)
    agg, warmup = overlapping_series(lag_matrix)
    live = np.nonzero(~np.isnan(agg))[0]
    series = ReturnSeries(
        dates=tuple(panel.dates[t] for t in live),
        raw=agg[live],
        excess=agg[live] - panel.rf[live],
        warmup=warmup[live],
    )
    turno = TurnoverSeries(
        dates=tuple(turnover_dates),
        turnover=np.array(turnover_values, dtype=float),
        carry_forward=np.array(turnover_carry, dtype=bool),
    )
    return BacktestResult(horizon, tier, n_target, snapshots, series, turno)


def backtest_portfolio(
    panel: AlignedPanel,
    horizon: str = "1d",
    tier: str = "top",
    n: int = 20,
    rankings: dict | None = None,
) -> BacktestResult:
    """Backtest the top-N or bottom-N portfolio for one signal horizon."""
    if tier not in ("top", "bottom"):
        raise ValueError(f"tier must be 'top' or 'bottom', got {tier!r}")
    if rankings is None:
        rankings = formation_rankings(panel, horizon)
    select = select_top_n if tier == "top" else select_bottom_n
    member_sets = {t: select(ranked, n) for t, ranked in rankings.items()}
    return _run_chain(panel, horizon, tier, n, member_sets)


def backtest_universe(panel: AlignedPanel, horizon: str = "1d") -> BacktestResult:
    """Value-weighted portfolio of the whole rankable universe (market proxy)."""
    rankings = formation_rankings(panel, horizon)
    member_sets = {t: list(ranked) for t, ranked in rankings.items()}
    n = max(len(m) for m in member_sets.values())
    return _run_chain(panel, horizon, "universe", n, member_sets)


def backtest_rank_groups(
    panel: AlignedPanel,
    horizon: str = "1d",
    g: int = 50,
    rankings: dict | None = None,
) -> list[BacktestResult]:
    """Backtest g contiguous rank groups; one result per group."""
    if rankings is None:
        rankings = formation_rankings(panel, horizon)
    group_sets: list[dict] = [dict() for _ in range(g)]
    for t, ranked in rankings.items():
        for gi, members in enumerate(rank_groups(ranked, g)):
            if members:
                group_sets[gi][t] = members
    results = []
    for gi, member_sets in enumerate(group_sets):
        if not member_sets:
            continue
        n = max(len(m) for m in member_sets.values())
        results.append(_run_chain(panel, horizon, f"group_{gi + 1:02d}", n, member_sets))
    return results
