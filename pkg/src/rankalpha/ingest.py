"""Parse raw chat-log extracts and tabular panels into aligned observations.

Three sources feed the engine:

* signal files: either chat-log text blocks (one per stock-day, delimited by
  ``### <TICKER> <YYYY-MM-DD>`` header lines, each block ending in a
  40-element Python-readable list) or a pre-parsed CSV with schema-named
  columns;
* a market CSV with the exact header
  ``date,stock_id,open,market_cap,dollar_volume,bid,ask``;
* a factor CSV with the exact header
  ``date,mkt_rf,smb,hml,rmw,cma,mom,rf`` and ``YYYYMMDD`` dates.

Everything downstream works in decimal daily returns; percent appears only
at I/O boundaries.
"""

from __future__ import annotations

import ast
import csv
import datetime as dt
import enum
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CrossedQuoteWarning,
    DuplicateKey,
    EmptyIntersection,
    GapInCalendarWarning,
    InvalidValue,
    MissingColumn,
    NonPositivePrice,
    NoListFound,
    UnparseableElement,
    WrongArity,
)
from .schema import ARITY, EPS_YEARS, PRICE_HORIZONS, SIGNAL_HORIZONS, ExtractSchema

FACTOR_NAMES = ("mkt_rf", "smb", "hml", "rmw", "cma", "mom")

MARKET_COLUMNS = ("date", "stock_id", "open", "market_cap", "dollar_volume", "bid", "ask")
FACTOR_COLUMNS = ("date",) + FACTOR_NAMES + ("rf",)

# Signal fields carried into the aligned panel as (date, stock) matrices.
SCORE_FIELDS = (
    tuple(f"attractiveness_{h}" for h in SIGNAL_HORIZONS)
    + tuple(f"russell_attractiveness_{h}" for h in SIGNAL_HORIZONS)
    + ("market_sentiment", "market_divergence", "prob_beat")
)

_BLOCK_HEADER = re.compile(r"^###\s+(\S+)\s+(\d{4}-\d{2}-\d{2})(?:\s+(\d+))?\s*$")


class Decision(enum.Enum):
    BUY = "BUY"
    WAIT = "WAIT"
    SELL = "SELL"


@dataclass(frozen=True, slots=True)
class RangeFlag:
    """A value observed outside its schema's nominal range (kept, not clipped)."""

    field: str
    value: float
    lo: float | None
    hi: float | None


@dataclass(frozen=True, slots=True)
class SignalObservation:
    """One stock-day of AI outputs."""

    stock_id: str
    date: dt.date
    attractiveness: tuple          # 6 scores, SIGNAL_HORIZONS order
    russell_attractiveness: tuple  # 6 scores, SIGNAL_HORIZONS order
    sentiment: float | None
    divergence: float | None
    prob_beat: float | None
    decision: Decision | None
    price_targets: tuple           # 7 values, PRICE_HORIZONS order
    eps_forecasts: tuple           # 5 values, fiscal years 1..5
    range_flags: tuple = ()
    source_line: str = ""
    draw_index: int | None = None

    def score(self, name: str):
        """Value of a named score field (see SCORE_FIELDS)."""
        if name.startswith("attractiveness_"):
            return self.attractiveness[SIGNAL_HORIZONS.index(name[15:])]
        if name.startswith("russell_attractiveness_"):
            return self.russell_attractiveness[SIGNAL_HORIZONS.index(name[23:])]
        if name == "market_sentiment":
            return self.sentiment
        if name == "market_divergence":
            return self.divergence
        if name == "prob_beat":
            return self.prob_beat
        raise KeyError(name)


@dataclass(frozen=True, slots=True)
class MarketObservation:
    """One stock-day of prices, size and quotes."""

    stock_id: str
    date: dt.date
    open_price: float
    market_cap: float
    dollar_volume: float
    bid: float | None = None
    ask: float | None = None
    spread_bps: float | None = None


@dataclass(frozen=True, slots=True)
class FactorObservation:
    """One day of factor returns and the risk-free rate, decimal fractions."""

    date: dt.date
    mkt_rf: float
    smb: float
    hml: float
    rmw: float
    cma: float
    mom: float
    rf: float


# --------------------------------------------------------------------------
# Response-list parsing
# --------------------------------------------------------------------------

def _list_candidates(text: str) -> list[str]:
    """Top-level bracket-delimited substrings, in order of appearance.

    Depth-counting scanner; quoted strings are skipped so brackets inside
    them do not open or close candidates.
    """
    out = []
    depth = 0
    start = -1
    quote = None
    for i, ch in enumerate(text):
        if quote is not None:
            if ch == quote and text[i - 1] != "\\":
                quote = None
            continue
        if ch in "'\"" and depth > 0:
            quote = ch
        elif ch == "[":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "]" and depth > 0:
            depth -= 1
            if depth == 0:
                out.append(text[start : i + 1])
    return out


def _coerce_number(value, index: int) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool):
        raise UnparseableElement(index, value, "boolean where number expected")
    if isinstance(value, (int, float)):
        num = float(value)
    elif isinstance(value, str):
        text = value.strip()
        if not text or text.lower() in ("none", "na", "n/a"):
            return None
        try:
            num = float(text)
        except ValueError:
            raise UnparseableElement(index, value, "not numeric") from None
    else:
        raise UnparseableElement(index, value, "not numeric")
    if math.isnan(num):
        return None
    if math.isinf(num):
        raise UnparseableElement(index, value, "not finite")
    return num


def _coerce_decision(value, index: int) -> Decision | None:
    if value is None:
        return None
    if isinstance(value, str):
        text = value.strip().upper()
        if not text or text == "NONE":
            return None
        try:
            return Decision(text)
        except ValueError:
            raise UnparseableElement(index, value, "not BUY/WAIT/SELL") from None
    raise UnparseableElement(index, value, "not BUY/WAIT/SELL")


def _build_observation(
    values: Sequence,
    schema: ExtractSchema,
    stock_id: str,
    date: dt.date,
    source_line: str,
    draw_index: int | None,
) -> SignalObservation:
    """Map schema-named slots onto the observation; flags for out-of-range."""
    named: dict[str, float | None] = {}
    decision: Decision | None = None
    flags: list[RangeFlag] = []
    for spec, raw in zip(schema.fields, values):
        if spec.kind == "reserved":
            continue
        if spec.kind == "decision":
            decision = _coerce_decision(raw, spec.index)
            continue
        num = _coerce_number(raw, spec.index)
        named[spec.name] = num
        if num is not None and (
            (spec.lo is not None and num < spec.lo) or (spec.hi is not None and num > spec.hi)
        ):
            flags.append(RangeFlag(spec.name, num, spec.lo, spec.hi))

    def get(name):
        return named.get(name)

    return SignalObservation(
        stock_id=stock_id,
        date=date,
        attractiveness=tuple(get(f"attractiveness_{h}") for h in SIGNAL_HORIZONS),
        russell_attractiveness=tuple(get(f"russell_attractiveness_{h}") for h in SIGNAL_HORIZONS),
        sentiment=get("market_sentiment"),
        divergence=get("market_divergence"),
        prob_beat=get("prob_beat"),
        decision=decision,
        price_targets=tuple(get(f"price_target_{h}") for h in PRICE_HORIZONS),
        eps_forecasts=tuple(get(f"eps_fy{y}") for y in EPS_YEARS),
        range_flags=tuple(flags),
        source_line=source_line,
        draw_index=draw_index,
    )


def parse_response_list(
    raw_text: str,
    schema: ExtractSchema,
    stock_id: str = "",
    date: dt.date | None = None,
    draw_index: int | None = None,
) -> SignalObservation:
    """Extract the last well-formed 40-element list from a chat-log block.

    Chat logs may contain earlier drafts; the prompt asks for the summary
    list at the end of every response, so later candidates supersede
    earlier ones.  Out-of-range values are flagged on the observation, not
    rejected: the production data itself contains scores outside the
    nominal bounds.

    Raises NoListFound when no bracket candidate exists, otherwise the
    failure of the last candidate that parsed as a list (WrongArity or
    UnparseableElement) when none is fully well-formed.
    """
    candidates = _list_candidates(raw_text)
    best: SignalObservation | None = None
    last_error: Exception | None = None
    saw_list = False
    for cand in candidates:
        try:
            values = ast.literal_eval(cand)
        except (ValueError, SyntaxError):
            continue
        if not isinstance(values, (list, tuple)):
            continue
        saw_list = True
        if len(values) != ARITY:
            last_error = WrongArity(len(values), ARITY)
            continue
        try:
            best = _build_observation(
                values, schema, stock_id, date or dt.date.min, cand, draw_index
            )
            last_error = None
        except UnparseableElement as exc:
            last_error = exc
    if best is not None:
        return best
    if last_error is not None:
        raise last_error
    if saw_list:  # pragma: no cover - every parsed list sets an error above
        raise NoListFound("no well-formed candidate list")
    raise NoListFound("no bracket-delimited list in text")


def format_response_list(obs: SignalObservation, schema: ExtractSchema) -> str:
    """Render an observation back into its schema-ordered list form."""
    parts = []
    for spec in schema.fields:
        if spec.kind == "reserved":
            parts.append("None")
        elif spec.kind == "decision":
            parts.append("None" if obs.decision is None else f"'{obs.decision.value}'")
        else:
            value = obs.score(spec.name) if spec.name in SCORE_FIELDS else None
            if spec.name.startswith("price_target_"):
                value = obs.price_targets[PRICE_HORIZONS.index(spec.name[13:])]
            elif spec.name.startswith("eps_fy"):
                value = obs.eps_forecasts[int(spec.name[6:]) - 1]
            parts.append("None" if value is None else repr(value))
    return "[" + ", ".join(parts) + "]"


def load_signal_blocks(path: str | Path, schema: ExtractSchema) -> list[SignalObservation]:
    """Parse a text file of header-delimited chat-log blocks."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    observations: list[SignalObservation] = []
    seen: set[tuple] = set()
    header: tuple[str, dt.date, int | None] | None = None
    buf: list[str] = []

    def flush():
        if header is None:
            return
        stock_id, date, draw = header
        block = "\n".join(buf)
        try:
            obs = parse_response_list(block, schema, stock_id, date, draw)
        except Exception as exc:
            raise type(exc)(f"{exc} [block {stock_id} {date}]") from exc
        key = (stock_id, date, draw)
        if key in seen:
            raise DuplicateKey(*key)
        seen.add(key)
        observations.append(obs)

    for line in text.splitlines():
        m = _BLOCK_HEADER.match(line)
        if m:
            flush()
            header = (
                m.group(1),
                dt.date.fromisoformat(m.group(2)),
                int(m.group(3)) if m.group(3) else None,
            )
            buf = []
        else:
            buf.append(line)
    flush()
    return observations


def load_signal_csv(path: str | Path, schema: ExtractSchema) -> list[SignalObservation]:
    """Read pre-parsed signals from a CSV with schema-named columns.

    ``stock_id`` and ``date`` are required; every non-reserved schema name
    must be present; ``draw_index`` is optional.  Blank cells are missing.
    Range flags are computed exactly as in list parsing.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MissingColumn("stock_id", path)
        cols = {name: i for i, name in enumerate(header)}
        for required in ("stock_id", "date"):
            if required not in cols:
                raise MissingColumn(required, path)
        needed = [f for f in schema.fields if f.kind != "reserved"]
        for spec in needed:
            if spec.name not in cols:
                raise MissingColumn(spec.name, path)
        has_draw = "draw_index" in cols
        observations = []
        seen: set[tuple] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            stock_id = row[cols["stock_id"]].strip()
            date = dt.date.fromisoformat(row[cols["date"]].strip())
            draw = None
            if has_draw and row[cols["draw_index"]].strip():
                draw = int(row[cols["draw_index"]])
            values: list = [None] * ARITY
            for spec in needed:
                cell = row[cols[spec.name]]
                values[spec.index] = cell if cell.strip() else None
            try:
                obs = _build_observation(values, schema, stock_id, date, "", draw)
            except UnparseableElement as exc:
                raise type(exc)(exc.index, exc.value, f"line {lineno}") from exc
            key = (stock_id, date, draw)
            if key in seen:
                raise DuplicateKey(*key)
            seen.add(key)
            observations.append(obs)
    return observations


def load_signals(path: str | Path, schema: ExtractSchema) -> list[SignalObservation]:
    """Dispatch on extension: ``.csv`` is pre-parsed, anything else is blocks."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_signal_csv(path, schema)
    return load_signal_blocks(path, schema)


# --------------------------------------------------------------------------
# Market and factor panels
# --------------------------------------------------------------------------

def _check_header(header: list[str] | None, expected: tuple[str, ...], path) -> None:
    if header is None:
        raise MissingColumn(expected[0], path)
    got = [c.strip() for c in header]
    if got != list(expected):
        missing = [c for c in expected if c not in got]
        raise MissingColumn(",".join(missing) if missing else f"exact header {expected}", path)


def _opt_float(cell: str) -> float | None:
    cell = cell.strip()
    return float(cell) if cell else None


def derive_spread_bps(bid: float | None, ask: float | None, key=None) -> float | None:
    """Spread relative to the mid-price in basis points; None when unusable."""
    if bid is None or ask is None:
        return None
    if bid <= 0 or ask < bid:
        warnings.warn(
            f"unusable quote bid={bid} ask={ask}" + (f" at {key}" if key else ""),
            CrossedQuoteWarning,
            stacklevel=2,
        )
        return None
    return (ask - bid) / ((ask + bid) / 2.0) * 1e4


def load_market_panel(path: str | Path) -> list[MarketObservation]:
    """Read the market CSV; one observation per (stock, date)."""
    path = Path(path)
    observations = []
    seen: set[tuple] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), MARKET_COLUMNS, path)
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            date = dt.date.fromisoformat(row[0].strip())
            stock_id = row[1].strip()
            key = (stock_id, date)
            if key in seen:
                raise DuplicateKey(*key)
            seen.add(key)
            open_price = float(row[2])
            if open_price <= 0:
                raise NonPositivePrice("open", open_price, key)
            market_cap = float(row[3])
            if market_cap <= 0:
                raise NonPositivePrice("market_cap", market_cap, key)
            dollar_volume = float(row[4])
            if dollar_volume < 0:
                raise InvalidValue("dollar_volume", dollar_volume, key)
            bid = _opt_float(row[5])
            ask = _opt_float(row[6])
            observations.append(
                MarketObservation(
                    stock_id,
                    date,
                    open_price,
                    market_cap,
                    dollar_volume,
                    bid,
                    ask,
                    derive_spread_bps(bid, ask, key),
                )
            )
    return observations


def load_factor_panel(path: str | Path, units: str) -> list[FactorObservation]:
    """Read the factor CSV; stores decimal fractions regardless of input units.

    ``units`` must be ``"percent"`` (inputs divided by 100) or ``"decimal"``
    (passthrough).  Emits GapInCalendarWarning when consecutive dates are
    more than 4 calendar days apart.
    """
    if units not in ("percent", "decimal"):
        raise InvalidValue("units", units)
    scale = 0.01 if units == "percent" else 1.0
    path = Path(path)
    rows: list[FactorObservation] = []
    seen: set[dt.date] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), FACTOR_COLUMNS, path)
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            raw = row[0].strip()
            date = dt.date(int(raw[:4]), int(raw[4:6]), int(raw[6:8]))
            if date in seen:
                raise DuplicateKey(date)
            seen.add(date)
            values = []
            for name, cell in zip(FACTOR_COLUMNS[1:], row[1:]):
                value = float(cell) * scale
                if not math.isfinite(value):
                    raise InvalidValue(name, cell, date)
                values.append(value)
            rows.append(FactorObservation(date, *values))
    rows.sort(key=lambda o: o.date)
    for prev, cur in zip(rows, rows[1:]):
        if (cur.date - prev.date).days > 4:
            warnings.warn(
                f"factor calendar gap {prev.date} -> {cur.date}",
                GapInCalendarWarning,
                stacklevel=2,
            )
    return rows


def write_factor_panel(rows: Iterable[FactorObservation], path: str | Path, units: str) -> None:
    """Inverse of load_factor_panel, for round-trips and fixtures."""
    if units not in ("percent", "decimal"):
        raise InvalidValue("units", units)
    scale = 100.0 if units == "percent" else 1.0
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FACTOR_COLUMNS)
        for obs in rows:
            writer.writerow(
                [obs.date.strftime("%Y%m%d")]
                + [repr(getattr(obs, name) * scale) for name in FACTOR_COLUMNS[1:]]
            )


# --------------------------------------------------------------------------
# Calendar alignment
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageReport:
    """Per-source date gaps found while joining the three panels."""

    calendar: tuple                 # trading dates used (market AND factors)
    carry_forward: tuple            # calendar dates with no signal block
    signals_outside_calendar: tuple
    market_missing: tuple           # factor dates absent from the market panel
    factors_missing: tuple          # market dates absent from the factor panel


@dataclass
class AlignedPanel:
    """Columnar join of signals, market data and factors on one calendar.

    Matrices are (n_dates, n_stocks) float arrays with NaN marking missing
    cells.  A signal dated t is evaluated on the return window opening at t.
    """

    dates: tuple
    stocks: tuple
    open_price: np.ndarray
    market_cap: np.ndarray
    dollar_volume: np.ndarray
    spread_bps: np.ndarray
    scores: dict[str, np.ndarray]
    factors: np.ndarray             # (n_dates, 6) in FACTOR_NAMES order
    rf: np.ndarray
    fresh_signal: np.ndarray        # bool per date; False marks carry-forward
    report: CoverageReport
    signals: tuple = ()             # original observations, audit use

    @cached_property
    def date_index(self) -> dict:
        return {d: i for i, d in enumerate(self.dates)}

    @cached_property
    def stock_index(self) -> dict:
        return {s: i for i, s in enumerate(self.stocks)}

    @cached_property
    def simple_returns(self) -> np.ndarray:
        """Open-to-open simple returns; row t is open_t -> open_{t+1}, last row NaN."""
        r = np.full_like(self.open_price, np.nan)
        r[:-1] = self.open_price[1:] / self.open_price[:-1] - 1.0
        return r

    @cached_property
    def log_returns(self) -> np.ndarray:
        r = np.full_like(self.open_price, np.nan)
        with np.errstate(invalid="ignore", divide="ignore"):
            r[:-1] = np.log(self.open_price[1:] / self.open_price[:-1])
        return r

    @cached_property
    def excess_market_returns(self) -> np.ndarray:
        return self.simple_returns - self.rf[:, None]


def align_calendar(
    signals: Sequence[SignalObservation],
    market: Sequence[MarketObservation],
    factors: Sequence[FactorObservation],
) -> AlignedPanel:
    """Join the three sources on the market-and-factor trading calendar.

    Calendar dates with no signals at all become carry-forward days.  When a
    (stock, date) cell carries multiple regenerations, the highest
    draw_index wins (latest draft); duplicate cells without draw indices
    raise DuplicateKey.
    """
    market_dates = {o.date for o in market}
    factor_dates = {o.date for o in factors}
    calendar = tuple(sorted(market_dates & factor_dates))
    if not calendar:
        raise EmptyIntersection("market and factor panels share no dates")
    signal_dates = {o.date for o in signals}
    fresh = np.array([d in signal_dates for d in calendar], dtype=bool)
    if not fresh.any():
        raise EmptyIntersection("no signal date falls inside the trading calendar")

    stocks = tuple(sorted({o.stock_id for o in market} | {o.stock_id for o in signals}))
    n_t, n_s = len(calendar), len(stocks)
    d_idx = {d: i for i, d in enumerate(calendar)}
    s_idx = {s: i for i, s in enumerate(stocks)}

    open_price = np.full((n_t, n_s), np.nan)
    market_cap = np.full((n_t, n_s), np.nan)
    dollar_volume = np.full((n_t, n_s), np.nan)
    spread = np.full((n_t, n_s), np.nan)
    for o in market:
        t = d_idx.get(o.date)
        if t is None:
            continue
        s = s_idx[o.stock_id]
        open_price[t, s] = o.open_price
        market_cap[t, s] = o.market_cap
        dollar_volume[t, s] = o.dollar_volume
        if o.spread_bps is not None:
            spread[t, s] = o.spread_bps

    scores = {name: np.full((n_t, n_s), np.nan) for name in SCORE_FIELDS}
    chosen: dict[tuple, SignalObservation] = {}
    for o in signals:
        if o.date not in d_idx:
            continue
        key = (o.stock_id, o.date)
        prev = chosen.get(key)
        if prev is not None:
            if prev.draw_index is None and o.draw_index is None:
                raise DuplicateKey(*key)
            if (o.draw_index or 0) < (prev.draw_index or 0):
                continue
        chosen[key] = o
    for (stock_id, date), o in chosen.items():
        t, s = d_idx[date], s_idx[stock_id]
        for name in SCORE_FIELDS:
            value = o.score(name)
            if value is not None:
                scores[name][t, s] = value

    factor_matrix = np.full((n_t, len(FACTOR_NAMES)), np.nan)
    rf = np.full(n_t, np.nan)
    for o in factors:
        t = d_idx.get(o.date)
        if t is None:
            continue
        factor_matrix[t] = [getattr(o, name) for name in FACTOR_NAMES]
        rf[t] = o.rf

    report = CoverageReport(
        calendar=calendar,
        carry_forward=tuple(d for d, f in zip(calendar, fresh) if not f),
        signals_outside_calendar=tuple(sorted(signal_dates - set(calendar))),
        market_missing=tuple(sorted(factor_dates - market_dates)),
        factors_missing=tuple(sorted(market_dates - factor_dates)),
    )
    return AlignedPanel(
        dates=calendar,
        stocks=stocks,
        open_price=open_price,
        market_cap=market_cap,
        dollar_volume=dollar_volume,
        spread_bps=spread,
        scores=scores,
        factors=factor_matrix,
        rf=rf,
        fresh_signal=fresh,
        report=report,
        signals=tuple(chosen.values()),
    )
