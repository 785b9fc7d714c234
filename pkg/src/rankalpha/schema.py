"""Extraction schema for the 40-item response list.

The response list layout is versioned data, not code: a schema file is an
ordered CSV of ``index,name,kind,min,max`` rows with arity exactly 40.  The
default schema names the 28 fields the daily prompt asks for (decision,
six-horizon attractiveness for the stock and the index benchmark, sentiment,
divergence, earnings-beat rating, seven price targets, five EPS forecasts)
and reserves the remaining 12 slots.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import MissingColumn, SchemaError

ARITY = 40

SIGNAL_HORIZONS = ("1d", "1w", "1m", "1q", "2q", "1y")
PRICE_HORIZONS = ("today", "1d", "1w", "1m", "1q", "2q", "1y")
EPS_YEARS = (1, 2, 3, 4, 5)

KINDS = ("score", "price", "eps", "decision", "reserved")

SCORE_LO, SCORE_HI = -5.0, 5.0


@dataclass(frozen=True)
class FieldSpec:
    index: int
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None


@dataclass(frozen=True)
class ExtractSchema:
    fields: tuple[FieldSpec, ...]
    version: str = "default-1"

    def __post_init__(self):
        if len(self.fields) != ARITY:
            raise SchemaError(f"schema has {len(self.fields)} fields, expected {ARITY}")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError("schema field names are not unique")
        for f in self.fields:
            if f.kind not in KINDS:
                raise SchemaError(f"unknown field kind {f.kind!r} for {f.name!r}")

    def names(self) -> list[str]:
        return [f.name for f in self.fields]


def default_schema() -> ExtractSchema:
    """Schema used when no schema file is supplied."""
    fields: list[FieldSpec] = []

    def add(name: str, kind: str, lo=None, hi=None):
        fields.append(FieldSpec(len(fields), name, kind, lo, hi))

    add("decision", "decision")
    for h in SIGNAL_HORIZONS:
        add(f"attractiveness_{h}", "score", SCORE_LO, SCORE_HI)
    for h in SIGNAL_HORIZONS:
        add(f"russell_attractiveness_{h}", "score", SCORE_LO, SCORE_HI)
    add("market_sentiment", "score", SCORE_LO, SCORE_HI)
    add("market_divergence", "score", SCORE_LO, SCORE_HI)
    add("prob_beat", "score", SCORE_LO, SCORE_HI)
    for h in PRICE_HORIZONS:
        add(f"price_target_{h}", "price", 0.0, None)
    for y in EPS_YEARS:
        add(f"eps_fy{y}", "eps")
    for i in range(1, 13):
        add(f"reserved_{i:02d}", "reserved")
    return ExtractSchema(tuple(fields))


def load_schema(path: str | Path, version: str | None = None) -> ExtractSchema:
    """Read an ordered ``index,name,kind,min,max`` schema CSV."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"empty schema file {path}")
        expected = ["index", "name", "kind", "min", "max"]
        if [c.strip() for c in header] != expected:
            missing = set(expected) - {c.strip() for c in header}
            raise MissingColumn(",".join(sorted(missing)) or "ordered header", path)
        fields = []
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            idx = int(row[0])
            if idx != len(fields):
                raise SchemaError(f"schema rows out of order at index {idx}")
            lo = float(row[3]) if row[3].strip() else None
            hi = float(row[4]) if row[4].strip() else None
            fields.append(FieldSpec(idx, row[1].strip(), row[2].strip(), lo, hi))
    return ExtractSchema(tuple(fields), version=version or path.stem)


def save_schema(schema: ExtractSchema, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "name", "kind", "min", "max"])
        for f in schema.fields:
            writer.writerow([
                f.index,
                f.name,
                f.kind,
                "" if f.lo is None else repr(f.lo),
                "" if f.hi is None else repr(f.hi),
            ])
