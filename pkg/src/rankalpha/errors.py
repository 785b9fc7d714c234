"""Exception and warning types shared across the pipeline."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for every error raised by this package."""


# --- ingest ---------------------------------------------------------------

class SchemaError(PipelineError):
    """Extraction schema violates its own contract (arity, duplicate names)."""


class NoListFound(PipelineError):
    """No bracket-delimited list candidate in the text."""


class WrongArity(PipelineError):
    def __init__(self, found: int, expected: int = 40):
        super().__init__(f"list has {found} elements, expected {expected}")
        self.found = found
        self.expected = expected


class UnparseableElement(PipelineError):
    def __init__(self, index: int, value=None, reason: str = ""):
        detail = f" ({reason})" if reason else ""
        super().__init__(f"element {index} is not parseable: {value!r}{detail}")
        self.index = index
        self.value = value


class MissingColumn(PipelineError):
    def __init__(self, column: str, path=None):
        super().__init__(f"missing column {column!r}" + (f" in {path}" if path else ""))
        self.column = column


class DuplicateKey(PipelineError):
    def __init__(self, *key):
        super().__init__(f"duplicate key {key}")
        self.key = key


class NonPositivePrice(PipelineError):
    def __init__(self, field: str, value, key=None):
        super().__init__(f"{field} must be positive, got {value!r}" + (f" at {key}" if key else ""))
        self.field = field
        self.value = value


class InvalidValue(PipelineError):
    def __init__(self, field: str, value, key=None):
        super().__init__(f"invalid {field}: {value!r}" + (f" at {key}" if key else ""))
        self.field = field
        self.value = value


class EmptyIntersection(PipelineError):
    """Sources share no usable trading dates."""


# --- panel ----------------------------------------------------------------

class InsufficientOverlap(PipelineError):
    def __init__(self, pair, n: int = 0):
        super().__init__(f"pairwise overlap too small for {pair}: n={n}")
        self.pair = pair
        self.n = n


# --- portfolio ------------------------------------------------------------

class EmptyUniverse(PipelineError):
    """No rankable stocks on a formation date."""


class NonPositiveCap(PipelineError):
    def __init__(self, stock_id: str, value):
        super().__init__(f"market cap for {stock_id} must be positive, got {value!r}")
        self.stock_id = stock_id


class AllMembersMissing(PipelineError):
    """Every portfolio member lacks the required value on a date."""


# --- factormodel ----------------------------------------------------------

class RankDeficient(PipelineError):
    def __init__(self, rank: int, ncols: int):
        super().__init__(f"design matrix rank {rank} < {ncols} columns")
        self.rank = rank
        self.ncols = ncols


class TooFewObservations(PipelineError):
    def __init__(self, nobs: int, needed: int):
        super().__init__(f"{nobs} observations, need more than {needed}")
        self.nobs = nobs
        self.needed = needed


class LagTooLarge(PipelineError):
    def __init__(self, lag: int, nobs: int):
        super().__init__(f"HAC lag {lag} must be < nobs {nobs}")
        self.lag = lag


class ZeroVariance(PipelineError):
    """A series has zero sample variance where dispersion is required."""


class ReturnBelowMinusOne(PipelineError):
    def __init__(self, index: int, value: float):
        super().__init__(f"simple return at position {index} is {value} <= -1")
        self.index = index


# --- consistency ----------------------------------------------------------

class EmptySample(PipelineError):
    """A two-sample test received an empty sample."""


class DegenerateGroups(PipelineError):
    """Fewer than two (stock, date) cells with at least two draws."""


class NoEligibleGroups(PipelineError):
    """No (stock, date) cell has enough draws to split."""


class InsufficientCrossSection(PipelineError):
    """No date has enough multi-draw stocks for a cross-sectional ranking."""


# --- costs ----------------------------------------------------------------

class CrossedQuote(PipelineError):
    def __init__(self, bid: float, ask: float):
        super().__init__(f"ask {ask} < bid {bid}")


class NonPositiveQuote(PipelineError):
    def __init__(self, bid: float, ask: float):
        super().__init__(f"quotes must be positive, got bid={bid} ask={ask}")


class ZeroTotalVolume(PipelineError):
    """Benchmark spread undefined: total dollar volume is zero."""


# --- cli / simulate -------------------------------------------------------

class InfeasibleParameters(PipelineError):
    """Simulation parameters cannot produce a usable fixture."""


class ConfigError(PipelineError):
    """Run configuration is invalid (unknown key, missing file, bad value)."""


class StageError(PipelineError):
    """A pipeline stage failed; carries the stage name and original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# --- warnings -------------------------------------------------------------

class DataWarning(UserWarning):
    """Base class for data-quality warnings."""


class GapInCalendarWarning(DataWarning):
    """Factor panel skips more days than a weekend plus one holiday."""


class CrossedQuoteWarning(DataWarning):
    """Quote pair unusable for spread derivation; spread left missing."""


class ShortUniverseWarning(DataWarning):
    """Requested portfolio size exceeds the rankable universe."""


class DroppedMemberWarning(DataWarning):
    """Members dropped (missing value) with weight renormalization."""


class WarmupWarning(DataWarning):
    """Overlapping aggregate averaged over fewer than K live cohorts."""
