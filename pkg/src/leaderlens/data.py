"""Snapshot ingestion and the analysis table the whole pipeline runs on.

A snapshot is a CSV or JSON-lines export of a leaderboard results table:
one row per model with its parameter count (billions), training type,
architecture string and one score column per benchmark.  Parsing derives
the categorical factors used downstream (architecture family, parameter
bracket, normalized training type) and keeps an audit trail of rows it had
to drop or skip.

Scores live on the 0..100 percent scale.  A table whose score values all
sit in [0, 1.5] is taken to be fraction-scaled and multiplied by 100, with
a warning recorded in the table metadata.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .schema import (
    BenchmarkSchema,
    DEFAULT_SCHEMA,
    OPTIONAL_META,
    map_architecture,
    normalize_training_type,
)


class MissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"snapshot is missing required column {name!r}")
        self.name = name


class EmptySnapshot(DataError):
    pass


class FormatError(DataError):
    def __init__(self, line: int, detail: str):
        super().__init__(f"line {line}: {detail}")
        self.line = line


class NonPositiveParameter(DataError):
    pass


class UnknownColumn(DataError):
    pass


class EmptyColumn(DataError):
    pass


class DegenerateFactor(DataError):
    pass


@dataclass(frozen=True)
class ParamBracket:
    """Half-open model-size bin in billions of parameters."""

    label: str
    lower: float
    upper: float  # exclusive; inf for the open-ended top bracket

    def contains(self, params_b: float) -> bool:
        return self.lower <= params_b < self.upper


PARAM_BRACKETS: tuple[ParamBracket, ...] = (
    ParamBracket("[0,1.5)", 0.0, 1.5),
    ParamBracket("[1.5,3)", 1.5, 3.0),
    ParamBracket("[3,7)", 3.0, 7.0),
    ParamBracket("[7,13)", 7.0, 13.0),
    ParamBracket("[13,35)", 13.0, 35.0),
    ParamBracket("[35,inf)", 35.0, math.inf),
)


def assign_param_bracket(params_b: float) -> ParamBracket:
    """The unique bracket containing ``params_b``; lower edges inclusive."""
    if not params_b > 0.0:
        raise NonPositiveParameter(f"params_b must be > 0, got {params_b}")
    for bracket in PARAM_BRACKETS:
        if bracket.contains(params_b):
            return bracket
    raise NonPositiveParameter(f"params_b not finite: {params_b}")


@dataclass(frozen=True)
class ModelRecord:
    """One leaderboard row after validation and factor derivation."""

    name: str
    params_b: float
    training_type: str
    architecture_raw: str
    arch_category: str
    scores: dict[str, float]  # benchmark -> score in [0,100]; NaN = missing
    precision: str | None = None
    license: str | None = None


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    median: float
    sd: float
    min: float
    max: float
    quantiles: dict[float, float]


@dataclass(frozen=True)
class AnalysisTable:
    """Immutable column-oriented view over parsed records.

    ``derived`` holds columns added after ingest (log transforms); ``weights``
    default to 1.0 until a balancing pass replaces them.  ``metadata`` keeps
    the ingest audit trail (drop/skip counts, row errors, warnings).
    """

    records: tuple[ModelRecord, ...]
    schema: BenchmarkSchema
    derived: dict[str, np.ndarray] = field(default_factory=dict)
    weights: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", np.ones(len(self.records)))
        if np.any(np.asarray(self.weights) <= 0.0):
            raise DataError("weights must be strictly positive")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n(self) -> int:
        return len(self.records)

    def column_names(self) -> tuple[str, ...]:
        base = ("model", "params_b", "type", "architecture", "arch_category",
                "param_bracket")
        return base + self.schema.benchmark_names + tuple(sorted(self.derived))

    def column(self, name: str) -> np.ndarray:
        """Fetch any column as an array; floats use NaN as missing marker."""
        if name in self.derived:
            return self.derived[name]
        if name in ("model", "name"):
            return np.array([r.name for r in self.records], dtype=object)
        if name == "params_b":
            return np.array([r.params_b for r in self.records])
        if name in ("type", "training_type"):
            return np.array([r.training_type for r in self.records], dtype=object)
        if name == "architecture":
            return np.array([r.architecture_raw for r in self.records], dtype=object)
        if name == "arch_category":
            return np.array([r.arch_category for r in self.records], dtype=object)
        if name == "param_bracket":
            return np.array([assign_param_bracket(r.params_b).label
                             for r in self.records], dtype=object)
        if name in self.schema.benchmark_names:
            return np.array([r.scores.get(name, math.nan) for r in self.records])
        raise UnknownColumn(f"no column {name!r} in table")

    def numeric_column(self, name: str) -> np.ndarray:
        col = self.column(name)
        if col.dtype == object:
            raise UnknownColumn(f"column {name!r} is categorical, not numeric")
        return col

    def missing_mask(self, name: str) -> np.ndarray:
        """True where the column value is missing for a record."""
        col = self.column(name)
        if col.dtype == object:
            return np.zeros(len(self.records), dtype=bool)
        return np.isnan(col)

    def with_derived(self, name: str, values: np.ndarray) -> "AnalysisTable":
        if len(values) != len(self.records):
            raise DataError(
                f"derived column {name!r} has {len(values)} values for "
                f"{len(self.records)} records")
        new = dict(self.derived)
        new[name] = np.asarray(values)
        return replace(self, derived=new)

    def with_weights(self, weights: np.ndarray) -> "AnalysisTable":
        return replace(self, weights=np.asarray(weights, dtype=float))


def _coerce_float(text) -> float:
    """Parse a numeric cell; empty means missing; garbage raises ValueError."""
    if text is None:
        return math.nan
    if isinstance(text, (int, float)):
        return float(text)
    stripped = text.strip()
    if not stripped or stripped.lower() in ("na", "nan", "none", "null"):
        return math.nan
    return float(stripped)


def _rows_from_csv(text: str, schema: BenchmarkSchema):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptySnapshot("snapshot has no header row") from None
    header = [h.strip() for h in header]
    index = {h: i for i, h in enumerate(header)}
    for col in schema.required_meta + schema.benchmark_names:
        if col not in index:
            raise MissingColumn(col)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise FormatError(lineno, f"expected {len(header)} fields, got {len(row)}")
        rows.append((lineno, {h: row[index[h]] for h in header}))
    return rows


def _rows_from_jsonl(text: str, schema: BenchmarkSchema):
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(lineno, f"invalid JSON object: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise FormatError(lineno, "each line must hold a JSON object")
        rows.append((lineno, obj))
    return rows


def parse_snapshot(raw: bytes | str, format: str = "csv",
                   schema: BenchmarkSchema = DEFAULT_SCHEMA,
                   arch_rules=None) -> AnalysisTable:
    """Parse a snapshot byte stream into an AnalysisTable.

    Rows with non-positive parameter counts are dropped (counted separately);
    rows with unparseable or out-of-range numeric cells are skipped with a
    per-row error entry.  Structural damage (undecodable bytes, ragged CSV
    rows, broken JSON lines) raises FormatError instead.
    """
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(0, f"snapshot is not valid UTF-8: {exc}") from exc
    else:
        text = raw

    if format == "csv":
        rows = _rows_from_csv(text, schema)
    elif format == "json-lines":
        rows = _rows_from_jsonl(text, schema)
    else:
        raise DataError(f"unknown snapshot format {format!r}")

    if not rows:
        raise EmptySnapshot("snapshot contains no data rows")

    errors: list[str] = []
    warnings: list[str] = []
    n_dropped_zero = 0
    n_skipped = 0
    parsed = []
    for lineno, cells in rows:
        missing_meta = [c for c in schema.required_meta if c not in cells]
        if missing_meta:
            n_skipped += 1
            errors.append(f"line {lineno}: missing keys {missing_meta}")
            continue
        try:
            params_b = _coerce_float(cells.get("params_b"))
        except ValueError:
            n_skipped += 1
            errors.append(f"line {lineno}: unparseable params_b "
                          f"{cells.get('params_b')!r}")
            continue
        if math.isnan(params_b) or params_b <= 0.0:
            n_dropped_zero += 1
            continue
        scores = {}
        bad_cell = None
        for bench in schema.benchmark_names:
            try:
                scores[bench] = _coerce_float(cells.get(bench))
            except ValueError:
                bad_cell = (bench, cells.get(bench))
                break
        if bad_cell is not None:
            n_skipped += 1
            errors.append(f"line {lineno}: unparseable {bad_cell[0]} "
                          f"value {bad_cell[1]!r}")
            continue
        parsed.append((lineno, cells, params_b, scores))

    if not parsed and not n_dropped_zero and not n_skipped:
        raise EmptySnapshot("snapshot contains no data rows")

    # Scale detection runs on the whole table, not per cell: a snapshot with
    # every score in [0, 1.5] is fraction-scaled.
    finite = [v for _, _, _, scores in parsed for v in scores.values()
              if not math.isnan(v)]
    scale_normalized = False
    if finite and max(finite) <= 1.5 and min(finite) >= 0.0:
        scale_normalized = True
        warnings.append(
            "scores look fraction-scaled (all in [0, 1.5]); multiplied by 100")
        for _, _, _, scores in parsed:
            for bench in list(scores):
                if not math.isnan(scores[bench]):
                    scores[bench] *= 100.0

    records = []
    for lineno, cells, params_b, scores in parsed:
        out_of_range = [(b, v) for b, v in scores.items()
                        if not math.isnan(v) and not 0.0 <= v <= 100.0]
        if out_of_range:
            n_skipped += 1
            bench, value = out_of_range[0]
            errors.append(f"line {lineno}: {bench} score {value} outside [0, 100]")
            continue
        raw_arch = str(cells.get("architecture") or "").strip()
        optional = {k: (str(cells[k]).strip() or None)
                    for k in OPTIONAL_META if cells.get(k) is not None}
        records.append(ModelRecord(
            name=str(cells.get("model") or "").strip(),
            params_b=params_b,
            training_type=normalize_training_type(
                None if cells.get("type") is None else str(cells.get("type"))),
            architecture_raw=raw_arch,
            arch_category=map_architecture(raw_arch, arch_rules),
            scores=scores,
            precision=optional.get("precision"),
            license=optional.get("license"),
        ))

    if not records:
        raise EmptySnapshot(
            f"no valid records: {n_dropped_zero} dropped (params_b <= 0), "
            f"{n_skipped} skipped")

    metadata = {
        "format": format,
        "schema": schema.name,
        "n_input_rows": len(rows),
        "n_records": len(records),
        "n_dropped_zero_params": n_dropped_zero,
        "n_skipped": n_skipped,
        "scale_normalized": scale_normalized,
        "errors": errors,
        "warnings": warnings,
    }
    return AnalysisTable(records=tuple(records), schema=schema, metadata=metadata)


def transform_column(table: AnalysisTable, source: str,
                     policy: str = "log-exclude-nonpositive",
                     epsilon: float = 0.5) -> AnalysisTable:
    """Add a natural-log column ``log_<source>``.

    Under ``log-exclude-nonpositive`` a value <= 0 becomes a missing marker,
    so later fits on the log column simply drop those records.  Under
    ``log-offset`` every value maps to ln(value + epsilon).
    """
    values = table.numeric_column(source)
    out = np.full(len(values), math.nan)
    if policy == "log-exclude-nonpositive":
        ok = ~np.isnan(values) & (values > 0.0)
        out[ok] = np.log(values[ok])
    elif policy == "log-offset":
        if not epsilon > 0.0:
            raise DataError(f"log-offset epsilon must be > 0, got {epsilon}")
        ok = ~np.isnan(values)
        out[ok] = np.log(values[ok] + epsilon)
    else:
        raise DataError(f"unknown transform policy {policy!r}")
    return table.with_derived(f"log_{source}", out)


def summary_stats(table: AnalysisTable, column: str,
                  quantiles: tuple[float, ...] = (0.25, 0.5, 0.75)) -> SummaryStats:
    """Mean/median/sample-sd/min/max plus interpolated quantiles."""
    values = table.numeric_column(column)
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise EmptyColumn(f"column {column!r} has no non-missing values")
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return SummaryStats(
        mean=float(np.mean(values)),
        median=float(np.median(values)),
        sd=sd,
        min=float(np.min(values)),
        max=float(np.max(values)),
        quantiles={float(q): float(np.quantile(values, q)) for q in quantiles},
    )


def compute_balance_weights(table: AnalysisTable, factor: str) -> AnalysisTable:
    """Reweight records so each factor level carries equal total weight.

    A record in level c of size n_c gets weight (N/K)/n_c: level totals all
    equal N/K and the grand total stays N.
    """
    col = table.column(factor)
    if col.dtype != object:
        raise DegenerateFactor(f"column {factor!r} is numeric, not categorical")
    levels, counts = np.unique(col.astype(str), return_counts=True)
    if levels.size < 2:
        raise DegenerateFactor(
            f"factor {factor!r} has {levels.size} level(s); need >= 2")
    n = len(table)
    k = levels.size
    per_level = {lvl: (n / k) / cnt for lvl, cnt in zip(levels, counts)}
    weights = np.array([per_level[str(v)] for v in col])
    return table.with_weights(weights)
