"""Subject records, array-backed datasets, and the dataset CSV format.

A dataset CSV has one header row: the covariate columns in schema order,
then ``time``, ``event_type``, ``event``.  Event types are 1-based for
observed events; censored rows carry event_type 0.  Floats are rendered
with 17 significant digits so emit/ingest round-trips are exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DatasetNotFoundError

NUMERIC = "numeric"
BOOLEAN = "boolean"
CATEGORICAL = "categorical"

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    cardinality: int = 0

    def __post_init__(self):
        if self.kind not in (NUMERIC, BOOLEAN, CATEGORICAL):
            raise ConfigError(f"unknown column kind {self.kind!r}")
        if self.kind == CATEGORICAL and self.cardinality < 1:
            raise ConfigError(f"categorical column {self.name!r} needs a cardinality >= 1")


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple[ColumnSpec, ...]
    event_count: int = 1
    time_column: str = "time"
    event_type_column: str = "event_type"
    event_column: str = "event"

    def __post_init__(self):
        if self.event_count < 1:
            raise ConfigError("event_count must be >= 1")
        names = [c.name for c in self.columns] + [
            self.time_column,
            self.event_type_column,
            self.event_column,
        ]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate column names in schema")

    @property
    def header(self) -> list[str]:
        return [c.name for c in self.columns] + [
            self.time_column,
            self.event_type_column,
            self.event_column,
        ]

    def numeric_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == NUMERIC]

    def boolean_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == BOOLEAN]

    def categorical_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind == CATEGORICAL]


@dataclass(frozen=True)
class SurvivalRecord:
    """One subject: covariate blocks, observation time, event type, indicator."""

    numeric: np.ndarray
    boolean: np.ndarray
    categorical: np.ndarray
    time: float
    event_type: int
    event: int


@dataclass
class Dataset:
    numeric: np.ndarray  # (n, d_num) float64
    boolean: np.ndarray  # (n, d_bool) float64 in {0, 1}
    categorical: np.ndarray  # (n, d_cat) int64
    time: np.ndarray  # (n,) float64
    event_type: np.ndarray  # (n,) int64, 1..J when event == 1, else 0
    event: np.ndarray  # (n,) int64 in {0, 1}
    event_count: int = 1
    _sorted_times: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.numeric = np.atleast_2d(np.asarray(self.numeric, dtype=np.float64))
        self.boolean = np.atleast_2d(np.asarray(self.boolean, dtype=np.float64))
        self.categorical = np.atleast_2d(np.asarray(self.categorical, dtype=np.int64))
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event_type = np.asarray(self.event_type, dtype=np.int64)
        self.event = np.asarray(self.event, dtype=np.int64)
        n = self.time.shape[0]
        for name in ("numeric", "boolean", "categorical"):
            block = getattr(self, name)
            if block.shape[0] != n:
                if block.size == 0:
                    setattr(self, name, np.zeros((n, 0), dtype=block.dtype))
                else:
                    raise DataError(f"{name} block row count does not match times")
        if not np.all(np.isfinite(self.time)) or np.any(self.time < 0.0):
            raise DataError("observation times must be finite and nonnegative")
        if not np.all((self.event == 0) | (self.event == 1)):
            raise DataError("event indicator must be 0 or 1")
        observed = self.event == 1
        if np.any((self.event_type[observed] < 1) | (self.event_type[observed] > self.event_count)):
            raise DataError(f"event types of observed events must lie in 1..{self.event_count}")

    @property
    def n(self) -> int:
        return int(self.time.shape[0])

    def subset(self, idx) -> "Dataset":
        return Dataset(
            numeric=self.numeric[idx],
            boolean=self.boolean[idx],
            categorical=self.categorical[idx],
            time=self.time[idx],
            event_type=self.event_type[idx],
            event=self.event[idx],
            event_count=self.event_count,
        )

    def covariates(self):
        return self.numeric, self.boolean, self.categorical

    def sorted_times(self) -> np.ndarray:
        if self._sorted_times is None:
            self._sorted_times = np.sort(self.time)
        return self._sorted_times

    def risk_counts(self, times) -> np.ndarray:
        """Number of subjects with observation time >= each query time."""
        st = self.sorted_times()
        return self.n - np.searchsorted(st, np.asarray(times, dtype=np.float64), side="left")

    def records(self):
        for i in range(self.n):
            yield SurvivalRecord(
                numeric=self.numeric[i],
                boolean=self.boolean[i],
                categorical=self.categorical[i],
                time=float(self.time[i]),
                event_type=int(self.event_type[i]),
                event=int(self.event[i]),
            )

    @classmethod
    def from_records(cls, records, event_count: int = 1) -> "Dataset":
        records = list(records)
        if not records:
            raise DataError("cannot build a dataset from zero records")
        return cls(
            numeric=np.stack([r.numeric for r in records]),
            boolean=np.stack([r.boolean for r in records]),
            categorical=np.stack([r.categorical for r in records]),
            time=np.asarray([r.time for r in records]),
            event_type=np.asarray([r.event_type for r in records]),
            event=np.asarray([r.event for r in records]),
            event_count=event_count,
        )


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}, column {column!r}: not a number: {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"line {line}, column {column!r}: non-finite value")
    return value


def _parse_int(text: str, line: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"line {line}, column {column!r}: not an integer: {text!r}") from None


def read_csv(path, schema: DatasetSchema) -> Dataset:
    """Parse and validate a dataset CSV against ``schema``."""
    path = Path(path)
    if not path.exists():
        raise DatasetNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != schema.header:
            raise DataError(f"{path}: header {header!r} does not match schema {schema.header!r}")
        cat_specs = schema.categorical_columns()
        num_names = schema.numeric_names()
        bool_names = schema.boolean_names()
        col_index = {name: i for i, name in enumerate(schema.header)}

        numeric, boolean, categorical = [], [], []
        times, etypes, events = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(schema.header):
                raise DataError(f"line {lineno}: expected {len(schema.header)} fields, got {len(row)}")
            numeric.append([_parse_float(row[col_index[c]], lineno, c) for c in num_names])
            brow = []
            for c in bool_names:
                v = _parse_int(row[col_index[c]], lineno, c)
                if v not in (0, 1):
                    raise DataError(f"line {lineno}, column {c!r}: boolean must be 0 or 1")
                brow.append(float(v))
            boolean.append(brow)
            crow = []
            for c in cat_specs:
                v = _parse_int(row[col_index[c.name]], lineno, c.name)
                if not (0 <= v < c.cardinality):
                    raise DataError(
                        f"line {lineno}, column {c.name!r}: unknown categorical level {v} "
                        f"(cardinality {c.cardinality})"
                    )
                crow.append(v)
            categorical.append(crow)
            t = _parse_float(row[col_index[schema.time_column]], lineno, schema.time_column)
            if t < 0.0:
                raise DataError(f"line {lineno}, column {schema.time_column!r}: negative time")
            times.append(t)
            e = _parse_int(row[col_index[schema.event_column]], lineno, schema.event_column)
            if e not in (0, 1):
                raise DataError(f"line {lineno}, column {schema.event_column!r}: event must be 0 or 1")
            events.append(e)
            j = _parse_int(row[col_index[schema.event_type_column]], lineno, schema.event_type_column)
            if e == 1 and not (1 <= j <= schema.event_count):
                raise DataError(
                    f"line {lineno}, column {schema.event_type_column!r}: event type {j} "
                    f"outside 1..{schema.event_count}"
                )
            etypes.append(j if e == 1 else 0)
    if not times:
        raise DataError(f"{path}: no data rows")
    n = len(times)
    return Dataset(
        numeric=np.asarray(numeric) if num_names else np.zeros((n, 0)),
        boolean=np.asarray(boolean) if bool_names else np.zeros((n, 0)),
        categorical=np.asarray(categorical, dtype=np.int64) if cat_specs else np.zeros((n, 0), dtype=np.int64),
        time=np.asarray(times),
        event_type=np.asarray(etypes),
        event=np.asarray(events),
        event_count=schema.event_count,
    )


def write_csv(path, dataset: Dataset, schema: DatasetSchema) -> None:
    num_names = schema.numeric_names()
    bool_names = schema.boolean_names()
    cat_specs = schema.categorical_columns()
    if dataset.numeric.shape[1] != len(num_names):
        raise DataError("dataset numeric width does not match schema")
    if dataset.boolean.shape[1] != len(bool_names):
        raise DataError("dataset boolean width does not match schema")
    if dataset.categorical.shape[1] != len(cat_specs):
        raise DataError("dataset categorical width does not match schema")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.header)
        for i in range(dataset.n):
            row = [FLOAT_FMT % v for v in dataset.numeric[i]]
            row += [str(int(v)) for v in dataset.boolean[i]]
            row += [str(int(v)) for v in dataset.categorical[i]]
            row.append(FLOAT_FMT % dataset.time[i])
            row.append(str(int(dataset.event_type[i])))
            row.append(str(int(dataset.event[i])))
            writer.writerow(row)
