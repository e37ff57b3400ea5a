"""Validated long-format observation tables for longitudinal categorical counts.

The native observation unit is a count vector: one row per (subject, week)
holding how often each behaviour category was recorded.  A single draw is
the special case of a count vector with total 1, so event-level and
count-level files load into the same structure.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .errors import ConsistencyError, DataError, SchemaError

_RESERVED_COLUMNS = ("subject", "week", "category")


@dataclass(frozen=True)
class FactorDef:
    """A categorical design factor with an ordered level set.

    The reference level carries no coefficient under dummy coding; by
    default it is the first level.
    """

    name: str
    levels: tuple[str, ...]
    reference: int = 0

    def __post_init__(self):
        if not self.levels:
            raise SchemaError(f"factor {self.name!r} has no levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"factor {self.name!r} has duplicate levels")
        if not 0 <= self.reference < len(self.levels):
            raise SchemaError(
                f"factor {self.name!r}: reference index {self.reference} out of range"
            )

    @property
    def reference_level(self) -> str:
        return self.levels[self.reference]

    def nonreference_levels(self) -> tuple[str, ...]:
        return tuple(l for i, l in enumerate(self.levels) if i != self.reference)


@dataclass(frozen=True)
class CategorySet:
    """The ordered response categories and the baseline used for log-odds."""

    labels: tuple[str, ...]
    reference: int = 0

    def __post_init__(self):
        if len(self.labels) < 2:
            raise SchemaError("need at least two categories")
        if len(set(self.labels)) != len(self.labels):
            raise SchemaError("duplicate category labels")
        if not 0 <= self.reference < len(self.labels):
            raise SchemaError(f"category reference index {self.reference} out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def reference_label(self) -> str:
        return self.labels[self.reference]

    def nonreference_labels(self) -> tuple[str, ...]:
        return tuple(l for i, l in enumerate(self.labels) if i != self.reference)


@dataclass(frozen=True)
class Observation:
    """Counts over all categories for one subject in one week."""

    subject: str
    week: str
    levels: tuple[str, ...]
    counts: tuple[int, ...]


@dataclass(frozen=True)
class ObservationTable:
    """Immutable validated panel of categorical counts.

    Rows are stored in canonical (subject, week) index order.  Missing
    (subject, week) pairs are allowed; a subject's factor assignment must
    be constant across its weeks.
    """

    subjects: tuple[str, ...]
    weeks: tuple[str, ...]
    factors: tuple[FactorDef, ...]
    categories: CategorySet
    rows: tuple[Observation, ...]

    def __post_init__(self):
        self._validate()

    def _validate(self):
        n_cat = len(self.categories)
        subj_index = {s: i for i, s in enumerate(self.subjects)}
        week_index = {w: i for i, w in enumerate(self.weeks)}
        if len(subj_index) != len(self.subjects):
            raise DataError("duplicate subject identifiers")
        if len(week_index) != len(self.weeks):
            raise DataError("duplicate week labels")
        seen: set[tuple[str, str]] = set()
        assignment: dict[str, tuple[str, ...]] = {}
        for row in self.rows:
            if row.subject not in subj_index:
                raise DataError(f"row references undeclared subject {row.subject!r}")
            if row.week not in week_index:
                raise DataError(f"row references undeclared week {row.week!r}")
            key = (row.subject, row.week)
            if key in seen:
                raise DataError(f"duplicate (subject, week) pair {key}")
            seen.add(key)
            if len(row.levels) != len(self.factors):
                raise DataError(f"row {key}: expected {len(self.factors)} factor values")
            for fac, lev in zip(self.factors, row.levels):
                if lev not in fac.levels:
                    raise DataError(
                        f"row {key}: level {lev!r} not declared for factor {fac.name!r}"
                    )
            if len(row.counts) != n_cat:
                raise DataError(f"row {key}: expected {n_cat} counts")
            if any((not isinstance(c, int)) or c < 0 for c in row.counts):
                raise DataError(f"row {key}: counts must be non-negative integers")
            if sum(row.counts) < 1:
                raise DataError(f"row {key}: count vector is all zero")
            prior = assignment.setdefault(row.subject, row.levels)
            if prior != row.levels:
                raise ConsistencyError(
                    f"subject {row.subject!r} has conflicting factor assignments "
                    f"{prior} vs {row.levels}"
                )

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def subject_index(self, subject: str) -> int:
        return self.subjects.index(subject)

    def week_index(self, week: str) -> int:
        return self.weeks.index(week)

    def factor(self, name: str) -> FactorDef:
        for fac in self.factors:
            if fac.name == name:
                return fac
        raise SchemaError(f"unknown factor {name!r}")

    def fingerprint(self) -> str:
        """Content digest, invariant to input row order and label ordering."""
        payload = {
            "factors": sorted(
                (f.name, list(f.levels), f.reference) for f in self.factors
            ),
            "categories": [list(self.categories.labels), self.categories.reference],
            "rows": sorted(
                (r.subject, r.week, list(r.levels), list(r.counts)) for r in self.rows
            ),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def iter_events(self) -> Iterator[tuple[str, str, tuple[str, ...], str]]:
        """Explode counts back into one tuple per recorded event."""
        for row in self.rows:
            for label, count in zip(self.categories.labels, row.counts):
                for _ in range(count):
                    yield row.subject, row.week, row.levels, label


@dataclass(frozen=True)
class ContingencyTable:
    """Counts aggregated to group x category, for association analyses."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    matrix: np.ndarray = field(compare=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (len(self.row_labels), len(self.col_labels)):
            raise DataError("contingency matrix shape does not match labels")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class Schema:
    """Optional declarations pinning column names, level orders and coding."""

    columns: dict[str, str] = field(default_factory=dict)
    factors: tuple[FactorDef, ...] | None = None
    categories: CategorySet | None = None
    weeks: tuple[str, ...] | None = None

    def column(self, logical: str) -> str:
        return self.columns.get(logical, logical)

    @staticmethod
    def from_json(text: str) -> "Schema":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema file is not valid JSON: {exc}") from exc
        columns = dict(raw.get("columns", {}))
        factors = None
        if "factors" in raw:
            defs = []
            for spec in raw["factors"]:
                name = spec["name"]
                levels = tuple(spec.get("levels", ()))
                if not levels:
                    raise SchemaError(f"schema factor {name!r} must list its levels")
                ref_label = spec.get("reference", levels[0])
                if ref_label not in levels:
                    raise SchemaError(
                        f"schema factor {name!r}: reference {ref_label!r} not a level"
                    )
                defs.append(FactorDef(name, levels, levels.index(ref_label)))
            factors = tuple(defs)
        categories = None
        if "categories" in raw:
            spec = raw["categories"]
            labels = tuple(spec["labels"])
            ref_label = spec.get("reference", labels[0])
            if ref_label not in labels:
                raise SchemaError(f"schema category reference {ref_label!r} not a label")
            categories = CategorySet(labels, labels.index(ref_label))
        weeks = tuple(raw["weeks"]) if "weeks" in raw else None
        return Schema(columns=columns, factors=factors, categories=categories, weeks=weeks)

    def to_json(self) -> str:
        raw: dict = {}
        if self.columns:
            raw["columns"] = dict(self.columns)
        if self.factors is not None:
            raw["factors"] = [
                {"name": f.name, "levels": list(f.levels), "reference": f.reference_level}
                for f in self.factors
            ]
        if self.categories is not None:
            raw["categories"] = {
                "labels": list(self.categories.labels),
                "reference": self.categories.reference_label,
            }
        if self.weeks is not None:
            raw["weeks"] = list(self.weeks)
        return json.dumps(raw, indent=2, sort_keys=True) + "\n"


def _order_weeks(seen: Sequence[str], schema: Schema) -> tuple[str, ...]:
    # Schema pin wins; otherwise numeric sort when every label is an integer,
    # else first-appearance order.
    if schema.weeks is not None:
        missing = [w for w in seen if w not in schema.weeks]
        if missing:
            raise DataError(f"week {missing[0]!r} not declared in schema")
        return tuple(w for w in schema.weeks if w in set(seen))
    try:
        return tuple(sorted(set(seen), key=lambda w: (int(w), w)))
    except ValueError:
        out: list[str] = []
        for w in seen:
            if w not in out:
                out.append(w)
        return tuple(out)


class _TableBuilder:
    """Accumulates per-(subject, week) counts and resolves orderings."""

    def __init__(self, schema: Schema, factor_names: Sequence[str]):
        self.schema = schema
        self.factor_names = list(factor_names)
        if schema.factors is not None:
            declared = [f.name for f in schema.factors]
            unknown = [n for n in declared if n not in self.factor_names]
            if unknown:
                raise SchemaError(f"missing column for declared factor {unknown[0]!r}")
        self.level_order: dict[str, list[str]] = {n: [] for n in self.factor_names}
        self.category_order: list[str] = []
        self.subject_order: list[str] = []
        self.week_seen: list[str] = []
        self.assignment: dict[str, tuple[str, ...]] = {}
        self.counts: dict[tuple[str, str], dict[str, int]] = {}

    def _declared_factor(self, name: str) -> FactorDef | None:
        if self.schema.factors is None:
            return None
        for f in self.schema.factors:
            if f.name == name:
                return f
        return None

    def add(self, subject: str, week: str, levels: tuple[str, ...],
            counts_by_label: dict[str, int], line: int):
        for name, lev in zip(self.factor_names, levels):
            declared = self._declared_factor(name)
            if declared is not None:
                if lev not in declared.levels:
                    raise DataError(
                        f"line {line}: level {lev!r} not declared for factor {name!r}"
                    )
            elif lev not in self.level_order[name]:
                self.level_order[name].append(lev)
        if self.schema.categories is not None:
            for label in counts_by_label:
                if label not in self.schema.categories.labels:
                    raise DataError(f"line {line}: unknown category {label!r}")
        else:
            for label in counts_by_label:
                if label not in self.category_order:
                    self.category_order.append(label)
        if subject not in self.assignment:
            self.assignment[subject] = levels
            self.subject_order.append(subject)
        elif self.assignment[subject] != levels:
            raise ConsistencyError(
                f"line {line}: subject {subject!r} changes factor assignment from "
                f"{self.assignment[subject]} to {levels}"
            )
        self.week_seen.append(week)
        cell = self.counts.setdefault((subject, week), {})
        for label, c in counts_by_label.items():
            cell[label] = cell.get(label, 0) + c

    def build(self) -> ObservationTable:
        if not self.counts:
            raise DataError("no data rows")
        if self.schema.categories is not None:
            categories = self.schema.categories
        else:
            categories = CategorySet(tuple(self.category_order), 0)
        factors = []
        for name in self.factor_names:
            declared = self._declared_factor(name)
            factors.append(declared if declared is not None
                           else FactorDef(name, tuple(self.level_order[name]), 0))
        weeks = _order_weeks(self.week_seen, self.schema)
        subjects = tuple(self.subject_order)
        subj_idx = {s: i for i, s in enumerate(subjects)}
        week_idx = {w: i for i, w in enumerate(weeks)}
        rows = []
        for (subject, week), cell in self.counts.items():
            counts = tuple(int(cell.get(label, 0)) for label in categories.labels)
            rows.append(Observation(subject, week, self.assignment[subject], counts))
        rows.sort(key=lambda r: (subj_idx[r.subject], week_idx[r.week]))
        return ObservationTable(subjects, weeks, tuple(factors), categories, tuple(rows))


def _open_reader(stream) -> csv.DictReader:
    if isinstance(stream, (io.RawIOBase, io.BufferedIOBase)):
        stream = io.TextIOWrapper(stream, encoding="utf-8")
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        raise SchemaError("CSV stream has no header")
    return reader


def _require_columns(reader: csv.DictReader, names: Iterable[str]):
    header = reader.fieldnames or []
    for name in names:
        if name not in header:
            raise SchemaError(f"missing column {name!r}")


def load_events(stream: TextIO, schema: Schema | None = None) -> ObservationTable:
    """Load a one-row-per-event CSV into a validated table.

    Expected columns: subject, week, one column per factor, category.  Any
    column that is not mapped to subject/week/category is treated as a
    factor, in header order.  Events for the same (subject, week) aggregate
    into one count vector.
    """
    schema = schema or Schema()
    reader = _open_reader(stream)
    subj_col = schema.column("subject")
    week_col = schema.column("week")
    cat_col = schema.column("category")
    _require_columns(reader, [subj_col, week_col, cat_col])
    factor_cols = [c for c in reader.fieldnames if c not in (subj_col, week_col, cat_col)]
    if schema.factors is not None:
        declared = [f.name for f in schema.factors]
        for name in declared:
            if name not in factor_cols:
                raise SchemaError(f"missing column {name!r}")
        factor_cols = declared
    builder = _TableBuilder(schema, factor_cols)
    for line, rec in enumerate(reader, start=2):
        levels = tuple(_cell(rec, c, line) for c in factor_cols)
        label = _cell(rec, cat_col, line)
        builder.add(_cell(rec, subj_col, line), _cell(rec, week_col, line),
                    levels, {label: 1}, line)
    return builder.build()


def load_counts(stream: TextIO, schema: Schema) -> ObservationTable:
    """Load a one-row-per-(subject, week) CSV with one count column per category.

    The schema must declare the categories so count columns can be told
    apart from factor columns.
    """
    if schema is None or schema.categories is None:
        raise SchemaError("counts format requires a schema declaring the categories")
    reader = _open_reader(stream)
    subj_col = schema.column("subject")
    week_col = schema.column("week")
    cat_cols = list(schema.categories.labels)
    _require_columns(reader, [subj_col, week_col, *cat_cols])
    factor_cols = [c for c in reader.fieldnames
                   if c not in (subj_col, week_col, *cat_cols)]
    if schema.factors is not None:
        declared = [f.name for f in schema.factors]
        for name in declared:
            if name not in factor_cols:
                raise SchemaError(f"missing column {name!r}")
        factor_cols = declared
    builder = _TableBuilder(schema, factor_cols)
    seen: set[tuple[str, str]] = set()
    for line, rec in enumerate(reader, start=2):
        subject = _cell(rec, subj_col, line)
        week = _cell(rec, week_col, line)
        if (subject, week) in seen:
            raise DataError(f"line {line}: duplicate (subject, week) pair "
                            f"({subject!r}, {week!r})")
        seen.add((subject, week))
        levels = tuple(_cell(rec, c, line) for c in factor_cols)
        counts = {}
        for label in cat_cols:
            raw = _cell(rec, label, line)
            try:
                value = int(raw)
            except ValueError:
                raise DataError(f"line {line}: count {raw!r} is not an integer") from None
            if value < 0:
                raise DataError(f"line {line}: negative count {value} for {label!r}")
            counts[label] = value
        if sum(counts.values()) < 1:
            raise DataError(f"line {line}: count vector is all zero")
        builder.add(subject, week, levels, counts, line)
    return builder.build()


def _cell(rec: dict, column: str, line: int) -> str:
    value = rec.get(column)
    if value is None or value == "":
        raise DataError(f"line {line}: empty value in column {column!r}")
    return value.strip()


def contingency(table: ObservationTable, by: Sequence[str]) -> ContingencyTable:
    """Aggregate counts to (factor level combination) x category.

    Group rows follow the cross-product order of the declared level orders;
    combinations with no observations are dropped so unbalanced designs do
    not produce zero margins.
    """
    if not by:
        raise SchemaError("grouping spec must name at least one factor")
    facs = [table.factor(name) for name in by]
    positions = [table.factors.index(f) for f in facs]
    combos: list[tuple[str, ...]] = [()]
    for fac in facs:
        combos = [c + (lev,) for c in combos for lev in fac.levels]
    index = {c: i for i, c in enumerate(combos)}
    n_cat = table.n_categories
    matrix = np.zeros((len(combos), n_cat))
    for row in table.rows:
        key = tuple(row.levels[p] for p in positions)
        matrix[index[key]] += np.asarray(row.counts)
    keep = matrix.sum(axis=1) > 0
    labels = tuple(":".join(c) for c, k in zip(combos, keep) if k)
    return ContingencyTable(labels, table.categories.labels, matrix[keep])


def write_counts_csv(table: ObservationTable, stream: TextIO):
    """Emit the table in the counts-CSV layout (canonical row order)."""
    writer = csv.writer(stream, lineterminator="\n")
    header = ["subject", "week", *[f.name for f in table.factors],
              *table.categories.labels]
    writer.writerow(header)
    for row in table.rows:
        writer.writerow([row.subject, row.week, *row.levels, *row.counts])


def schema_for(table: ObservationTable) -> Schema:
    """A schema that pins this table's orderings, for lossless reload."""
    return Schema(factors=table.factors, categories=table.categories,
                  weeks=table.weeks)
