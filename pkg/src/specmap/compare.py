"""Comparison of categorical maps whose legends differ.

Covers contingency-table construction, the eight-step hybrid harmonization
protocol (steps 1-7 data-driven, step 8 as an auditable human override
file) and the CVPAI2 association index of a binary legend relation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classify import NODATA, CategoricalMap, LegendEntry, auto_color, relabel
from .errors import (
    AmbiguousMappingError,
    ConfigError,
    DataError,
    DimensionMismatchError,
    FormatError,
    MappingError,
)


@dataclass(frozen=True)
class Override:
    """One expert decision on a relation cell, with its mandatory rationale."""

    test_label: str
    ref_label: str
    value: int
    note: str

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ConfigError(f"override value must be 0 or 1, got {self.value}")
        if not self.note.strip():
            raise ConfigError(
                f"override ({self.test_label}, {self.ref_label}) needs a note"
            )


@dataclass
class LegendRelation:
    """Binary correct-pair matrix between a test and a reference dictionary."""

    test_names: tuple[str, ...]
    ref_names: tuple[str, ...]
    matrix: np.ndarray  # (TC, RC) int8 in {0, 1}
    audit: tuple[Override, ...] = ()

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int8)
        self.test_names = tuple(self.test_names)
        self.ref_names = tuple(self.ref_names)
        if self.matrix.shape != (len(self.test_names), len(self.ref_names)):
            raise DimensionMismatchError(
                f"relation matrix {self.matrix.shape} does not match "
                f"dictionaries ({len(self.test_names)}, {len(self.ref_names)})"
            )
        if not np.isin(self.matrix, (0, 1)).all():
            raise DataError("relation entries must be binary")

    @property
    def correct_pairs(self) -> int:
        return int(self.matrix.sum())


@dataclass
class ContingencyTable:
    test_names: tuple[str, ...]
    ref_names: tuple[str, ...]
    counts: np.ndarray  # (TC, RC) int64

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.test_names = tuple(self.test_names)
        self.ref_names = tuple(self.ref_names)
        if self.counts.shape != (len(self.test_names), len(self.ref_names)):
            raise DimensionMismatchError(
                "counts shape does not match dictionary cardinalities"
            )
        if (self.counts < 0).any():
            raise DataError("contingency counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class HarmonizationTrace:
    """Matrices of protocol steps 1-7, thresholds, and the step-8 relation
    once overrides have been applied."""

    table: ContingencyTable
    th1: float
    th2: float
    joint: np.ndarray               # step 2: counts / N
    ref_given_test: np.ndarray      # step 3: p(r | t), rows
    kept_by_row: np.ndarray         # step 4: [p(r | t) >= TH1]
    test_given_ref: np.ndarray      # step 5: p(t | r), columns
    kept_by_col: np.ndarray         # step 6: [p(t | r) >= TH2]
    temporary: np.ndarray           # step 7: elementwise max (logical OR)
    final: "LegendRelation | None" = None  # step 8, set by apply_overrides


def build_contingency(
    test: CategoricalMap, reference: CategoricalMap
) -> ContingencyTable:
    """Count co-occurring (test label, reference label) pairs over valid pixels."""
    if test.labels.shape != reference.labels.shape:
        raise DimensionMismatchError("test and reference maps differ in shape")
    both = (test.labels != NODATA) & (reference.labels != NODATA)
    if not both.any():
        raise DataError("empty overlap: no pixel is valid in both maps")
    t_entries = test.legend
    r_entries = reference.legend
    t_index = np.zeros(max(e.label for e in t_entries) + 1, dtype=np.int64)
    for i, e in enumerate(t_entries):
        t_index[e.label] = i
    r_index = np.zeros(max(e.label for e in r_entries) + 1, dtype=np.int64)
    for i, e in enumerate(r_entries):
        r_index[e.label] = i
    tc, rc = len(t_entries), len(r_entries)
    cells = t_index[test.labels[both]] * rc + r_index[reference.labels[both]]
    counts = np.bincount(cells, minlength=tc * rc).reshape(tc, rc)
    return ContingencyTable(
        tuple(e.name for e in t_entries), tuple(e.name for e in r_entries), counts
    )


def harmonize(table: ContingencyTable, th1: float, th2: float) -> HarmonizationTrace:
    """Run protocol steps 2-7.

    A cell survives thresholding when its conditional probability is >= the
    threshold; rows or columns with zero marginals yield all-zero
    conditionals rather than errors.
    """
    if not (0.0 <= th2 <= th1 <= 1.0):
        raise ConfigError(f"need 0 <= TH2 <= TH1 <= 1, got TH1={th1}, TH2={th2}")
    n = table.total
    if n == 0:
        raise DataError("contingency table is empty (N = 0)")
    counts = table.counts.astype(np.float64)
    joint = counts / n
    row_marginal = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        ref_given_test = np.where(row_marginal > 0, counts / row_marginal, 0.0)
    col_marginal = counts.sum(axis=0, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        test_given_ref = np.where(col_marginal > 0, counts / col_marginal, 0.0)
    kept_by_row = (ref_given_test >= th1).astype(np.int8)
    kept_by_col = (test_given_ref >= th2).astype(np.int8)
    temporary = np.maximum(kept_by_row, kept_by_col)
    return HarmonizationTrace(
        table, th1, th2, joint, ref_given_test, kept_by_row,
        test_given_ref, kept_by_col, temporary,
    )


def apply_overrides(
    trace: HarmonizationTrace, overrides: Sequence[Override]
) -> LegendRelation:
    """Protocol step 8: expert decisions replace step-7 cells, audited."""
    test_names = trace.table.test_names
    ref_names = trace.table.ref_names
    matrix = trace.temporary.astype(np.int8).copy()
    seen: set[tuple[str, str]] = set()
    for ov in overrides:
        key = (ov.test_label, ov.ref_label)
        if key in seen:
            raise MappingError(f"duplicate override for cell {key}")
        seen.add(key)
        try:
            t = test_names.index(ov.test_label)
        except ValueError:
            raise MappingError(f"unknown test label {ov.test_label!r}") from None
        try:
            r = ref_names.index(ov.ref_label)
        except ValueError:
            raise MappingError(f"unknown reference label {ov.ref_label!r}") from None
        matrix[t, r] = ov.value
    trace.final = LegendRelation(test_names, ref_names, matrix, tuple(overrides))
    return trace.final


def cvpai2(rel: LegendRelation) -> float:
    """Association index of a binary relation, in [0, 1].

    Column sums contribute 1 when the reference class is covered at all;
    row sums contribute a Gaussian membership centered on one match per
    test class with spread RC / 3.  Zero relation scores 0; a relation that
    is a function covering every reference class scores exactly 1.
    """
    tc, rc = rel.matrix.shape
    if tc < 1 or rc < 1:
        raise DataError("relation must have at least one row and one column")
    col_sums = rel.matrix.sum(axis=0)
    row_sums = rel.matrix.sum(axis=1)
    f_rc = (col_sums > 0).astype(np.float64)
    stddev = rc / 3.0
    gauss = np.exp(-((row_sums - 1.0) ** 2) / (2.0 * stddev * stddev))
    f_tc = np.where(row_sums == 0, 0.0, gauss)
    return float((f_rc.sum() + f_tc.sum()) / (rc + tc))


# ---------------------------------------------------------------------------
# Legend translation (child -> parent over a different legend)
# ---------------------------------------------------------------------------


@dataclass
class LegendTranslation:
    mapping: dict[int, int]
    parent_legend: tuple[LegendEntry, ...]


@dataclass(frozen=True)
class MappingRow:
    child_label: int
    child_name: str
    parent_label: int
    parent_name: str


def translate_legend(cmap: CategoricalMap, translation: LegendTranslation) -> CategoricalMap:
    """Relabel a map onto the parent legend through a total function."""
    return CategoricalMap(
        relabel(cmap.labels, translation.mapping), translation.parent_legend
    )


def read_legend_mapping(path: Path | str) -> list[MappingRow]:
    """Read mapping rows; a child listed with several parents is ambiguous."""
    rows: list[MappingRow] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        needed = {"child_label", "child_name", "parent_label", "parent_name"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise FormatError(
                f"{path}: expected columns child_label,child_name,"
                "parent_label,parent_name"
            )
        for row in reader:
            rows.append(
                MappingRow(
                    int(row["child_label"]),
                    row["child_name"],
                    int(row["parent_label"]),
                    row["parent_name"],
                )
            )
    return rows


def read_resolution(path: Path | str) -> dict[int, int]:
    out: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {
            "child_label",
            "parent_label",
        } <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns child_label,parent_label")
        for row in reader:
            out[int(row["child_label"])] = int(row["parent_label"])
    return out


def build_translation(
    rows: Iterable[MappingRow], resolution: dict[int, int] | None = None
) -> LegendTranslation:
    """Collapse mapping rows into a total function.

    Children with several candidate parents must be decided by the
    resolution; otherwise AmbiguousMappingError lists them.
    """
    candidates: dict[int, dict[int, str]] = {}
    parent_names: dict[int, str] = {}
    for row in rows:
        candidates.setdefault(row.child_label, {})[row.parent_label] = row.parent_name
        parent_names[row.parent_label] = row.parent_name
    mapping: dict[int, int] = {}
    unresolved: list[int] = []
    for child, parents in candidates.items():
        if len(parents) == 1:
            mapping[child] = next(iter(parents))
        elif resolution is not None and child in resolution:
            pick = resolution[child]
            if pick not in parents:
                raise MappingError(
                    f"resolution maps child {child} to {pick}, which is not "
                    f"among its candidates {sorted(parents)}"
                )
            mapping[child] = pick
        else:
            unresolved.append(child)
    if unresolved:
        raise AmbiguousMappingError(unresolved)
    legend = tuple(
        LegendEntry(label, parent_names[label], auto_color(i))
        for i, label in enumerate(sorted(parent_names))
    )
    return LegendTranslation(mapping, legend)


# ---------------------------------------------------------------------------
# CSV I/O for tables, matrices, relations and overrides
# ---------------------------------------------------------------------------


def write_matrix_csv(
    path: Path | str,
    test_names: Sequence[str],
    ref_names: Sequence[str],
    matrix: np.ndarray,
    fmt: str = "repr",
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([""] + list(ref_names))
        for name, row in zip(test_names, np.asarray(matrix)):
            if fmt == "int":
                writer.writerow([name] + [str(int(v)) for v in row])
            else:
                writer.writerow([name] + [repr(float(v)) for v in row])


def read_matrix_csv(path: Path | str) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        rows = [row for row in reader if row]
    if len(rows) < 2:
        raise FormatError(f"{path}: matrix CSV needs a header and one row")
    ref_names = tuple(name for name in rows[0][1:])
    test_names = tuple(row[0] for row in rows[1:])
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    if values.shape[1] != len(ref_names):
        raise FormatError(f"{path}: ragged matrix CSV")
    return test_names, ref_names, values


def write_contingency_csv(path: Path | str, table: ContingencyTable) -> None:
    write_matrix_csv(path, table.test_names, table.ref_names, table.counts, fmt="int")


def read_contingency_csv(path: Path | str) -> ContingencyTable:
    test_names, ref_names, values = read_matrix_csv(path)
    counts = values.astype(np.int64)
    if (counts != values).any():
        raise FormatError(f"{path}: contingency counts must be integers")
    return ContingencyTable(test_names, ref_names, counts)


def read_relation_csv(path: Path | str) -> LegendRelation:
    test_names, ref_names, values = read_matrix_csv(path)
    if not np.isin(values, (0.0, 1.0)).all():
        raise FormatError(f"{path}: relation entries must be 0 or 1")
    return LegendRelation(test_names, ref_names, values.astype(np.int8))


def write_relation_csv(path: Path | str, rel: LegendRelation) -> None:
    write_matrix_csv(path, rel.test_names, rel.ref_names, rel.matrix, fmt="int")


def read_overrides_csv(path: Path | str) -> list[Override]:
    out: list[Override] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        needed = {"test_label", "reference_label", "value", "note"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise FormatError(
                f"{path}: expected columns test_label,reference_label,value,note"
            )
        for row in reader:
            out.append(
                Override(
                    row["test_label"],
                    row["reference_label"],
                    int(row["value"]),
                    row["note"],
                )
            )
    return out
