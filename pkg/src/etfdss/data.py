"""Loading and aligning dated monthly return panels."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


class DataError(ValueError):
    """Raised for malformed or inconsistent return data."""


class SampleSizeError(DataError):
    pass


def parse_month(text: str) -> str:
    m = _MONTH_RE.match(text.strip())
    if m is None or not 1 <= int(m.group(2)) <= 12:
        raise ValueError(f"not a YYYY-MM month: {text!r}")
    return f"{m.group(1)}-{m.group(2)}"


def month_index(month: str) -> int:
    """Months since year 0, so consecutive months differ by one."""
    year, mon = month.split("-")
    return int(year) * 12 + int(mon) - 1


@dataclass(frozen=True)
class ReturnsPanel:
    """T x n matrix of simple returns with month labels on rows and tickers on columns.

    Missing observations are stored as NaN; ``align_panels`` decides what to do
    with them.
    """

    dates: tuple[str, ...]
    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("values must be a 2-d array")
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.dates), len(self.labels)):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"{len(self.dates)} dates x {len(self.labels)} labels"
            )
        if len(set(self.labels)) != len(self.labels):
            raise DataError("asset labels must be unique")
        idx = [month_index(d) for d in self.dates]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DataError("dates must be strictly increasing")

    @property
    def T(self) -> int:
        return len(self.dates)

    @property
    def n(self) -> int:
        return len(self.labels)

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]

    def select(self, labels) -> "ReturnsPanel":
        labels = list(labels)
        missing = [x for x in labels if x not in self.labels]
        if missing:
            raise KeyError(f"unknown tickers: {missing}")
        cols = [self.labels.index(x) for x in labels]
        return ReturnsPanel(self.dates, labels, self.values[:, cols])

    def window(self, start: str | None = None, end: str | None = None) -> "ReturnsPanel":
        lo = month_index(start) if start else -np.inf
        hi = month_index(end) if end else np.inf
        rows = [i for i, d in enumerate(self.dates) if lo <= month_index(d) <= hi]
        return ReturnsPanel([self.dates[i] for i in rows], self.labels, self.values[rows])


@dataclass(frozen=True)
class AlignedData:
    targets: ReturnsPanel
    candidates: ReturnsPanel

    @property
    def T(self) -> int:
        return self.targets.T

    @property
    def p(self) -> int:
        return self.candidates.n

    @property
    def q(self) -> int:
        return self.targets.n

    @property
    def X(self) -> np.ndarray:
        return self.candidates.values

    @property
    def R(self) -> np.ndarray:
        return self.targets.values


def load_returns_csv(path, date_column: str = "date", risk_free_column: str | None = None) -> ReturnsPanel:
    """Read a header-first CSV of monthly returns.

    Empty cells are read as missing (NaN). If ``risk_free_column`` is given,
    that column is subtracted from every other column and then dropped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if date_column not in header:
            raise DataError(f"{path}: date column {date_column!r} not in header")
        dcol = header.index(date_column)
        labels = [h for j, h in enumerate(header) if j != dcol]
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                dates.append(parse_month(row[dcol]))
            except ValueError:
                raise DataError(f"{path}: row {lineno}: malformed date {row[dcol]!r}") from None
            vals = []
            for j, cell in enumerate(row):
                if j == dcol:
                    continue
                cell = cell.strip()
                if cell == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[j]!r}: non-numeric value {cell!r}"
                    ) from None
            rows.append(vals)

    if len(set(dates)) != len(dates):
        dup = sorted({d for d in dates if dates.count(d) > 1})
        raise DataError(f"{path}: duplicate dates {dup}")
    order = sorted(range(len(dates)), key=lambda i: month_index(dates[i]))
    values = np.array([rows[i] for i in order], dtype=float).reshape(len(dates), len(labels))
    panel = ReturnsPanel([dates[i] for i in order], labels, values)
    if risk_free_column is not None:
        if risk_free_column not in panel.labels:
            raise DataError(f"{path}: risk-free column {risk_free_column!r} not in header")
        rf = panel.column(risk_free_column)
        keep = [x for x in panel.labels if x != risk_free_column]
        sub = panel.select(keep)
        panel = ReturnsPanel(sub.dates, sub.labels, sub.values - rf[:, None])
    return panel


def write_returns_csv(panel: ReturnsPanel, path, date_column: str = "date") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([date_column, *panel.labels])
        for d, row in zip(panel.dates, panel.values):
            w.writerow([d, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def align_panels(targets: ReturnsPanel, candidates: ReturnsPanel) -> AlignedData:
    """Restrict both panels to their common months.

    Candidate columns with a missing value anywhere in the common window are
    dropped (with a warning); a missing target value is an error.
    """
    if targets.T == 0 or candidates.T == 0:
        raise DataError("cannot align an empty panel")
    common = sorted(set(targets.dates) & set(candidates.dates), key=month_index)
    if not common:
        raise DataError("targets and candidates share no dates")
    tpos = {d: i for i, d in enumerate(targets.dates)}
    cpos = {d: i for i, d in enumerate(candidates.dates)}
    tvals = targets.values[[tpos[d] for d in common]]
    cvals = candidates.values[[cpos[d] for d in common]]

    bad_targets = [lab for lab, col in zip(targets.labels, tvals.T) if np.isnan(col).any()]
    if bad_targets:
        raise DataError(f"target columns with missing values in the aligned window: {bad_targets}")
    keep = ~np.isnan(cvals).any(axis=0)
    if not keep.all():
        dropped = [lab for lab, k in zip(candidates.labels, keep) if not k]
        logger.warning("dropping candidates with missing values in window: %s", dropped)
    clabels = [lab for lab, k in zip(candidates.labels, keep) if k]
    cvals = cvals[:, keep]
    if not clabels:
        raise DataError("no fully observed candidates in the aligned window")

    const = [lab for lab, col in zip(targets.labels, tvals.T) if np.ptp(col) == 0.0]
    if const:
        raise DataError(f"constant target columns (zero total sum of squares): {const}")

    T, p = len(common), len(clabels)
    if T < p + 2:
        raise SampleSizeError(f"aligned sample has T={T} months but p={p} candidates; need T >= p + 2")
    return AlignedData(
        ReturnsPanel(common, targets.labels, tvals),
        ReturnsPanel(common, clabels, cvals),
    )
