"""Rectangular location x time panels and their CSV formats."""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NegativeValue, ParseError, RaggedPanel, ShapeMismatch

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PanelSeries:
    """Observed (or simulated) values ``Y(x, t)``, shape ``(n_locations, T)``."""

    values: np.ndarray
    location_labels: tuple[str, ...]
    time_labels: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ShapeMismatch(f"panel values must be 2-D, got shape {v.shape}")
        if v.shape[1] < 1:
            raise ShapeMismatch("panel needs at least one timestamp")
        if len(self.location_labels) != v.shape[0] or len(self.time_labels) != v.shape[1]:
            raise ShapeMismatch(
                f"labels ({len(self.location_labels)}, {len(self.time_labels)}) "
                f"do not match values {v.shape}"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "location_labels", tuple(str(s) for s in self.location_labels))
        object.__setattr__(self, "time_labels", tuple(str(s) for s in self.time_labels))

    @classmethod
    def from_array(cls, values, location_labels=None, time_labels=None) -> "PanelSeries":
        v = np.atleast_2d(np.asarray(values, dtype=float))
        n, t = v.shape
        locs = location_labels if location_labels is not None else [f"loc{i}" for i in range(n)]
        times = time_labels if time_labels is not None else [str(k + 1) for k in range(t)]
        return cls(v, tuple(locs), tuple(times))

    @property
    def n_locations(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def slice_time(self, start: int, stop: int | None = None) -> "PanelSeries":
        """Sub-panel over time positions ``start:stop`` (zero-based)."""
        return PanelSeries(
            self.values[:, start:stop],
            self.location_labels,
            self.time_labels[start:stop],
        )

    def with_values(self, values) -> "PanelSeries":
        return PanelSeries(np.asarray(values, dtype=float), self.location_labels, self.time_labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanelSeries):
            return NotImplemented
        return (self.location_labels == other.location_labels
                and self.time_labels == other.time_labels
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def same_shape(self, other: "PanelSeries") -> bool:
        return self.values.shape == other.values.shape


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def panel_to_csv(panel: PanelSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", *panel.location_labels])
    for k, tl in enumerate(panel.time_labels):
        w.writerow([tl, *(_fmt(v) for v in panel.values[:, k])])
    return buf.getvalue()


def save_panel(panel: PanelSeries, path) -> None:
    Path(path).write_text(panel_to_csv(panel))


def _read_long(rows: list[list[str]], start_line: int) -> PanelSeries:
    locs: list[str] = []
    dates: list[str] = []
    cells: dict[tuple[str, str], float] = {}
    for lineno, row in enumerate(rows, start=start_line):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise RaggedPanel(f"expected 3 fields, got {len(row)}", lineno)
        loc, date, raw = (c.strip() for c in row)
        try:
            val = float(raw)
        except ValueError:
            raise ParseError(f"non-numeric value {raw!r}", lineno) from None
        if loc not in locs:
            locs.append(loc)
        if date not in dates:
            dates.append(date)
        if (loc, date) in cells:
            raise ParseError(f"duplicate cell ({loc}, {date})", lineno)
        cells[(loc, date)] = val
    values = np.empty((len(locs), len(dates)))
    for i, loc in enumerate(locs):
        for k, date in enumerate(dates):
            if (loc, date) not in cells:
                raise RaggedPanel(f"missing cell ({loc}, {date})")
            values[i, k] = cells[(loc, date)]
    return PanelSeries(values, tuple(locs), tuple(dates))


def parse_panel(text: str, negative: str = "warn") -> PanelSeries:
    """Parse a wide (``date,loc1,loc2,...``) or long (``location,date,value``) CSV.

    ``negative`` selects how negative counts are treated: ``"warn"``,
    ``"error"`` or ``"ignore"``.
    """
    rows = list(csv.reader(io.StringIO(text)))
    while rows and not any(c.strip() for c in rows[0]):
        rows.pop(0)
    if not rows:
        raise ParseError("empty panel file")
    header = [c.strip() for c in rows[0]]
    if [h.lower() for h in header] == ["location", "date", "value"]:
        panel = _read_long(rows[1:], start_line=2)
    else:
        if len(header) < 2:
            raise ParseError("header needs a date column and at least one location", 1)
        locs = header[1:]
        dates, cols = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RaggedPanel(f"expected {len(header)} fields, got {len(row)}", lineno)
            dates.append(row[0].strip())
            try:
                cols.append([float(c) for c in row[1:]])
            except ValueError:
                raise ParseError("non-numeric or empty cell", lineno) from None
        if not cols:
            raise ParseError("panel has no data rows")
        panel = PanelSeries(np.array(cols).T, tuple(locs), tuple(dates))
    if not np.all(np.isfinite(panel.values)):
        raise ParseError("panel contains non-finite values")
    if np.any(panel.values < 0):
        msg = f"panel has {int(np.sum(panel.values < 0))} negative cells"
        if negative == "error":
            raise NegativeValue(msg)
        if negative == "warn":
            warnings.warn(msg, stacklevel=2)
    return panel


def load_panel(path, negative: str = "warn") -> PanelSeries:
    return parse_panel(Path(path).read_text(), negative=negative)


def stack_time(panels: Sequence[PanelSeries]) -> PanelSeries:
    """Concatenate panels along time (labels must agree on locations)."""
    locs = panels[0].location_labels
    for p in panels[1:]:
        if p.location_labels != locs:
            raise ShapeMismatch("location labels differ between panels")
    return PanelSeries(
        np.concatenate([p.values for p in panels], axis=1),
        locs,
        tuple(t for p in panels for t in p.time_labels),
    )
