# src/migrantpop/harness/reports.py
"""Structured experiment reports: named CSV tables plus a check summary.

A report is reproducible bit for bit from (config, seed): wall-clock
runtimes stay on the in-memory object and never reach the CSV files.
Every numeric cell is finite by construction; a non-finite observed value
is legal only as the recorded evidence of a failed check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["Check", "Report", "write_report", "format_cell"]


def format_cell(value) -> str:
    """Canonical CSV cell: 17 significant digits for floats, str otherwise."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, int):
        return str(value)
    return str(value)


@dataclass(frozen=True)
class Check:
    """One acceptance check: what was measured, the limit, and the verdict."""

    name: str
    observed: float
    tolerance: float
    passed: bool

    def __post_init__(self) -> None:
        if not math.isfinite(self.tolerance):
            raise ValueError(f"check {self.name!r} has a non-finite tolerance")
        if not math.isfinite(self.observed) and self.passed:
            raise ValueError(f"check {self.name!r} passed with a non-finite observation")


@dataclass
class Report:
    """Tables keyed by file stem, the check list, and (off-CSV) runtimes."""

    name: str
    tables: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    runtimes: dict = field(default_factory=dict)

    def add_table(self, stem: str, header: list, rows: list) -> None:
        width = len(header)
        for row in rows:
            if len(row) != width:
                raise ValueError(f"table {stem!r} row width {len(row)} != header {width}")
            for cell in row:
                if isinstance(cell, float) and not math.isfinite(cell):
                    raise ValueError(f"table {stem!r} contains a non-finite cell")
        self.tables[stem] = (list(header), [list(r) for r in rows])

    def add_check(self, name: str, observed: float, tolerance: float,
                  at_least: bool = False) -> Check:
        """Record a check: pass iff observed <= tolerance, signed.

        ``at_least`` flips the comparison to observed >= tolerance and
        requires the name to end in ``_min``, so the direction of every
        summary row is recoverable from its cells alone.  A non-finite
        observation always fails.
        """
        if at_least != name.endswith("_min"):
            raise ValueError(f"check {name!r}: at_least and the '_min' suffix must agree")
        observed = float(observed)
        if math.isfinite(observed):
            passed = observed >= tolerance if at_least else observed <= tolerance
        else:
            passed = False
        check = Check(name, observed, float(tolerance), passed)
        self.checks.append(check)
        return check

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def merged_with(self, other: "Report") -> "Report":
        """Combined report; table stems must not collide."""
        overlap = set(self.tables) & set(other.tables)
        if overlap:
            raise ValueError(f"reports share table names: {sorted(overlap)}")
        out = Report(name=f"{self.name}+{other.name}")
        out.tables = {**self.tables, **other.tables}
        out.checks = [*self.checks, *other.checks]
        out.runtimes = {**self.runtimes, **other.runtimes}
        return out

    def summary_rows(self) -> list:
        return [[c.name, format_cell(float(c.observed)), format_cell(float(c.tolerance)),
                 "true" if c.passed else "false"] for c in self.checks]


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(c) for c in row])


def write_report(report: Report, out_dir: str | Path) -> Path:
    """Emit every table plus summary.csv; returns the summary path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stem, (header, rows) in report.tables.items():
        _write_csv(out / f"{stem}.csv", header, rows)
    summary = out / "summary.csv"
    _write_csv(summary, ["check", "observed", "tolerance", "pass"],
               report.summary_rows())
    return summary
