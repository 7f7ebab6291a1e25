"""Monte Carlo draw tables: storage, summaries and CSV round-tripping."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class SampleTableError(ValueError):
    """Raised for malformed tables or unparseable CSV input."""


@dataclass(frozen=True)
class SampleTable:
    """K draws of V named scalar quantities.

    ``draws`` has shape (K, V) and is stored read-only; build a new table
    instead of mutating one.
    """

    names: tuple[str, ...]
    draws: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        draws = np.array(self.draws, dtype=float, copy=True)
        if draws.ndim == 1:
            draws = draws.reshape(-1, 1)
        if draws.ndim != 2:
            raise SampleTableError("draws must be a 2-d array")
        if draws.shape[1] != len(names):
            raise SampleTableError(
                f"{len(names)} names for {draws.shape[1]} columns")
        seen = set()
        for n in names:
            if n in seen:
                raise SampleTableError(f"duplicate column name {n!r}")
            seen.add(n)
        if not np.all(np.isfinite(draws)):
            bad = [names[j] for j in np.where(~np.isfinite(draws).all(axis=0))[0]]
            raise SampleTableError(f"non-finite draws in columns {bad}")
        draws.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "_index", {n: j for j, n in enumerate(names)})

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[float]], meta=None) -> "SampleTable":
        names = list(columns)
        if not names:
            return cls((), np.empty((0, 0)), meta or {})
        draws = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
        return cls(tuple(names), draws, dict(meta or {}))

    @property
    def K(self) -> int:
        return self.draws.shape[0]

    def __len__(self) -> int:
        return self.K

    def __contains__(self, name) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.draws[:, self._index[name]]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def columns(self, names: Iterable[str]) -> np.ndarray:
        """K x len(names) matrix of the requested columns."""
        names = list(names)
        missing = [n for n in names if n not in self._index]
        if missing:
            raise KeyError(f"missing columns {missing}")
        return self.draws[:, [self._index[n] for n in names]]

    def select(self, names: Iterable[str]) -> "SampleTable":
        names = list(names)
        return SampleTable(tuple(names), self.columns(names), dict(self.meta))

    def with_columns(self, other: "SampleTable | Mapping[str, Sequence[float]]") -> "SampleTable":
        """Append columns (same K). Name clashes are an error."""
        if not isinstance(other, SampleTable):
            other = SampleTable.from_columns(other)
        if other.K != self.K:
            raise SampleTableError(f"row count mismatch: {self.K} vs {other.K}")
        return SampleTable(self.names + other.names,
                           np.hstack([self.draws, other.draws]),
                           {**self.meta, **other.meta})

    def rows(self, index) -> "SampleTable":
        return SampleTable(self.names, self.draws[index], dict(self.meta))


@dataclass(frozen=True)
class SummaryRow:
    name: str
    mean: float
    sd: float
    median: float
    q2_5: float
    q97_5: float


SUMMARY_FIELDS = ("name", "mean", "sd", "median", "q2.5", "q97.5")


def summarize(table: SampleTable) -> list[SummaryRow]:
    """Posterior mean, sd (K-1 denominator), median and central 95% interval.

    Quantiles interpolate linearly between order statistics (numpy's
    default ``linear`` method).
    """
    if table.K == 0:
        raise SampleTableError("no draws")
    if table.K < 2:
        raise SampleTableError("at least 2 draws are needed for a summary")
    x = table.draws
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    q = np.quantile(x, [0.025, 0.5, 0.975], axis=0)
    return [SummaryRow(n, float(mean[j]), float(sd[j]), float(q[1, j]),
                       float(q[0, j]), float(q[2, j]))
            for j, n in enumerate(table.names)]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_summary_csv(rows: Sequence[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([r.name, _fmt(r.mean), _fmt(r.sd), _fmt(r.median),
                        _fmt(r.q2_5), _fmt(r.q97_5)])


def write_csv(table: SampleTable, path, meta: bool = True) -> None:
    """Write draws at 17 significant digits; meta goes to ``<stem>.meta.json``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(table.names) + "\n")
        for row in table.draws:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    if meta and table.meta:
        write_meta(table.meta, meta_path(path))


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_meta(meta: Mapping, path) -> None:
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def read_csv(path) -> SampleTable:
    """Parse a draws CSV written by :func:`write_csv` (or any compatible file)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SampleTableError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        seen = set()
        for h in header:
            if not h:
                raise SampleTableError(f"{path}: line 1: empty column name")
            if h in seen:
                raise SampleTableError(f"{path}: line 1: duplicate column name {h!r}")
            seen.add(h)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise SampleTableError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
            vals = []
            for name, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise SampleTableError(
                        f"{path}: line {lineno}, column {name!r}: not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise SampleTableError(
                        f"{path}: line {lineno}, column {name!r}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    draws = np.array(rows, dtype=float).reshape(len(rows), len(header))
    meta = {}
    mp = meta_path(path)
    if mp.exists():
        with open(mp) as fh:
            meta = json.load(fh)
    return SampleTable(tuple(header), draws, meta)
