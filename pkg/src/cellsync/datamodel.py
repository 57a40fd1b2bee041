"""Grid, activity, assignment and region-table ingestion.

All structures are immutable after construction: numpy arrays are flagged
read-only and mappings are exposed through read-only views.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import DataWarning, IngestError, ParseError, ValidationError

AREA_RANGE_KM2 = (0.04, 40.0)
ACTIVITY_HEADER = ("cell_id", "ts", "count")
_META_PREFIX = "# cellsync-activity"


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _rows(path, expected_header):
    """Yield ``(line_number, row)`` for data rows of a CSV, skipping ``#`` comments."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            line = reader.line_num
            if not row or (row[0].startswith("#") and header is None):
                continue
            if header is None:
                header = tuple(c.strip() for c in row)
                if expected_header is not None and header[: len(expected_header)] != tuple(
                    expected_header
                ):
                    raise ParseError(
                        f"expected header {','.join(expected_header)!r}, got {','.join(header)!r}",
                        path,
                        line,
                    )
                yield line, header
                continue
            yield line, [c.strip() for c in row]
        if header is None:
            raise ParseError("empty file", path)


# ---------------------------------------------------------------------------
# Cell grid


@dataclass(frozen=True)
class Cell:
    cell_id: str
    centroid_lon: float
    centroid_lat: float
    area_km2: float


@dataclass(frozen=True)
class CellGrid:
    """Spatial grid of antenna-coverage cells."""

    cells: tuple[Cell, ...]

    def __post_init__(self):
        ids = [c.cell_id for c in self.cells]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise IngestError(f"duplicate cell_id(s): {', '.join(dup)}")
        lo, hi = AREA_RANGE_KM2
        for c in self.cells:
            if not c.area_km2 > 0:
                raise ValidationError(f"cell {c.cell_id}: area_km2 must be positive")
            if not lo <= c.area_km2 <= hi:
                warnings.warn(
                    f"cell {c.cell_id}: area {c.area_km2} km2 outside [{lo}, {hi}]",
                    DataWarning,
                    stacklevel=3,
                )

    def __len__(self):
        return len(self.cells)

    def by_id(self):
        return {c.cell_id: c for c in self.cells}


def load_cells(path) -> CellGrid:
    """Read ``cells.csv`` (``cell_id,centroid_lon,centroid_lat,area_km2``)."""
    cells = []
    rows = _rows(path, ("cell_id", "centroid_lon", "centroid_lat", "area_km2"))
    next(rows)
    for line, row in rows:
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", path, line)
        try:
            lon, lat, area = (float(v) for v in row[1:])
        except ValueError as exc:
            raise ParseError(str(exc), path, line) from None
        if not (-180 <= lon <= 180 and -90 <= lat <= 90):
            raise ParseError("centroid outside WGS84 bounds", path, line)
        cells.append(Cell(row[0], lon, lat, area))
    return CellGrid(tuple(cells))


def write_cells(grid: CellGrid, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "centroid_lon", "centroid_lat", "area_km2"])
        for c in grid.cells:
            w.writerow([c.cell_id, repr(c.centroid_lon), repr(c.centroid_lat), repr(c.area_km2)])


# ---------------------------------------------------------------------------
# Activity


@dataclass(frozen=True)
class ActivityCube:
    """Per-cell activity counts on a ``[day, slot]`` lattice.

    Attributes
    ----------
    cell_ids : tuple of str
        Sorted cell identifiers; axis 0 of the arrays.
    counts : ndarray, shape (n_cells, n_days, n_slots), int64
        Activity counts. Entries flagged in `missing` hold 0 and carry no
        meaning.
    missing : ndarray of bool, same shape as `counts`
    start_date : datetime.date
        UTC date of day index 0.
    slot_width_hours : int
        1 or 2.
    """

    cell_ids: tuple
    counts: np.ndarray
    missing: np.ndarray
    start_date: date
    slot_width_hours: int = 1

    def __post_init__(self):
        if self.slot_width_hours not in (1, 2):
            raise ValidationError("slot_width_hours must be 1 or 2")
        counts = np.asarray(self.counts, dtype=np.int64)
        missing = np.asarray(self.missing, dtype=bool)
        if counts.ndim != 3 or counts.shape != missing.shape:
            raise ValidationError("counts and missing must share a 3-d shape")
        if counts.shape[2] != self.n_slots:
            raise ValidationError(
                f"slot axis has {counts.shape[2]} entries, expected {self.n_slots}"
            )
        if len(self.cell_ids) != counts.shape[0]:
            raise ValidationError("cell_ids length does not match counts")
        if list(self.cell_ids) != sorted(self.cell_ids):
            raise ValidationError("cell_ids must be sorted")
        if (counts[~missing] < 0).any():
            raise ValidationError("counts must be non-negative")
        counts = np.where(missing, 0, counts)
        object.__setattr__(self, "cell_ids", tuple(self.cell_ids))
        object.__setattr__(self, "counts", _frozen(counts))
        object.__setattr__(self, "missing", _frozen(missing))

    @property
    def n_slots(self):
        return 24 // self.slot_width_hours

    @property
    def n_days(self):
        return self.counts.shape[1]

    @property
    def n_cells(self):
        return self.counts.shape[0]

    def index(self, cell_id):
        return self.cell_ids.index(cell_id)

    def to_slot_width(self, slot_width_hours):
        """Re-bin an hourly cube into wider slots.

        A wide slot sums its member hours and is missing if any member is.
        """
        if slot_width_hours == self.slot_width_hours:
            return self
        if self.slot_width_hours != 1 or slot_width_hours != 2:
            raise ValidationError(
                f"cannot re-bin {self.slot_width_hours}h slots into {slot_width_hours}h slots"
            )
        n_cells, n_days, _ = self.counts.shape
        c = self.counts.reshape(n_cells, n_days, 12, 2).sum(axis=3)
        m = self.missing.reshape(n_cells, n_days, 12, 2).any(axis=3)
        return ActivityCube(self.cell_ids, c, m, self.start_date, 2)

    def subset(self, cell_ids):
        ids = sorted(cell_ids)
        idx = [self.index(c) for c in ids]
        return ActivityCube(
            tuple(ids), self.counts[idx], self.missing[idx], self.start_date, self.slot_width_hours
        )


def parse_hour(text):
    """Parse an ISO-8601 timestamp that falls exactly on an hour; return aware UTC datetime."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(s)
    except ValueError:
        raise ValueError(f"not an ISO-8601 timestamp: {text!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    if ts.minute or ts.second or ts.microsecond:
        raise ValueError(f"timestamp not on the hour: {text!r}")
    return ts


def _parse_meta(path):
    with Path(path).open() as fh:
        first = fh.readline()
    if not first.startswith(_META_PREFIX):
        return None
    meta = {}
    for tok in first[len(_META_PREFIX) :].split():
        key, _, val = tok.partition("=")
        meta[key] = val
    try:
        return {
            "slot_width_hours": int(meta["slot_width_hours"]),
            "start": date.fromisoformat(meta["start"]),
            "days": int(meta["days"]),
        }
    except (KeyError, ValueError):
        raise ParseError("malformed cellsync-activity metadata line", path, 1) from None


def load_activity(path, slot_width_hours=1) -> ActivityCube:
    """Read ``activity.csv`` into an :class:`ActivityCube`.

    Parameters
    ----------
    path : path-like
        CSV with header ``cell_id,ts,count``. ``ts`` is an ISO-8601 hour,
        converted to UTC; ``count`` a non-negative integer.
    slot_width_hours : {1, 2}
        Two-hour slots sum the pair of member hours.

    Raises
    ------
    ParseError
        Malformed row, negative count (message names the line).
    IngestError
        Duplicate ``(cell_id, ts)`` key, or no rows.
    """
    if slot_width_hours not in (1, 2):
        raise ValidationError("slot_width_hours must be 1 or 2")
    meta = _parse_meta(path)
    src_width = meta["slot_width_hours"] if meta else 1
    if src_width > slot_width_hours:
        raise ValidationError(
            f"{path} holds {src_width}h slots; cannot load at {slot_width_hours}h"
        )

    records = {}
    rows = _rows(path, ACTIVITY_HEADER)
    next(rows)
    for line, row in rows:
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", path, line)
        cell_id, ts_text, count_text = row
        if not cell_id:
            raise ParseError("empty cell_id", path, line)
        try:
            ts = parse_hour(ts_text)
        except ValueError as exc:
            raise ParseError(str(exc), path, line) from None
        try:
            count = int(count_text)
        except ValueError:
            raise ParseError(f"count is not an integer: {count_text!r}", path, line) from None
        if count < 0:
            raise ParseError(f"negative count {count} for cell {cell_id} at {ts_text}", path, line)
        if src_width == 2 and ts.hour % 2:
            raise ParseError("2h-slot file has a timestamp on an odd hour", path, line)
        key = (cell_id, ts)
        if key in records:
            raise IngestError(
                f"{path}:{line}: duplicate row for cell {cell_id} at {ts.isoformat()} "
                f"(first seen on line {records[key][1]})"
            )
        records[key] = (count, line)

    if not records:
        raise IngestError(f"{path}: no activity rows")

    cell_ids = tuple(sorted({k[0] for k in records}))
    days = [k[1].date() for k in records]
    if meta:
        start = meta["start"]
        n_days = meta["days"]
    else:
        start = min(days)
        n_days = (max(days) - start).days + 1
    n_src_slots = 24 // src_width
    counts = np.zeros((len(cell_ids), n_days, n_src_slots), dtype=np.int64)
    missing = np.ones_like(counts, dtype=bool)
    cidx = {c: i for i, c in enumerate(cell_ids)}
    for (cell_id, ts), (count, line) in records.items():
        d = (ts.date() - start).days
        if not 0 <= d < n_days:
            raise ParseError("timestamp outside declared day range", path, line)
        s = ts.hour // src_width
        counts[cidx[cell_id], d, s] = count
        missing[cidx[cell_id], d, s] = False

    cube = ActivityCube(cell_ids, counts, missing, start, src_width)
    return cube.to_slot_width(slot_width_hours)


def write_activity(cube: ActivityCube, path):
    """Write the canonical CSV form of `cube`; :func:`load_activity` reproduces it."""
    path = Path(path)
    day_seen = (~cube.missing).any(axis=(0, 2))
    plain = cube.slot_width_hours == 1 and cube.n_days and day_seen[0] and day_seen[-1]
    with path.open("w", newline="") as fh:
        if not plain:
            # day range or slot width would not survive a plain re-read
            fh.write(
                f"{_META_PREFIX} slot_width_hours={cube.slot_width_hours} "
                f"start={cube.start_date.isoformat()} days={cube.n_days}\n"
            )
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACTIVITY_HEADER)
        base = datetime(cube.start_date.year, cube.start_date.month, cube.start_date.day)
        for ci, cell_id in enumerate(cube.cell_ids):
            present = np.argwhere(~cube.missing[ci])
            for d, s in present:
                ts = base + timedelta(days=int(d), hours=int(s) * cube.slot_width_hours)
                w.writerow([cell_id, ts.strftime("%Y-%m-%dT%H:00Z"), int(cube.counts[ci, d, s])])


# ---------------------------------------------------------------------------
# Cell -> municipality -> region assignment


@dataclass(frozen=True)
class Assignment:
    """Hard assignment of each retained cell to one municipality and region.

    Attributes
    ----------
    cells : Mapping[str, tuple[str, str]]
        ``cell_id -> (municipality_id, region_id)``.
    excluded : tuple of (cell_id, reason)
    """

    cells: Mapping
    excluded: tuple = ()

    def __post_init__(self):
        muni_region = {}
        for cell_id, (muni, region) in self.cells.items():
            if muni_region.setdefault(muni, region) != region:
                raise IngestError(f"municipality {muni} maps to more than one region")
        object.__setattr__(self, "cells", MappingProxyType(dict(sorted(self.cells.items()))))
        object.__setattr__(self, "excluded", tuple(self.excluded))

    def municipality(self, cell_id):
        return self.cells[cell_id][0]

    def region(self, cell_id):
        return self.cells[cell_id][1]

    def region_ids(self):
        return sorted({r for _, r in self.cells.values()})

    def cells_in_region(self, region_id):
        return [c for c, (_, r) in self.cells.items() if r == region_id]


def read_overlaps(path):
    """Read ``overlaps.csv`` rows as ``(cell_id, municipality_id, overlap_km2)``."""
    out = []
    rows = _rows(path, ("cell_id", "municipality_id", "overlap_km2"))
    next(rows)
    for line, row in rows:
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", path, line)
        try:
            km2 = float(row[2])
        except ValueError:
            raise ParseError(f"overlap_km2 is not a number: {row[2]!r}", path, line) from None
        if km2 < 0 or not math.isfinite(km2):
            raise ParseError("overlap_km2 must be finite and non-negative", path, line)
        out.append((row[0], row[1], km2))
    return out


def read_region_map(path):
    """Read ``regions.csv`` into ``{municipality_id: region_id}``."""
    out = {}
    rows = _rows(path, ("municipality_id", "region_id"))
    next(rows)
    for line, row in rows:
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", path, line)
        muni, region = row
        if muni in out and out[muni] != region:
            raise IngestError(f"{path}:{line}: municipality {muni} listed under two regions")
        out[muni] = region
    return out


def assign_cells(overlaps: Iterable, region_map: Mapping, cells=None, regions=None) -> Assignment:
    """Assign each cell to the municipality it overlaps most.

    Parameters
    ----------
    overlaps : iterable of (cell_id, municipality_id, overlap_km2)
    region_map : mapping municipality_id -> region_id
    cells : iterable of str, optional
        Cells expected in the analysis. Those with no overlap rows are
        excluded with a warning.
    regions : iterable of str, optional
        Regions under analysis. Cells whose winning municipality lies in
        another region are excluded.

    Notes
    -----
    Ties are broken by the lexicographically smallest municipality id, so
    the result does not depend on row order.
    """
    per_cell = {}
    for cell_id, muni, km2 in overlaps:
        if muni not in region_map:
            raise IngestError(f"municipality {muni} has no region")
        bucket = per_cell.setdefault(cell_id, {})
        bucket[muni] = bucket.get(muni, 0.0) + float(km2)

    excluded = []
    wanted = sorted(set(cells)) if cells is not None else sorted(per_cell)
    keep_regions = set(regions) if regions is not None else None
    assigned = {}
    for cell_id in wanted:
        bucket = per_cell.get(cell_id)
        if not bucket:
            excluded.append((cell_id, "no overlap rows"))
            continue
        if sum(bucket.values()) <= 0:
            excluded.append((cell_id, "zero total overlap"))
            continue
        muni = min(bucket, key=lambda m: (-bucket[m], m))
        region = region_map[muni]
        if keep_regions is not None and region not in keep_regions:
            excluded.append((cell_id, f"municipality {muni} outside analysed regions"))
            continue
        assigned[cell_id] = (muni, region)

    for cell_id, reason in excluded:
        warnings.warn(f"cell {cell_id} excluded: {reason}", DataWarning, stacklevel=2)
    return Assignment(assigned, tuple(excluded))


def region_centroids(grid: CellGrid, assignment: Assignment):
    """Area-weighted mean centroid of the cells assigned to each region.

    Returns
    -------
    DataFrame indexed by region_id with ``centroid_lon``, ``centroid_lat``.
    """
    by_id = grid.by_id()
    acc = {}
    for cell_id, (_, region) in assignment.cells.items():
        c = by_id.get(cell_id)
        if c is None:
            continue
        a = acc.setdefault(region, [0.0, 0.0, 0.0])
        a[0] += c.area_km2 * c.centroid_lon
        a[1] += c.area_km2 * c.centroid_lat
        a[2] += c.area_km2
    rows = {r: (v[0] / v[2], v[1] / v[2]) for r, v in sorted(acc.items())}
    df = pd.DataFrame.from_dict(rows, orient="index", columns=["centroid_lon", "centroid_lat"])
    df.index.name = "region_id"
    return df


# ---------------------------------------------------------------------------
# Region-level table


@dataclass(frozen=True)
class RegionDataset:
    """Region observations: synchronization indices, covariates, targets.

    Attributes
    ----------
    table : DataFrame
        Indexed by ``region_id``, one column per variable.
    covariates, targets : tuple of str
        Column names by role.
    unmatched : Mapping[str, tuple]
        Region ids present in only one input, keyed by the input they came
        from (``"covariates"``, ``"targets"``, ``"sync"``).
    """

    table: pd.DataFrame
    covariates: tuple
    targets: tuple
    unmatched: Mapping = field(default_factory=dict)

    SYNC_COLUMNS = ("between_sync", "within_sync")

    def with_sync(self, sync_table: pd.DataFrame):
        """Join per-region ``within_sync``/``between_sync`` (indexed by region_id)."""
        cols = [c for c in self.SYNC_COLUMNS if c in sync_table.columns]
        joined = self.table.join(sync_table[cols], how="inner")
        unmatched = dict(self.unmatched)
        only_sync = sorted(set(sync_table.index) - set(self.table.index))
        only_table = sorted(set(self.table.index) - set(sync_table.index))
        if only_sync:
            unmatched["sync"] = tuple(only_sync)
        if only_table:
            unmatched["no_sync"] = tuple(only_table)
        ordered = list(cols) + [c for c in joined.columns if c not in cols]
        return RegionDataset(joined[ordered], self.covariates, self.targets, unmatched)


def _read_numeric_table(path, role):
    rows = _rows(path, None)
    try:
        _, header = next(rows)
    except ParseError:
        if role == "targets":
            raise ValidationError(f"{path}: no target columns") from None
        raise
    if header[0] != "region_id":
        raise ParseError("first column must be region_id", path, 1)
    names = list(header[1:])
    if not names:
        raise ValidationError(f"{path}: no {role[:-1]} columns")
    if len(set(names)) != len(names):
        raise ParseError("duplicate column names", path, 1)
    data = {}
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, line)
        region = row[0]
        if region in data:
            raise IngestError(f"{path}:{line}: duplicate region_id {region}")
        vals = []
        for name, text in zip(names, row[1:]):
            try:
                v = float(text) if text != "" else math.nan
            except ValueError:
                raise ParseError(f"non-numeric value {text!r} in column {name}", path, line) from None
            vals.append(v)
        data[region] = vals
    df = pd.DataFrame.from_dict(data, orient="index", columns=names, dtype=float)
    df.index.name = "region_id"
    return df.sort_index()


def load_region_table(covariates_path, targets_path) -> RegionDataset:
    """Merge ``covariates.csv`` and ``targets.csv`` on ``region_id``.

    Regions present in only one file are dropped and listed in
    ``RegionDataset.unmatched``.
    """
    cov = _read_numeric_table(covariates_path, "covariates")
    tgt = _read_numeric_table(targets_path, "targets")
    clash = set(cov.columns) & set(tgt.columns)
    if clash:
        raise ValidationError(f"columns in both covariates and targets: {sorted(clash)}")
    unmatched = {}
    only_cov = sorted(set(cov.index) - set(tgt.index))
    only_tgt = sorted(set(tgt.index) - set(cov.index))
    if only_cov:
        unmatched["covariates"] = tuple(only_cov)
    if only_tgt:
        unmatched["targets"] = tuple(only_tgt)
    table = cov.join(tgt, how="inner").sort_index()
    return RegionDataset(table, tuple(cov.columns), tuple(tgt.columns), unmatched)


def write_region_table(df: pd.DataFrame, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", *df.columns])
        for region, row in df.iterrows():
            w.writerow([region, *(repr(float(v)) for v in row)])
