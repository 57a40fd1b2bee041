"""Average daily mutual information between cells and per-region synchronization.

MI is estimated per day by equal-frequency binning of the two z-scored
series, a plug-in entropy estimate, and optional Miller-Madow correction.
All values are in nats.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from ._mikernel_py import clogc_table, mi_from_codes, rank_codes
from .datamodel import Assignment
from .errors import InsufficientSamplesError, ValidationError
from .normalize import ZScoreCube

REPORT_FLOOR = -0.01
UNITS = "nats"


@dataclass(frozen=True)
class MiConfig:
    """Estimator settings.

    Parameters
    ----------
    n_bins : int
        Equal-frequency bins per variable.
    bias_correction : {"miller-madow", "none"}
    min_valid_slots_per_day : int or None
        Jointly valid slots a day needs to count; None means every slot
        (complete days only).
    max_pairs_per_class : int or None
        Subsample each region's within/between pair set to at most this
        many pairs; requires `seed`.
    seed : int or None
    estimator : {"binned", "knn"}
        ``"knn"`` is reserved and not implemented.
    """

    n_bins: int = 4
    binning: str = "equal-frequency"
    bias_correction: str = "miller-madow"
    min_valid_slots_per_day: int | None = None
    max_pairs_per_class: int | None = None
    seed: int | None = None
    estimator: str = "binned"

    def __post_init__(self):
        if int(self.n_bins) < 2:
            raise ValidationError("n_bins must be >= 2")
        if self.binning != "equal-frequency":
            raise ValidationError(f"unsupported binning {self.binning!r}")
        if self.bias_correction not in ("miller-madow", "none"):
            raise ValidationError(f"unknown bias_correction {self.bias_correction!r}")
        if self.estimator not in ("binned", "knn"):
            raise ValidationError(f"unknown estimator {self.estimator!r}")
        if self.max_pairs_per_class is not None:
            if self.max_pairs_per_class < 1:
                raise ValidationError("max_pairs_per_class must be positive")
            if self.seed is None:
                raise ValidationError("max_pairs_per_class requires a seed")

    @property
    def miller_madow(self):
        return self.bias_correction == "miller-madow"

    def min_valid(self, n_slots):
        """Effective per-day threshold for series with `n_slots` slots."""
        mv = n_slots if self.min_valid_slots_per_day is None else int(self.min_valid_slots_per_day)
        if self.n_bins > n_slots:
            raise ValidationError(f"n_bins={self.n_bins} exceeds the {n_slots} slots per day")
        return mv


def _check_estimator(cfg):
    if cfg.estimator == "knn":
        raise NotImplementedError("k-nearest-neighbour MI estimator is not implemented")


def daily_mi(zi_day, zj_day, cfg: MiConfig = MiConfig()) -> float:
    """MI (nats) between two same-day series over their jointly valid slots.

    NaN marks a missing slot. Values are ranked (ties in index order) and
    rank ``r`` of ``n`` goes to bin ``r * n_bins // n``.

    Raises
    ------
    InsufficientSamplesError
        Fewer than ``n_bins`` jointly valid slots.
    """
    _check_estimator(cfg)
    x = np.asarray(zi_day, dtype=np.float64)
    y = np.asarray(zj_day, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("daily_mi expects two 1-d series of equal length")
    common = ~(np.isnan(x) | np.isnan(y))
    n = int(common.sum())
    if n < cfg.n_bins:
        raise InsufficientSamplesError(f"{n} common valid slots < {cfg.n_bins} bins")
    cx = rank_codes(x[common], cfg.n_bins)
    cy = rank_codes(y[common], cfg.n_bins)
    return mi_from_codes(cx, cy, cfg.n_bins, cfg.miller_madow, clogc_table(n))


def plugin_entropy(x, n_bins):
    """Plug-in entropy (nats) of the equal-frequency binning of `x`."""
    codes = rank_codes(np.asarray(x, dtype=np.float64), n_bins)
    n = len(codes)
    c = np.bincount(codes, minlength=n_bins)
    c = c[c > 0]
    return float(np.log(n) - (c * np.log(c)).sum() / n)


@dataclass(frozen=True)
class PairSync:
    """Average daily MI of one unordered cell pair.

    `mi_avg` is the raw estimate; Miller-Madow can push it slightly below 0.
    """

    cell_i: str
    cell_j: str
    pair_class: str | None
    mi_avg: float
    n_days_used: int

    @property
    def mi_report(self):
        return max(self.mi_avg, REPORT_FLOOR)


def pair_mi(zi, zj, cfg: MiConfig = MiConfig(), cell_i="i", cell_j="j", pair_class=None) -> PairSync:
    """Average daily MI between two ``(n_days, n_slots)`` z-score slices.

    Days with fewer than the configured number of jointly valid slots are
    skipped.

    Raises
    ------
    InsufficientSamplesError
        No usable day.
    """
    _check_estimator(cfg)
    zi = np.asarray(zi, dtype=np.float64)
    zj = np.asarray(zj, dtype=np.float64)
    if zi.shape != zj.shape or zi.ndim != 2:
        raise ValidationError("pair_mi expects two (n_days, n_slots) arrays of equal shape")
    z = np.stack([zi, zj])
    mi, nd = kernels.pair_mi_batch(
        z, [[0, 1]], cfg.n_bins, cfg.miller_madow, cfg.min_valid(z.shape[2])
    )
    if nd[0] == 0:
        raise InsufficientSamplesError(f"pair ({cell_i}, {cell_j}) has no usable day")
    a, b = sorted((cell_i, cell_j))
    return PairSync(a, b, pair_class, float(mi[0]), int(nd[0]))


# ---------------------------------------------------------------------------
# Region aggregation


@dataclass(frozen=True)
class ClassSummary:
    """Within- or between-municipality pair statistics for one region."""

    mean: float
    median: float
    pairs: tuple
    values: np.ndarray
    n_days: np.ndarray

    @property
    def n_pairs(self):
        return len(self.values)

    @classmethod
    def from_values(cls, pairs, values, n_days):
        values = np.asarray(values, dtype=np.float64)
        if len(values) == 0:
            return None
        return cls(float(np.mean(values)), float(np.median(values)), tuple(pairs), values, np.asarray(n_days))


@dataclass(frozen=True)
class RegionSyncSummary:
    region_id: str
    within: ClassSummary | None
    between: ClassSummary | None
    n_cells: int = 0
    dropped_pairs: dict = field(default_factory=dict)

    def get(self, pair_class):
        return self.within if pair_class == "within" else self.between


def classify_pairs(cell_ids, municipality):
    """Enumerate unordered pairs of sorted `cell_ids` by municipality membership.

    Returns
    -------
    dict with keys ``"within"`` and ``"between"``, each a list of
    ``(cell_i, cell_j)`` with ``cell_i < cell_j``, in lexicographic order.
    """
    ids = sorted(cell_ids)
    out = {"within": [], "between": []}
    for a in range(len(ids)):
        ma = municipality[ids[a]]
        for b in range(a + 1, len(ids)):
            key = "within" if municipality[ids[b]] == ma else "between"
            out[key].append((ids[a], ids[b]))
    return out


def _subsample(pairs, k, seed, region_id, pair_class):
    if k is None or len(pairs) <= k:
        return pairs
    tag = zlib.crc32(f"{region_id}\x00{pair_class}".encode())
    rng = np.random.default_rng([int(seed), tag])
    keep = np.sort(rng.choice(len(pairs), size=k, replace=False))
    return [pairs[i] for i in keep]


def region_sync(
    region_id,
    assignment: Assignment,
    zcube: ZScoreCube,
    cfg: MiConfig = MiConfig(),
    n_threads=1,
    backend=None,
    prepared=None,
) -> RegionSyncSummary:
    """Within and between synchronization of one region.

    Within pairs share a municipality, between pairs do not. Each class is
    summarised by the unweighted mean and the median of its pairs' average
    daily MI. A class with no pairs is ``None``.
    """
    _check_estimator(cfg)
    present = set(zcube.cell_ids)
    cells = sorted(c for c in assignment.cells_in_region(region_id) if c in present)
    if len(cells) < 2:
        raise ValidationError(f"region {region_id} has fewer than 2 cells with activity")
    muni = {c: assignment.municipality(c) for c in cells}
    classes = classify_pairs(cells, muni)
    min_valid = cfg.min_valid(zcube.n_slots)
    if prepared is None:
        idx = [zcube.index(c) for c in cells]
        local = {c: k for k, c in enumerate(cells)}
        prepared = kernels.prepare(zcube.z[idx], cfg.n_bins)
    else:
        local = {c: zcube.index(c) for c in cells}

    summaries = {}
    dropped = {}
    for pair_class in ("within", "between"):
        pairs = _subsample(classes[pair_class], cfg.max_pairs_per_class, cfg.seed, region_id, pair_class)
        if not pairs:
            summaries[pair_class] = None
            continue
        ij = np.array([(local[a], local[b]) for a, b in pairs], dtype=np.intp)
        mi, nd = kernels.pair_mi_batch(
            None, ij, cfg.n_bins, cfg.miller_madow, min_valid, n_threads, backend, prepared
        )
        ok = nd > 0
        dropped[pair_class] = int((~ok).sum())
        kept = [p for p, k in zip(pairs, ok) if k]
        summaries[pair_class] = ClassSummary.from_values(kept, mi[ok], nd[ok])
    return RegionSyncSummary(region_id, summaries["within"], summaries["between"], len(cells), dropped)


def sync_all(assignment, zcube, cfg=MiConfig(), n_threads=1, backend=None, regions=None):
    """:func:`region_sync` for every region (sorted by id) with at least 2 cells."""
    prepared = kernels.prepare(zcube.z, cfg.n_bins)
    present = set(zcube.cell_ids)
    out = []
    for region_id in regions if regions is not None else assignment.region_ids():
        n = sum(1 for c in assignment.cells_in_region(region_id) if c in present)
        if n < 2:
            continue
        out.append(region_sync(region_id, assignment, zcube, cfg, n_threads, backend, prepared))
    return out


def sync_table(summaries):
    """Per-region ``within_sync``/``between_sync`` means as a DataFrame."""
    import pandas as pd

    rows = {
        s.region_id: {
            "within_sync": s.within.mean if s.within else np.nan,
            "between_sync": s.between.mean if s.between else np.nan,
        }
        for s in summaries
    }
    df = pd.DataFrame.from_dict(rows, orient="index", columns=["within_sync", "between_sync"])
    df.index.name = "region_id"
    return df.sort_index()


# ---------------------------------------------------------------------------
# Writers


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


SYNC_HEADER = ["region_id", "within_mean", "within_median", "within_n", "between_mean", "between_median", "between_n"]


def write_sync_csv(summaries, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SYNC_HEADER)
        for s in sorted(summaries, key=lambda s: s.region_id):
            row = [s.region_id]
            for c in (s.within, s.between):
                row += [_fmt(c.mean), _fmt(c.median), c.n_pairs] if c else ["", "", 0]
            w.writerow(row)


def read_sync_csv(path):
    """Read ``sync.csv`` into a DataFrame with ``within_sync``/``between_sync`` columns."""
    import pandas as pd

    df = pd.read_csv(path, dtype={"region_id": str}, float_precision="round_trip").set_index("region_id").sort_index()
    missing = set(SYNC_HEADER[1:]) - set(df.columns)
    if missing:
        raise ValidationError(f"{path}: missing columns {sorted(missing)}")
    return df.rename(columns={"within_mean": "within_sync", "between_mean": "between_sync"})


def write_pairs_csv(summaries, path):
    """``region_id,cell_i,cell_j,class,mi_avg,n_days``; mi_avg floored at -0.01."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "cell_i", "cell_j", "class", "mi_avg", "n_days"])
        for s in sorted(summaries, key=lambda s: s.region_id):
            for pair_class in ("within", "between"):
                c = s.get(pair_class)
                if c is None:
                    continue
                for (a, b), v, nd in zip(c.pairs, c.values, c.n_days):
                    w.writerow([s.region_id, a, b, pair_class, repr(max(float(v), REPORT_FLOOR)), int(nd)])


def violin_order(summaries):
    """Regions by descending median within synchronization; null medians last, ties by id."""

    def key(s):
        med = s.within.median if s.within else None
        return (med is None, -(med or 0.0), s.region_id)

    return sorted(summaries, key=key)


def sync_distribution_export(summaries, path):
    """Write per-pair values for violin plots.

    Columns ``order,region_id,class,cell_i,cell_j,mi_avg``. A class with no
    pairs is emitted as one row with empty cells and ``mi_avg = NA``.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValidationError("no region summaries to export")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["order", "region_id", "class", "cell_i", "cell_j", "mi_avg"])
        for rank, s in enumerate(violin_order(summaries)):
            for pair_class in ("within", "between"):
                c = s.get(pair_class)
                if c is None:
                    w.writerow([rank, s.region_id, pair_class, "", "", "NA"])
                    continue
                for (a, b), v in zip(c.pairs, c.values):
                    w.writerow([rank, s.region_id, pair_class, a, b, repr(max(float(v), REPORT_FLOOR))])
