"""Per-slot z-scoring of activity series (circadian trend removal)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import ActivityCube, _frozen
from .errors import ValidationError


@dataclass(frozen=True)
class ZScoreCube:
    """Normalized activity.

    Attributes
    ----------
    cell_ids : tuple of str
    z : ndarray, shape (n_cells, n_days, n_slots)
        Normalized values, NaN where the source count is missing.
    mean, sd : ndarray, shape (n_cells, n_slots)
        Per-slot mean and population standard deviation over the observed
        days (NaN when a slot was never observed).
    degenerate : ndarray of bool, shape (n_cells, n_slots)
        Slots with zero spread or fewer than two observed days; their
        observed entries are set to 0.
    slot_width_hours : int
    """

    cell_ids: tuple
    z: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    degenerate: np.ndarray
    slot_width_hours: int = 1

    @property
    def valid(self):
        return ~np.isnan(self.z)

    @property
    def n_days(self):
        return self.z.shape[1]

    @property
    def n_slots(self):
        return self.z.shape[2]

    def index(self, cell_id):
        return self.cell_ids.index(cell_id)

    def series(self, cell_id):
        """``(n_days, n_slots)`` slice for one cell."""
        return self.z[self.index(cell_id)]

    def n_degenerate(self):
        return int(self.degenerate.sum())


def zscore_slots(x, missing=None):
    """Z-score each slot of ``x[..., day, slot]`` across the day axis.

    Parameters
    ----------
    x : array_like, shape (..., n_days, n_slots)
    missing : array_like of bool, optional
        Entries excluded from the statistics; they come back as NaN.

    Returns
    -------
    z, mean, sd, degenerate
        ``sd`` is the population (divide-by-count) standard deviation.
    """
    x = np.asarray(x, dtype=np.float64)
    if missing is None:
        missing = np.zeros(x.shape, dtype=bool)
    missing = np.asarray(missing, dtype=bool) | np.isnan(x)
    obs = ~missing
    n = obs.sum(axis=-2)
    xs = np.where(obs, x, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = xs.sum(axis=-2) / n
        dev = np.where(obs, x - mean[..., None, :], 0.0)
        sd = np.sqrt((dev * dev).sum(axis=-2) / n)
    degenerate = (n < 2) | ~(sd > 0)
    safe_sd = np.where(degenerate, 1.0, sd)
    z = np.where(degenerate[..., None, :], 0.0, dev / safe_sd[..., None, :])
    z = np.where(obs, z, np.nan)
    return z, mean, sd, degenerate


def hourly_zscore(cube: ActivityCube) -> ZScoreCube:
    """Normalize every cell's series slot by slot.

    ``z[day, h] = (x[day, h] - mean_h) / sd_h`` with statistics taken over
    the days on which slot ``h`` is observed. Slots with ``sd_h == 0`` (or
    fewer than two observed days) are flagged degenerate and map to 0.
    """
    if cube.n_days < 2:
        raise ValidationError("z-scoring needs at least 2 days")
    z, mean, sd, degenerate = zscore_slots(cube.counts, cube.missing)
    return ZScoreCube(
        cube.cell_ids,
        _frozen(z),
        _frozen(mean),
        _frozen(sd),
        _frozen(degenerate),
        cube.slot_width_hours,
    )


def export_zscores(zcube: ZScoreCube, path):
    """Debug dump as ``cell_id,day,slot,z`` (missing entries omitted)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "day", "slot", "z"])
        for ci, cell_id in enumerate(zcube.cell_ids):
            for d, s in np.argwhere(~np.isnan(zcube.z[ci])):
                w.writerow([cell_id, int(d), int(s), repr(float(zcube.z[ci, d, s]))])
