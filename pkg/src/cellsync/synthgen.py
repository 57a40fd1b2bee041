"""Seeded synthetic cell-activity data with known coupling structure.

Each day and hour a region factor ``g_r``, a municipality factor ``g_m``
and cell noise ``e_i`` (all standard normal) are drawn; a cell's log
intensity is

    s_i = gamma * g_r + alpha * g_m + max(1 - alpha - gamma, 0) * e_i

and its count ``round(scale_i * profile[h] * exp(noise_sd * s_i))``. The
multiplicative circadian profile means raw counts are strongly synchronized
by the day/night cycle alone; only after per-slot z-scoring does MI reflect
the latent couplings.

Random streams are keyed by ``(seed, stream, region, municipality, cell)``
so every entity's draws are independent of generation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .datamodel import ActivityCube, Assignment, Cell, CellGrid, write_activity, write_cells, write_region_table
from .errors import ValidationError

_STREAM = {"region": 1, "municipality": 2, "cell": 3, "layout": 4, "covariate": 5, "target": 6, "scale": 7}

DEFAULT_PROFILE = tuple(
    round(40 + 260 * math.exp(-((h - 11.5) ** 2) / 18) + 120 * math.exp(-((h - 19) ** 2) / 6), 3) for h in range(24)
)


def _rng(seed, stream, *ids):
    return np.random.default_rng([int(seed), _STREAM[stream], *[int(i) for i in ids]])


@dataclass(frozen=True)
class RegionSpec:
    n_municipalities: int = 5
    cells_per_municipality: int = 10
    within_coupling: float = 0.5
    between_coupling: float = 0.1
    region_id: str | None = None


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    Parameters
    ----------
    regions : tuple of RegionSpec
    n_days : int
    slot_width_hours : {1, 2}
        Slot width of the returned cube; hourly counts are always generated.
    profile : tuple of 24 positive floats
        Mean hourly activity of a unit-scale cell.
    noise_sd : float
        Scale of the log-intensity perturbation.
    seed : int
    start_date : str
        ISO date of day 0.
    """

    regions: tuple = field(default_factory=lambda: (RegionSpec(),))
    n_days: int = 30
    slot_width_hours: int = 1
    profile: tuple = DEFAULT_PROFILE
    noise_sd: float = 0.3
    seed: int = 0
    start_date: str = "2015-04-01"

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(
            r if isinstance(r, RegionSpec) else RegionSpec(**r) for r in self.regions
        ))
        object.__setattr__(self, "profile", tuple(float(p) for p in self.profile))
        if not self.regions:
            raise ValidationError("at least one region is required")
        for r in self.regions:
            if not (0 <= r.within_coupling <= 1 and 0 <= r.between_coupling <= 1):
                raise ValidationError("couplings must lie in [0, 1]")
            if r.n_municipalities < 1 or r.cells_per_municipality < 1:
                raise ValidationError("regions need at least one municipality and one cell each")
        if self.n_days < 2:
            raise ValidationError("n_days must be at least 2")
        if self.slot_width_hours not in (1, 2):
            raise ValidationError("slot_width_hours must be 1 or 2")
        if len(self.profile) != 24 or min(self.profile) <= 0:
            raise ValidationError("profile must hold 24 positive values")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be non-negative")
        ids = self.region_ids()
        if len(set(ids)) != len(ids):
            raise ValidationError("region ids must be unique")

    def region_ids(self):
        return [r.region_id or f"R{k:02d}" for k, r in enumerate(self.regions)]

    def to_dict(self):
        d = asdict(self)
        d["regions"] = [asdict(r) for r in self.regions]
        d["profile"] = list(self.profile)
        return d


@dataclass(frozen=True)
class SynthDataset:
    grid: CellGrid
    assignment: Assignment
    hourly: ActivityCube
    overlaps: tuple
    region_map: dict
    centroids: pd.DataFrame
    covariates: pd.DataFrame
    truth: dict
    spec: SynthSpec

    @property
    def cube(self):
        return self.hourly.to_slot_width(self.spec.slot_width_hours)


def gaussian_mi_oracle(rho) -> float:
    """MI (nats) of a standard bivariate normal with correlation `rho`: ``-log(1 - rho**2) / 2``."""
    rho = float(rho)
    if not abs(rho) < 1:
        raise ValidationError("|rho| must be < 1")
    return -0.5 * math.log1p(-rho * rho)


def generate(spec: SynthSpec) -> SynthDataset:
    """Draw a dataset from the latent-factor model described in the module docstring."""
    n_days = spec.n_days
    profile = np.asarray(spec.profile)
    region_ids = spec.region_ids()
    n_cols = math.ceil(math.sqrt(len(spec.regions)))

    cells, overlaps, cell_counts, cell_ids = [], [], [], []
    assigned, region_map, truth_regions = {}, {}, {}
    for r, (rid, rs) in enumerate(zip(region_ids, spec.regions)):
        alpha, gamma = rs.within_coupling, rs.between_coupling
        w_noise = max(1.0 - alpha - gamma, 0.0)
        g_r = _rng(spec.seed, "region", r).standard_normal((n_days, 24))
        base_lon = 8.0 + 2.0 * (r % n_cols)
        base_lat = 38.0 + 2.0 * (r // n_cols)
        truth_regions[rid] = {
            "within_coupling": alpha,
            "between_coupling": gamma,
            "n_municipalities": rs.n_municipalities,
            "cells_per_municipality": rs.cells_per_municipality,
        }
        for m in range(rs.n_municipalities):
            mid = f"{rid}-M{m:02d}"
            region_map[mid] = rid
            g_m = _rng(spec.seed, "municipality", r, m).standard_normal((n_days, 24))
            for c in range(rs.cells_per_municipality):
                cid = f"{rid}-M{m:02d}-C{c:03d}"
                eps = _rng(spec.seed, "cell", r, m, c).standard_normal((n_days, 24))
                s = gamma * g_r + alpha * g_m + w_noise * eps
                lay = _rng(spec.seed, "layout", r, m, c)
                scale = float(np.exp(_rng(spec.seed, "scale", r, m, c).normal(0.0, 0.5)))
                counts = np.rint(scale * profile[None, :] * np.exp(spec.noise_sd * s)).astype(np.int64)
                # municipalities sit on a small grid inside the region, cells jittered around them
                lon = base_lon + 0.3 * (m % 3) + 0.05 * (c % 4) + lay.uniform(-0.01, 0.01)
                lat = base_lat + 0.3 * (m // 3) + 0.05 * (c // 4) + lay.uniform(-0.01, 0.01)
                area = float(np.exp(lay.uniform(math.log(0.05), math.log(30.0))))
                cells.append(Cell(cid, round(lon, 6), round(lat, 6), round(area, 4)))
                main = round(area * lay.uniform(0.6, 1.0), 4)
                overlaps.append((cid, mid, main))
                if rs.n_municipalities > 1 and area - main > 0:
                    other = f"{rid}-M{(m + 1) % rs.n_municipalities:02d}"
                    overlaps.append((cid, other, round(min(area - main, main * 0.5), 4)))
                assigned[cid] = (mid, rid)
                cell_ids.append(cid)
                cell_counts.append(counts)

    order = np.argsort(cell_ids, kind="stable")
    cell_ids = [cell_ids[i] for i in order]
    counts = np.stack([cell_counts[i] for i in order])
    hourly = ActivityCube(
        tuple(cell_ids), counts, np.zeros(counts.shape, dtype=bool), date.fromisoformat(spec.start_date), 1
    )
    grid = CellGrid(tuple(sorted(cells, key=lambda c: c.cell_id)))
    from .datamodel import region_centroids

    assignment = Assignment(assigned)
    centroids = region_centroids(grid, assignment)
    income = {rid: float(_rng(spec.seed, "covariate", r).normal(20000.0, 4000.0)) for r, rid in enumerate(region_ids)}
    covariates = pd.DataFrame({"income": income})
    covariates.index.name = "region_id"
    truth = {"seed": spec.seed, "regions": truth_regions, "spec": spec.to_dict()}
    return SynthDataset(
        grid, assignment, hourly, tuple(overlaps), region_map, centroids, covariates.sort_index(), truth, spec
    )


def synth_targets(table: pd.DataFrame, weights: dict, noise_sd=0.0, seed=0, intercept=0.0) -> pd.Series:
    """Linear target ``intercept + sum_c weights[c] * table[c] + noise``.

    Noise for a region is drawn from a stream keyed by its position in the
    sorted region ids, so row order of `table` does not matter.
    """
    missing = [c for c in weights if c not in table.columns]
    if missing:
        raise ValidationError(f"columns not in table: {missing}")
    y = pd.Series(float(intercept), index=table.index, dtype=float)
    for col, w in weights.items():
        y = y + float(w) * table[col].astype(float)
    if noise_sd:
        ids = sorted(table.index)
        eps = _rng(seed, "target").normal(0.0, float(noise_sd), len(ids))
        y = y + pd.Series(eps, index=ids).reindex(table.index)
    return y


def write_dataset(ds: SynthDataset, out_dir, targets: pd.DataFrame | None = None):
    """Write the data-model CSV schemas plus ``truth.json`` into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_activity(ds.hourly, out / "activity.csv")
    write_cells(ds.grid, out / "cells.csv")
    with (out / "overlaps.csv").open("w") as fh:
        fh.write("cell_id,municipality_id,overlap_km2\n")
        for cid, mid, km2 in ds.overlaps:
            fh.write(f"{cid},{mid},{km2!r}\n")
    with (out / "regions.csv").open("w") as fh:
        fh.write("municipality_id,region_id\n")
        for mid, rid in sorted(ds.region_map.items()):
            fh.write(f"{mid},{rid}\n")
    write_region_table(ds.covariates, out / "covariates.csv")
    if targets is not None:
        write_region_table(targets, out / "targets.csv")
    (out / "truth.json").write_text(json.dumps(ds.truth, indent=2, sort_keys=True) + "\n")
