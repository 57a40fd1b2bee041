"""Command-line pipeline: ``synth``, ``sync``, ``screen``, ``regress``, ``report``.

Stages hand off through files in the ``--out`` directory. Each stage
records its configuration under its own key in ``run_config.json``;
``--config`` replays a recorded stage.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, kernels
from .datamodel import (
    assign_cells,
    load_activity,
    load_cells,
    load_region_table,
    read_overlaps,
    read_region_map,
    region_centroids,
)
from .errors import CellsyncError, MissingArtifactError, NumericalError, ValidationError
from .importance import (
    DesignSpec,
    correlation_matrix,
    importance_report,
    write_correlation_csv,
    write_dominance_csv,
    write_importance_summary,
)
from .normalize import export_zscores, hourly_zscore
from .spatial import build_weights, morans_i, write_moran_csv
from .sync import (
    UNITS,
    MiConfig,
    read_sync_csv,
    sync_all,
    sync_distribution_export,
    sync_table,
    write_pairs_csv,
    write_sync_csv,
)
from .synthgen import RegionSpec, SynthSpec, generate, synth_targets, write_dataset

log = logging.getLogger("cellsync")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
SYNC_REGRESSORS = ("between_sync", "within_sync")

# synthetic targets: positive in within sync, negative in between sync
SYNTH_TARGETS = {
    "referendum_turnout": {"within_sync": 1.0, "between_sync": -1.0, "income": 2e-5},
    "blood_donations": {"within_sync": 20.0, "between_sync": -25.0, "income": 5e-4},
    "association_density": {"within_sync": 20.0, "between_sync": -20.0, "income": 1e-3},
}
SYNTH_TARGET_NOISE = {"referendum_turnout": 0.05, "blood_donations": 1.0, "association_density": 1.5}


@dataclass
class RunConfig:
    command: str = ""
    activity: str | None = None
    cells: str | None = None
    overlaps: str | None = None
    regions: str | None = None
    covariates: str | None = None
    targets: str | None = None
    slot_width_hours: int = 1
    bins: int = 4
    bias_correction: str = "mm"
    min_valid_slots: int | None = None
    max_pairs: int | None = None
    weights: str = "invdist"
    knn_k: int = 4
    permutations: int = 9999
    seed: int = 0
    threads: int = 1
    out: str = "out"
    target_names: list = field(default_factory=list)
    covariate_names: list = field(default_factory=list)
    write_pairs: bool = True
    export_zscores: bool = False
    n_regions: int = 16
    n_municipalities: int = 5
    cells_per_municipality: int = 10
    n_days: int = 30

    def mi_config(self):
        return MiConfig(
            n_bins=self.bins,
            bias_correction="miller-madow" if self.bias_correction in ("mm", "miller-madow") else "none",
            min_valid_slots_per_day=self.min_valid_slots,
            max_pairs_per_class=self.max_pairs,
            seed=self.seed if self.max_pairs is not None else None,
        )

    @property
    def out_dir(self):
        return Path(self.out)


def _record_config(cfg: RunConfig):
    path = cfg.out_dir / "run_config.json"
    recorded = json.loads(path.read_text()) if path.exists() else {}
    recorded[cfg.command] = asdict(cfg)
    path.write_text(json.dumps(recorded, indent=2, sort_keys=True) + "\n")


def _need(path, what, flag):
    if not path:
        raise ValidationError(f"{what} required ({flag})")
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{flag} {p}: no such file")
    return p


def _upstream(cfg, name, command):
    p = cfg.out_dir / name
    if not p.exists():
        raise MissingArtifactError(f"{p} not found; run `cellsync {command}` first")
    return p


def _assignment(cfg, cells=None):
    overlaps = read_overlaps(_need(cfg.overlaps, "overlaps file", "--overlaps"))
    region_map = read_region_map(_need(cfg.regions, "region map", "--regions"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assignment = assign_cells(overlaps, region_map, cells=cells)
    for w in caught:
        log.warning("%s", w.message)
    return assignment


# ---------------------------------------------------------------------------
# Stages


def synth_design(n_regions, n_municipalities, cells_per_municipality):
    """Two interleaved region groups (within coupling 0.8 / 0.2), each sweeping the between coupling over [0, 0.6]."""
    half = (n_regions + 1) // 2
    gammas = np.linspace(0.0, 0.6, half)
    out = []
    for r in range(n_regions):
        high = r % 2 == 0
        g = gammas[r // 2] if high else gammas[::-1][r // 2]
        out.append(RegionSpec(n_municipalities, cells_per_municipality, 0.8 if high else 0.2, round(float(g), 6)))
    return tuple(out)


def cmd_synth(cfg: RunConfig):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec(
        synth_design(cfg.n_regions, cfg.n_municipalities, cfg.cells_per_municipality),
        n_days=cfg.n_days,
        slot_width_hours=cfg.slot_width_hours,
        seed=cfg.seed,
    )
    ds = generate(spec)
    z = hourly_zscore(ds.cube)
    table = sync_table(sync_all(ds.assignment, z, cfg.mi_config(), cfg.threads)).join(ds.covariates)
    targets = pd.DataFrame(
        {
            name: synth_targets(table, w, SYNTH_TARGET_NOISE[name], seed=cfg.seed + k)
            for k, (name, w) in enumerate(SYNTH_TARGETS.items())
        }
    )
    targets.index.name = "region_id"
    write_dataset(ds, out, targets.sort_index())
    truth_path = out / "truth.json"
    truth = json.loads(truth_path.read_text())
    truth["targets"] = {"weights": SYNTH_TARGETS, "noise_sd": SYNTH_TARGET_NOISE}
    truth_path.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    _record_config(cfg)
    log.info("wrote synthetic dataset (%d regions, %d cells) to %s", len(spec.regions), len(ds.grid), out)


def cmd_sync(cfg: RunConfig):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    mi_cfg = cfg.mi_config()
    cube = load_activity(_need(cfg.activity, "activity file", "--activity"), cfg.slot_width_hours)
    grid = load_cells(cfg.cells) if cfg.cells else None
    assignment = _assignment(cfg, cells=[c.cell_id for c in grid.cells] if grid else None)
    zcube = hourly_zscore(cube)
    summaries = sync_all(assignment, zcube, mi_cfg, cfg.threads)
    if not summaries:
        raise ValidationError("no region has at least 2 cells with activity")
    write_sync_csv(summaries, out / "sync.csv")
    if cfg.write_pairs:
        write_pairs_csv(summaries, out / "pairs.csv")
    sync_distribution_export(summaries, out / "violin.csv")
    if cfg.export_zscores:
        export_zscores(zcube, out / "zscores.csv")
    diagnostics = {
        "units": UNITS,
        "slot_width_hours": cube.slot_width_hours,
        "n_slots": cube.n_slots,
        "n_days": cube.n_days,
        "n_cells": cube.n_cells,
        "degenerate_slots": zcube.n_degenerate(),
        "cells_without_activity": sorted(set(assignment.cells) - set(cube.cell_ids)),
        "excluded_cells": [list(e) for e in assignment.excluded],
        "regions": {
            s.region_id: {
                "n_cells": s.n_cells,
                "dropped_pairs": s.dropped_pairs,
                "within_n": s.within.n_pairs if s.within else 0,
                "between_n": s.between.n_pairs if s.between else 0,
            }
            for s in summaries
        },
        "mi_config": asdict(mi_cfg),
    }
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    _record_config(cfg)
    log.info("sync: %d regions -> %s", len(summaries), out / "sync.csv")


def _region_dataset(cfg):
    sync = read_sync_csv(_upstream(cfg, "sync.csv", "sync"))
    ds = load_region_table(
        _need(cfg.covariates, "covariates file", "--covariates"), _need(cfg.targets, "targets file", "--targets")
    )
    for role, ids in ds.unmatched.items():
        log.warning("regions only in %s: %s", role, ", ".join(ids))
    return ds.with_sync(sync)


def cmd_screen(cfg: RunConfig):
    data = _region_dataset(cfg)
    grid = load_cells(_need(cfg.cells, "cells file", "--cells"))
    assignment = _assignment(cfg, cells=[c.cell_id for c in grid.cells])
    cents = region_centroids(grid, assignment)
    results = []
    variables = [*SYNC_REGRESSORS, *data.covariates, *data.targets]
    for k, var in enumerate(variables):
        col = data.table[var].dropna()
        ids = [r for r in col.index if r in cents.index]
        if len(ids) < 3:
            log.warning("Moran's I skipped for %s: fewer than 3 regions", var)
            continue
        W = build_weights(cents.loc[ids], cfg.weights, k=cfg.knn_k)
        results.append(morans_i(col.loc[ids].to_numpy(), W, cfg.permutations, cfg.seed + k, var))
    write_moran_csv(results, cfg.out_dir / "moran.csv")
    _record_config(cfg)


def cmd_regress(cfg: RunConfig):
    data = _region_dataset(cfg)
    covs = list(cfg.covariate_names) or list(data.covariates)
    targets = list(cfg.target_names) or list(data.targets)
    unknown = [c for c in [*covs, *targets] if c not in data.table.columns]
    if unknown:
        raise ValidationError(f"unknown columns: {unknown}")
    regressors = [*SYNC_REGRESSORS, *covs]
    reports = [importance_report(DesignSpec.from_frame(data.table, t, regressors)) for t in targets]
    out = cfg.out_dir
    payload = {
        "units": {"sync": UNITS},
        "regressors": regressors,
        "targets": {rep.target: rep.to_dict() for rep in reports},
    }
    (out / "importance.json").write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
    write_importance_summary(reports, out / "importance_summary.csv")
    write_dominance_csv(reports, out / "dominance.csv")
    r, _ = correlation_matrix(data.table, [*SYNC_REGRESSORS, *data.covariates, *data.targets])
    write_correlation_csv(r, out / "correlation.csv")
    _record_config(cfg)


def _versions():
    import scipy

    return {
        "cellsync": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "mi_kernel_backend": kernels.BACKEND,
    }


def cmd_report(cfg: RunConfig):
    out = cfg.out_dir
    sync_path = _upstream(cfg, "sync.csv", "sync")
    imp_path = _upstream(cfg, "importance.json", "regress")
    sync = pd.read_csv(sync_path, dtype={"region_id": str}, float_precision="round_trip")
    moran_path = out / "moran.csv"
    bundle = {
        "config": json.loads((out / "run_config.json").read_text()) if (out / "run_config.json").exists() else {},
        "versions": _versions(),
        "sync": json.loads(sync.to_json(orient="records")),
        "diagnostics": json.loads((out / "diagnostics.json").read_text())
        if (out / "diagnostics.json").exists()
        else None,
        "moran": json.loads(pd.read_csv(moran_path, float_precision="round_trip").to_json(orient="records"))
        if moran_path.exists()
        else None,
        "importance": json.loads(imp_path.read_text()),
    }
    (out / "report.json").write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n")
    _record_config(cfg)


COMMANDS = {"synth": cmd_synth, "sync": cmd_sync, "screen": cmd_screen, "regress": cmd_regress, "report": cmd_report}


# ---------------------------------------------------------------------------
# Argument parsing


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="replay a stage recorded in a run_config.json")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--activity")
    common.add_argument("--cells")
    common.add_argument("--overlaps")
    common.add_argument("--regions")
    common.add_argument("--covariates")
    common.add_argument("--targets")
    common.add_argument("--slot-width-hours", type=int, choices=(1, 2))
    common.add_argument("--bins", type=int)
    common.add_argument("--bias-correction", choices=("none", "mm"))
    common.add_argument("--min-valid-slots", type=int, help="jointly valid slots per usable day (default: all)")
    common.add_argument("--max-pairs", type=int, help="subsample pairs per region and class")
    common.add_argument("--weights", choices=("invdist", "knn"))
    common.add_argument("--knn-k", type=int)
    common.add_argument("--permutations", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--target-names", type=_csv_list, help="comma-separated target columns (default: all)")
    common.add_argument("--covariate-names", type=_csv_list, help="comma-separated covariates (default: all)")
    common.add_argument("--no-pairs", dest="write_pairs", action="store_const", const=False)
    common.add_argument("--export-zscores", action="store_const", const=True)
    common.add_argument("--n-regions", type=int)
    common.add_argument("--n-municipalities", type=int)
    common.add_argument("--cells-per-municipality", type=int)
    common.add_argument("--n-days", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cellsync", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic dataset",
        "sync": "z-score activity and compute within/between synchronization",
        "screen": "Moran's I screen of region-level variables",
        "regress": "OLS and variable-importance analysis per target",
        "report": "bundle all stage outputs into report.json",
    }
    for name, h in helps.items():
        sub.add_parser(name, parents=[common], help=h)
    return parser


def config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        recorded = json.loads(Path(args.config).read_text())
        if args.command not in recorded:
            raise ValidationError(f"{args.config} has no recorded `{args.command}` stage")
        base = recorded[args.command]
    names = {f.name for f in fields(RunConfig)}
    values = {k: v for k, v in base.items() if k in names}
    for k, v in vars(args).items():
        if k in names and v is not None:
            values[k] = v
    values["command"] = args.command
    return RunConfig(**values)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[cfg.command](cfg)
    except NumericalError as exc:
        print(f"cellsync {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, NotImplementedError, OSError) as exc:
        print(f"cellsync {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CellsyncError as exc:
        print(f"cellsync {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
