import json

import pytest

from cellsync.cli import main, synth_design

SMALL = ["--n-regions", "8", "--n-municipalities", "3", "--cells-per-municipality", "4", "--n-days", "10"]


def _inputs(d):
    return [
        "--activity", str(d / "activity.csv"),
        "--cells", str(d / "cells.csv"),
        "--overlaps", str(d / "overlaps.csv"),
        "--regions", str(d / "regions.csv"),
        "--covariates", str(d / "covariates.csv"),
        "--targets", str(d / "targets.csv"),
    ]


def run_pipeline(data, out, *extra):
    codes = [
        main(["sync", *_inputs(data), "--out", str(out), *extra]),
        main(["screen", *_inputs(data), "--out", str(out), "--permutations", "99", *extra]),
        main(["regress", *_inputs(data), "--out", str(out), *extra]),
        main(["report", "--out", str(out)]),
    ]
    return codes


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(d), "--seed", "3", *SMALL]) == 0
    return d


def test_full_pipeline(synth_dir, tmp_path):
    assert run_pipeline(synth_dir, tmp_path) == [0, 0, 0, 0]
    for name in ("sync.csv", "pairs.csv", "violin.csv", "diagnostics.json", "moran.csv", "importance.json",
                 "importance_summary.csv", "dominance.csv", "correlation.csv", "report.json", "run_config.json"):
        assert (tmp_path / name).exists(), name
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["importance"]["targets"]) == {"referendum_turnout", "blood_donations", "association_density"}
    assert set(rep["config"]) == {"sync", "screen", "regress"}


def test_missing_upstream_artifact(synth_dir, tmp_path, capsys):
    assert main(["regress", *_inputs(synth_dir), "--out", str(tmp_path)]) == 2
    assert "cellsync sync" in capsys.readouterr().err


def test_missing_input_flag(tmp_path, capsys):
    assert main(["sync", "--out", str(tmp_path)]) == 2
    assert "--activity" in capsys.readouterr().err


def test_malformed_input_exit_code(tmp_path, synth_dir, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("cell_id,ts,count\nx,2015-04-01T00:00Z,-1\n")
    args = ["sync", "--activity", str(bad), "--overlaps", str(synth_dir / "overlaps.csv"),
            "--regions", str(synth_dir / "regions.csv"), "--out", str(tmp_path / "o")]
    assert main(args) == 2
    assert "bad.csv:2:" in capsys.readouterr().err


def test_slot_width_recorded(synth_dir, tmp_path):
    assert main(["sync", *_inputs(synth_dir), "--out", str(tmp_path), "--slot-width-hours", "2"]) == 0
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["slot_width_hours"] == 2 and diag["n_slots"] == 12


def test_config_replay(synth_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sync", *_inputs(synth_dir), "--out", str(a), "--bins", "3"]) == 0
    assert main(["sync", "--config", str(a / "run_config.json"), "--out", str(b)]) == 0
    assert (a / "sync.csv").read_bytes() == (b / "sync.csv").read_bytes()


def test_knn_weights_and_options(synth_dir, tmp_path):
    out = tmp_path
    assert main(["sync", *_inputs(synth_dir), "--out", str(out), "--max-pairs", "5", "--no-pairs"]) == 0
    assert not (out / "pairs.csv").exists()
    assert main(["screen", *_inputs(synth_dir), "--out", str(out), "--weights", "knn", "--knn-k", "3",
                 "--permutations", "49"]) == 0
    assert "k-nearest" in (out / "moran.csv").read_text()


def test_synth_design_groups():
    d = synth_design(6, 2, 2)
    assert [r.within_coupling for r in d] == [0.8, 0.2] * 3
    assert sorted(r.between_coupling for r in d[::2]) == sorted(r.between_coupling for r in d[1::2])
