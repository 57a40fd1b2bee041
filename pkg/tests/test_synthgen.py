import json

import numpy as np
import pandas as pd
import pytest

from cellsync.datamodel import assign_cells, load_activity, read_overlaps, read_region_map
from cellsync.errors import ValidationError
from cellsync.synthgen import RegionSpec, SynthSpec, generate, synth_targets, write_dataset


def test_shapes_and_ids(small_dataset):
    ds = small_dataset
    assert ds.hourly.counts.shape == (12 + 12 + 10, 12, 24)
    assert list(ds.hourly.cell_ids) == sorted(ds.hourly.cell_ids)
    assert list(ds.assignment.region_ids()) == ["A", "B", "C"]
    assert (ds.hourly.counts >= 0).all()
    assert list(ds.centroids.index) == ["A", "B", "C"]


def test_same_seed_same_data():
    spec = SynthSpec((RegionSpec(2, 3),), n_days=5, seed=3)
    a, b = generate(spec), generate(spec)
    np.testing.assert_array_equal(a.hourly.counts, b.hourly.counts)
    c = generate(SynthSpec((RegionSpec(2, 3),), n_days=5, seed=4))
    assert not np.array_equal(a.hourly.counts, c.hourly.counts)


def test_entities_draw_from_own_streams():
    one = generate(SynthSpec((RegionSpec(2, 3),), n_days=5, seed=3))
    two = generate(SynthSpec((RegionSpec(2, 3), RegionSpec(4, 4)), n_days=5, seed=3))
    ids = list(one.hourly.cell_ids)
    np.testing.assert_array_equal(two.hourly.subset(ids).counts, one.hourly.counts)


def test_latent_couplings_visible_in_log_counts():
    ds = generate(SynthSpec((RegionSpec(2, 2, 0.9, 0.0, "R"),), n_days=40, noise_sd=0.3, seed=1))
    logc = np.log(ds.hourly.counts.astype(float) + 1)
    z = (logc - logc.mean(axis=1, keepdims=True)).reshape(4, -1)
    r = np.corrcoef(z)
    # cells 0,1 share a municipality; 0,2 do not and the region factor is off
    assert r[0, 1] > 0.8
    assert abs(r[0, 2]) < 0.1


def test_written_files_reassemble(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path)
    cube = load_activity(tmp_path / "activity.csv")
    np.testing.assert_array_equal(cube.counts, small_dataset.hourly.counts)
    asg = assign_cells(read_overlaps(tmp_path / "overlaps.csv"), read_region_map(tmp_path / "regions.csv"))
    assert dict(asg.cells) == dict(small_dataset.assignment.cells)
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["regions"]["A"]["within_coupling"] == 0.8


def test_slot_width_two():
    ds = generate(SynthSpec((RegionSpec(2, 2),), n_days=3, slot_width_hours=2))
    assert ds.cube.n_slots == 12
    assert ds.cube.counts.sum() == ds.hourly.counts.sum()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"regions": ()},
        {"regions": (RegionSpec(within_coupling=1.2),)},
        {"n_days": 1},
        {"slot_width_hours": 3},
        {"profile": (1.0,) * 23},
        {"regions": (RegionSpec(region_id="X"), RegionSpec(region_id="X"))},
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ValidationError):
        SynthSpec(**kwargs)


def test_targets_independent_of_row_order():
    t = pd.DataFrame({"a": [1.0, 2.0, 3.0]}, index=["R2", "R0", "R1"])
    y1 = synth_targets(t, {"a": 2.0}, noise_sd=1.0, seed=5)
    y2 = synth_targets(t.sort_index(), {"a": 2.0}, noise_sd=1.0, seed=5)
    pd.testing.assert_series_equal(y1.sort_index(), y2)
    with pytest.raises(ValidationError):
        synth_targets(t, {"b": 1.0})
