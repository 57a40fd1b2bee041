import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellsync.errors import ValidationError, ZeroVarianceError
from cellsync.spatial import SpatialWeights, build_weights, great_circle_km, morans_i, write_moran_csv


def rook(n_side):
    n = n_side * n_side
    w = np.zeros((n, n))
    for r in range(n_side):
        for c in range(n_side):
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < n_side and 0 <= cc < n_side:
                    w[r * n_side + c, rr * n_side + cc] = 1
    return SpatialWeights.from_matrix(w)


def test_great_circle_quarter_meridian():
    d = great_circle_km([0, 0], [0, 90])
    assert d[0, 1] == pytest.approx(np.pi / 2 * 6371.0088, rel=1e-12)


def test_equidistant_points_get_equal_weights():
    w = build_weights([[0, 0], [90, 0], [0, 90]]).matrix
    np.testing.assert_allclose(w, (1 - np.eye(3)) * 0.5, atol=1e-12)


def test_rows_sum_to_one(rng):
    xy = np.column_stack([rng.uniform(6, 18, 16), rng.uniform(37, 47, 16)])
    for scheme in ("inverse-distance", "k-nearest"):
        w = build_weights(xy, scheme, k=4).matrix
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert (np.diag(w) == 0).all()


def test_knn_ties_go_to_first_listed():
    # points on the equator; the middle point has two equidistant neighbours
    w = build_weights([[0, 0], [1, 0], [2, 0], [5, 0]], "k-nearest", k=1).matrix
    assert w[1, 0] == 1.0 and w[1, 2] == 0.0
    assert w[3, 2] == 1.0


def test_coincident_and_too_few():
    with pytest.raises(ValidationError):
        build_weights([[0, 0], [0, 0], [1, 1]])
    with pytest.raises(ValidationError):
        build_weights([[0, 0], [1, 1]])


def test_checkerboard_negative():
    x = np.array([(r + c) % 2 for r in range(4) for c in range(4)], float)
    res = morans_i(x, rook(4), 999, seed=1)
    assert res.I == pytest.approx(-1.0)
    assert res.p_value < 0.01


def test_clustered_positive():
    x = np.array([c >= 2 for r in range(4) for c in range(4)], float)
    res = morans_i(x, rook(4), 999, seed=1)
    assert res.I > 0.5 and res.p_value < 0.01


def test_expected_value_under_null():
    w = rook(4)
    stats = [morans_i(np.random.default_rng(s).standard_normal(16), w, 0).I for s in range(2000)]
    assert abs(np.mean(stats) - (-1 / 15)) <= 0.02


def test_p_value_reproducible_and_bounded(rng):
    x = rng.standard_normal(16)
    a = morans_i(x, rook(4), 500, seed=5)
    assert a == morans_i(x, rook(4), 500, seed=5)
    assert 1 / 501 <= a.p_value <= 1.0
    assert a.expected_I == pytest.approx(-1 / 15)


def test_zero_variance():
    with pytest.raises(ZeroVarianceError):
        morans_i(np.ones(16), rook(4))


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.01, 100), b=st.floats(-100, 100), seed=st.integers(0, 1000))
def test_affine_invariance(a, b, seed):
    x = np.random.default_rng(seed).standard_normal(16)
    w = rook(4)
    r0 = morans_i(x, w, 99, seed=seed)
    r1 = morans_i(a * x + b, w, 99, seed=seed)
    assert r1.I == pytest.approx(r0.I, abs=1e-9)


def test_writer(tmp_path, rng):
    write_moran_csv([morans_i(rng.standard_normal(16), rook(4), 9, variable="v")], tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "variable,I,expected_I,p_value,n_permutations,seed,scheme"
    assert lines[1].startswith("v,")
