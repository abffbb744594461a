import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fungraph.errors import DimensionError, InsufficientSamplesError, ParseError, ValidationError
from fungraph.functional import (
    FunctionalDataset,
    Grid,
    center_dataset,
    inner_product,
    load_dataset,
    save_dataset,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_grid_points_are_uniform_midpoints():
    g = Grid(0.0, 2.0, 8)
    pts = g.points
    assert pts[0] == pytest.approx(0.125)
    assert np.all(np.diff(pts) > 0)
    assert np.max(np.abs(np.diff(pts) - g.delta)) < 1e-9 * (g.b - g.a)
    assert pts[-1] < g.b


@pytest.mark.parametrize("a, b, T", [(1.0, 1.0, 10), (0.0, 1.0, 1), (0.0, np.inf, 10), (0.0, 1.0, 20_000)])
def test_grid_rejects_bad_input(a, b, T):
    with pytest.raises(ValidationError):
        Grid(a, b, T)


def test_inner_product_of_constants():
    g = Grid(0, 1, 100)
    one = np.ones(100)
    assert inner_product(one, one, g) == pytest.approx(1.0, abs=1e-14)
    assert inner_product(one, -one, g) == pytest.approx(-1.0, abs=1e-14)


def test_sin_cos_orthogonal():
    g = Grid(0, 1, 100)
    t = g.points
    f = np.sqrt(2) * np.sin(2 * np.pi * t)
    h = np.sqrt(2) * np.cos(2 * np.pi * t)
    assert abs(inner_product(f, h, g)) < 1e-10


def test_inner_product_grid_mismatch():
    with pytest.raises(DimensionError):
        inner_product(np.ones(5), np.ones(6), Grid(0, 1, 5))


@given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite),
       arrays(np.float64, 12, elements=finite), finite, finite)
def test_inner_product_bilinear_and_positive(f, g, h, alpha, beta):
    grid = Grid(0, 1, 12)
    lhs = inner_product(alpha * f + beta * g, h, grid)
    rhs = alpha * inner_product(f, h, grid) + beta * inner_product(g, h, grid)
    scale = grid.delta * (np.abs(alpha * f) + np.abs(beta * g)) @ np.abs(h)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, scale)
    assert inner_product(f, f, grid) >= 0
    assert inner_product(f, g, grid) == inner_product(g, f, grid)
    assert (inner_product(f, f, grid) == 0) == (not np.any(f))


def test_dataset_validation():
    g = Grid(0, 1, 4)
    with pytest.raises(DimensionError):
        FunctionalDataset(g, np.zeros((2, 1, 4)))
    with pytest.raises(DimensionError):
        FunctionalDataset(g, np.zeros((2, 2, 5)))
    bad = np.zeros((2, 2, 4))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValidationError):
        FunctionalDataset(g, bad)


def test_center_two_point_mean():
    g = Grid(0, 1, 3)
    v = np.zeros((2, 2, 3))
    v[1, 0, 1] = 2.0
    out = center_dataset(FunctionalDataset(g, v)).values
    assert out[0, 0, 1] == -1.0 and out[1, 0, 1] == 1.0


def test_center_symmetric_pair_unchanged():
    g = Grid(0, 1, 3)
    v = np.stack([np.full((2, 3), 1.5), np.full((2, 3), -1.5)])
    assert np.array_equal(center_dataset(FunctionalDataset(g, v)).values, v)


def test_center_needs_two_samples():
    with pytest.raises(InsufficientSamplesError):
        center_dataset(FunctionalDataset(Grid(0, 1, 3), np.ones((1, 2, 3))))


@given(arrays(np.float64, (4, 2, 5), elements=finite))
def test_center_properties(values):
    ds = FunctionalDataset(Grid(0, 1, 5), values)
    c = center_dataset(ds)
    assert np.max(np.abs(c.values.mean(axis=0))) <= 1e-12 * max(1.0, np.max(np.abs(values)))
    assert np.allclose(center_dataset(c).values, c.values, atol=1e-12 * max(1.0, np.max(np.abs(values))))
    diff_in = values[1] - values[0]
    diff_out = c.values[1] - c.values[0]
    assert np.allclose(diff_in, diff_out, atol=1e-12 * max(1.0, np.max(np.abs(values))))


@pytest.mark.parametrize("fmt, suffix", [("binary", ".fgm"), ("csv", ".csv")])
def test_round_trip(tmp_path, rng, fmt, suffix):
    ds = FunctionalDataset(Grid(-1.0, 3.0, 5), rng.standard_normal((3, 2, 5)))
    path = tmp_path / f"data{suffix}"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.grid == ds.grid
    if fmt == "binary":
        assert np.array_equal(back.values, ds.values)
    else:
        assert np.max(np.abs(back.values - ds.values)) <= 1e-12


def test_csv_without_sidecar_defaults_to_unit_interval(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("sample,node,t_1,t_2\n1,a,0.5,1\n1,b,2,3\n")
    ds = load_dataset(path)
    assert ds.grid == Grid(0.0, 1.0, 2)
    assert ds.values.shape == (1, 2, 2)


def test_csv_short_row_names_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("sample,node,t_1,t_2,t_3\n1,a,1,2,3\n1,b,1,2\n")
    with pytest.raises(ParseError, match="row 3"):
        load_dataset(path)


def test_csv_non_numeric_names_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("sample,node,t_1,t_2\n1,a,1,x\n1,b,1,2\n")
    with pytest.raises(ParseError, match="row 2, column 4"):
        load_dataset(path)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("id,node,t_1,t_2\n1,a,1,2\n")
    with pytest.raises(ParseError, match="header"):
        load_dataset(path)


@pytest.mark.parametrize("suffix", [".csv", ".fgm"])
def test_empty_file_has_no_samples(tmp_path, suffix):
    path = tmp_path / f"empty{suffix}"
    path.write_bytes(b"")
    with pytest.raises(ParseError, match="no samples"):
        load_dataset(path)


def test_binary_bad_magic_and_truncation(tmp_path, rng):
    ds = FunctionalDataset(Grid(0, 1, 4), rng.standard_normal((2, 2, 4)))
    path = tmp_path / "d.fgm"
    save_dataset(ds, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ParseError, match="expected"):
        load_dataset(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ParseError, match="magic"):
        load_dataset(path)


def test_sidecar_grid_mismatch(tmp_path, rng):
    ds = FunctionalDataset(Grid(0, 1, 4), rng.standard_normal((2, 2, 4)))
    path = tmp_path / "d.csv"
    save_dataset(ds, path)
    (tmp_path / "d.csv.grid.json").write_text('{"a": 0, "b": 1, "T": 7}')
    with pytest.raises(ParseError, match="T=7"):
        load_dataset(path)
