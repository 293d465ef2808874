import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfknots.data import Dataset, default_padding, load_dataset, make_intervals, save_dataset
from mfknots.errors import DuplicateInput, EmptyDataset, PaddingTooSmall, ParseError

reals = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw, max_size=10):
    xs = draw(st.lists(reals, min_size=1, max_size=max_size, unique=True))
    ys = draw(st.lists(reals, min_size=len(xs), max_size=len(xs)))
    return Dataset.from_points(zip(xs, ys))


def test_load_counterexample_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("-10,2\n10,2\n")
    ds = load_dataset(p)
    assert ds == Dataset((-10.0, 10.0), (2.0, 2.0))
    assert ds.M == 2


def test_load_sorts_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y\n3,1\n-1,0\n0.5,2\n")
    assert load_dataset(p).x == (-1.0, 0.5, 3.0)


def test_duplicate_input_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1\n0,2\n")
    with pytest.raises(DuplicateInput):
        load_dataset(p)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y\n1,2\n3,abc\n")
    with pytest.raises(ParseError) as err:
        load_dataset(p)
    assert err.value.line == 3


def test_wrong_column_count(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2,3\n")
    with pytest.raises(ParseError):
        load_dataset(p)


def test_empty_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y\n")
    with pytest.raises(EmptyDataset):
        load_dataset(p)


def test_json_format(tmp_path):
    p = tmp_path / "d.json"
    p.write_text('{"points": [[1, 2], [-1, 0]]}')
    assert load_dataset(p).points == [[-1.0, 0.0], [1.0, 2.0]]
    p.write_text('{"pts": []}')
    with pytest.raises(ParseError):
        load_dataset(p)


def test_unsorted_constructor_rejected():
    with pytest.raises(ParseError):
        Dataset((1.0, 0.0), (0.0, 0.0))
    with pytest.raises(ParseError):
        Dataset((0.0, float("nan")), (0.0, 0.0))


@given(datasets(), st.sampled_from(["csv", "json"]))
def test_save_load_round_trip(tmp_path_factory, ds, fmt):
    p = tmp_path_factory.mktemp("rt") / f"d.{fmt}"
    save_dataset(ds, p)
    assert load_dataset(p) == ds


def test_intervals_examples():
    ds = Dataset((-10.0, 10.0), (2.0, 2.0))
    assert make_intervals(ds, 15).intervals == [(-15.0, -10.0), (-10.0, 10.0), (10.0, 15.0)]
    assert make_intervals(Dataset((0.0,), (1.0,)), 1).intervals == [(-1.0, 0.0), (0.0, 1.0)]
    with pytest.raises(PaddingTooSmall):
        make_intervals(ds, 5)
    assert make_intervals(ds).L == default_padding(ds) == 16.0


@given(datasets(max_size=6), st.floats(0.01, 10))
def test_intervals_tile_and_locate_monotone(ds, extra):
    iv = make_intervals(ds, max(abs(v) for v in ds.x) * 1.1 + extra)
    ivs = iv.intervals
    assert len(ivs) == ds.M + 1
    assert ivs[0][0] == -iv.L and ivs[-1][1] == iv.L
    assert all(a[1] == b[0] for a, b in zip(ivs, ivs[1:]))
    xs = np.linspace(-iv.L, iv.L, 257)
    idx = [iv.locate(x) for x in xs]
    assert all(b >= a for a, b in zip(idx, idx[1:]))
    for j, x in enumerate(ds.x):
        # shared endpoints belong to the left interval
        assert iv.locate(x) == j
