import numpy as np
import pytest

from dccm.dataset import (Dataset, GridSpec, axis_points, expected_count, export_csv,
                          find_generating_input, generate_dataset, grid_points, load_dataset,
                          save_dataset)
from dccm.errors import ConfigError, ParseError
from dccm.system_model import jacobians, step

from conftest import COARSE_CSTR_GRID


@pytest.fixture(scope="module")
def coarse(cstr):
    return generate_dataset(cstr, COARSE_CSTR_GRID)


def test_axis_counts():
    pts = axis_points(0.1, 1.1, 1 / 60)
    assert len(pts) == 61 and pts[0] == 0.1 and pts[-1] == pytest.approx(1.1, abs=1e-12)
    assert len(axis_points(-1, 1, 1 / 10)) == 21
    assert len(axis_points(0.3, 0.3 + 1e-3, 0.5)) == 1
    assert axis_points(0.3, 0.3 + 1e-3, 0.5)[0] == 0.3


def test_grid_points_order_last_axis_fastest():
    pts = grid_points([[0, 1], [0, 2]], 1.0)
    np.testing.assert_array_equal(pts[:3], [[0, 0], [0, 1], [0, 2]])


def test_nonpositive_step_rejected(cstr):
    with pytest.raises(ConfigError):
        axis_points(0, 1, 0.0)
    with pytest.raises(ConfigError):
        generate_dataset(cstr, GridSpec(-0.1, 0.1, 0.1))


def test_full_resolution_count(cstr):
    assert expected_count(cstr, GridSpec()) == 21 * 61 * 61 * 21 == 1_640_961


def test_coarse_count_and_content(cstr, coarse):
    assert len(coarse) == 5 * 11 * 11 * 11 == 6655
    assert coarse.skipped == 0
    idx = np.random.default_rng(0).choice(len(coarse), 50, replace=False)
    for i in idx:
        rec = coarse.records[i]
        u = find_generating_input(cstr, COARSE_CSTR_GRID, rec["r"], rec["x_k"], rec["x_k1"])
        assert u is not None
        np.testing.assert_array_equal(step(cstr, rec["r"], rec["x_k"], u), rec["x_k1"])
        A, B = jacobians(cstr, rec["r"], rec["x_k"], u)
        np.testing.assert_array_equal(A, rec["A"])
        np.testing.assert_array_equal(B, rec["B"])
    box = cstr.state_box
    outside = np.any((coarse.x_k1 < box[:, 0]) | (coarse.x_k1 > box[:, 1]), axis=1)
    np.testing.assert_array_equal(outside, coarse.out_of_box)


def test_single_point_grid():
    from dccm.system_model import make_linear
    model = make_linear([[0.5]], [[1.0]], [[0.0, 0.1]], [[0.0, 0.1]], [[0.0, 0.1]])
    ds = generate_dataset(model, GridSpec(1.0, 1.0, 1.0))
    assert len(ds) == 1


def test_workers_do_not_change_output(cstr, coarse):
    par = generate_dataset(cstr, COARSE_CSTR_GRID, workers=4)
    assert par.records.tobytes() == coarse.records.tobytes()


def test_round_trip_bitwise(tmp_path, coarse):
    p = tmp_path / "ds.bin"
    save_dataset(coarse, p)
    back = load_dataset(p)
    assert back.records.tobytes() == coarse.records.tobytes()
    assert (back.n, back.m, back.ell, back.model_name) == (2, 1, 1, "cstr")
    p2 = tmp_path / "ds2.bin"
    save_dataset(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_empty_round_trip(tmp_path, coarse):
    empty = coarse.subset(np.zeros(len(coarse), dtype=bool))
    save_dataset(empty, tmp_path / "e.bin")
    assert len(load_dataset(tmp_path / "e.bin")) == 0


def test_truncated_file_names_offset(tmp_path, coarse):
    p = tmp_path / "ds.bin"
    save_dataset(coarse, p)
    data = p.read_bytes()
    p.write_bytes(data[:-100])
    with pytest.raises(ParseError, match="byte offset"):
        load_dataset(p)
    p.write_bytes(data[:10])
    with pytest.raises(ParseError, match="byte offset"):
        load_dataset(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOTMAGIC" + bytes(20))
    with pytest.raises(ParseError, match="magic"):
        load_dataset(p)


def test_csv_export(tmp_path, coarse):
    small = coarse.subset(slice(0, 5))
    export_csv(small, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == 6
    assert lines[0].startswith("r1,x1,x2,x1_next,x2_next,A11")
    assert float(lines[1].split(",")[1]) == small.x_k[0, 0]


def test_from_arrays():
    ds = Dataset.from_arrays([[0.0]], [[0.5]], [[1.0]], [[[2.0]]], [[[1.0]]])
    assert len(ds) == 1 and ds.A[0, 0, 0] == 2.0
