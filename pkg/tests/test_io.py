import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lgcpvel import io
from lgcpvel.grid import PointPattern, ScalarField, SpatioTemporalGrid, VectorField
from lgcpvel.simulate import make_rng


def test_grid_round_trip_is_exact_with_missing(tmp_path):
    mask = np.ones((4, 3), bool)
    mask[2, 1] = False
    g = SpatioTemporalGrid(10.0, -5.5, 2.0, 4, 3, 5, 0.1, 0.3, 0.7, mask)
    vals = make_rng(0).lognormal(size=g.shape)
    vals[~mask] = np.nan
    vals[0, 0, 0] = 1e-300
    f = ScalarField(g, vals)
    io.write_grid_csv(f, tmp_path / "f.csv", "abc")
    back = io.read_grid_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(back.values, f.values)
    assert back.grid == g
    text = (tmp_path / "f.csv").read_text()
    assert text.startswith("# schema=lgcpvel.grid/1 config=abc\n")
    assert "np.float64" not in text


@given(st.integers(0, 2**31), st.integers(0, 30))
def test_pattern_round_trip(seed, n):
    ev = make_rng(seed).uniform(0, 1, (n, 3))
    p = PointPattern(ev, (0.0, 1.0, 0.0, 1.0), (0.0, 1.0))
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "p.csv"
        io.write_pattern_csv(p, path, "h")
        back = io.read_pattern_csv(path)
    np.testing.assert_array_equal(back.events, p.events)
    assert back.window == p.window and back.tspan == p.tspan


def test_pattern_without_header_uses_bounding_box_or_arguments(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("x, y, t\n1,2,3\n4,6,5\n")
    p = io.read_pattern_csv(path)
    assert p.window == (1.0, 4.0, 2.0, 6.0) and p.tspan == (3.0, 5.0)
    q = io.read_pattern_csv(path, (0, 10, 0, 10), (0, 10))
    assert q.window == (0, 10, 0, 10)


@pytest.mark.parametrize(
    "body, line, msg",
    [
        ("x,y,t\n1,2,3\n1,2\n", 3, "expected 3 fields"),
        ("x,y,t\n1,2,3\n1,abc,3\n", 3, "not a number"),
        ("x,y,t\n1,,3\n", 2, "empty coordinate"),
        ("a,b,c\n1,2,3\n", 1, "column header"),
    ],
)
def test_pattern_parse_errors_name_the_line(tmp_path, body, line, msg):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(io.ParseError, match=msg) as info:
        io.read_pattern_csv(path, (0, 1, 0, 1), (0, 1))
    assert info.value.lineno == line
    assert f"line {line}" in str(info.value)


def test_grid_parse_errors(tmp_path):
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    io.write_grid_csv(ScalarField(g, np.ones(g.shape)), tmp_path / "ok.csv")
    lines = (tmp_path / "ok.csv").read_text().split("\n")

    def variant(k, new):
        ls = list(lines)
        ls[k] = new
        p = tmp_path / f"v{k}.csv"
        p.write_text("\n".join(ls))
        return p

    with pytest.raises(io.ParseError, match="outside the grid"):
        io.read_grid_csv(variant(4, "9,0,0,0,0,0,1"))
    with pytest.raises(io.ParseError, match="line 5: not a number"):
        io.read_grid_csv(variant(4, "0,0,1,0,0,0,x"))
    with pytest.raises(io.ParseError, match="missing '# grid='"):
        io.read_grid_csv(variant(1, "# nothing"))
    short = tmp_path / "short.csv"
    short.write_text("\n".join(lines[:10]))
    with pytest.raises(io.ParseError, match="have no row"):
        io.read_grid_csv(short)


def test_table_csv_writes_missing_as_empty_and_reads_back(tmp_path):
    io.write_table_csv({"a": [1.0, np.nan], "b": [np.float64(0.1), 2]}, tmp_path / "t.csv", "demo", "h1")
    text = (tmp_path / "t.csv").read_text()
    assert text == "# schema=lgcpvel.demo/1 config=h1\na,b\n1.0,0.1\n,2.0\n"
    back = io.read_table_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back["a"], [1.0, np.nan])


def test_text_table_quotes_fields(tmp_path):
    io.write_text_table({"id": ["AC1"], "observed": ["r 0.9, p 0.1"]}, tmp_path / "r.csv", "report")
    assert tmp_path.joinpath("r.csv").read_text().splitlines()[2] == 'AC1,"r 0.9, p 0.1"'


def test_vector_field_table_long_format():
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    mag = np.full(g.shape, np.nan)
    vx = np.full(g.shape, np.nan)
    vy = np.full(g.shape, np.nan)
    mag[1, 1, 1], vx[1, 1, 1], vy[1, 1, 1] = 2.0, 0.6, 0.8
    tab = io.vector_field_table(VectorField(g, mag, vx, vy), [1])
    assert list(tab) == ["x", "y", "t", "smin", "vx", "vy"]
    assert len(tab["x"]) == 9
    k = int(np.flatnonzero(~np.isnan(tab["smin"]))[0])
    assert (tab["x"][k], tab["y"][k], tab["t"][k]) == (0.5, 0.5, 0.5)


def test_config_hash_is_order_independent():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})
