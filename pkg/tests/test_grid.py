import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lgcpvel.grid import (
    DomainMismatchError,
    PointPattern,
    ScalarField,
    SpatioTemporalGrid,
    VectorField,
    bin_counts,
    cell_centers,
    cell_index,
)


def unit_pattern(events):
    return PointPattern(events, (0, 1, 0, 1), (0, 1))


def test_single_event_at_cell_center():
    g = SpatioTemporalGrid.unit_cube(4, 5, 6)
    c = cell_centers(g)[0]
    counts = bin_counts(unit_pattern([c]), g)
    assert counts[0, 0, 0] == 1
    assert counts.sum() == 1


def test_empty_pattern_gives_zero_counts():
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    counts = bin_counts(unit_pattern(np.empty((0, 3))), g)
    assert counts.shape == (3, 3, 3)
    assert not counts.any()


def brute_force_counts(events, g):
    out = np.zeros(g.shape, dtype=int)
    for x, y, t in events:
        hits = []
        for i in range(g.nx):
            xl, xh = g.x0 + i * g.dx, g.x0 + (i + 1) * g.dx
            in_x = xl <= x < xh or (i == g.nx - 1 and x == xh)
            if not in_x:
                continue
            for j in range(g.ny):
                yl, yh = g.y0 + j * g.dy, g.y0 + (j + 1) * g.dy
                if not (yl <= y < yh or (j == g.ny - 1 and y == yh)):
                    continue
                for n in range(g.nt):
                    tl, th = g.t0 + n * g.dt, g.t0 + (n + 1) * g.dt
                    if tl <= t < th or (n == g.nt - 1 and t == th):
                        hits.append((i, j, n))
        assert len(hits) == 1, (x, y, t, hits)
        out[hits[0]] += 1
    return out


def test_uniform_points_match_membership_loop():
    rng = np.random.default_rng(4)
    ev = rng.uniform(0, 1, (1000, 3))
    g = SpatioTemporalGrid(0.0, 0.0, 0.0, 10, 10, 10, 0.1, 0.1, 0.1)
    counts = bin_counts(unit_pattern(ev), g)
    assert counts.sum() == 1000
    np.testing.assert_array_equal(counts, brute_force_counts(ev, g))


def test_boundary_events_are_kept():
    g = SpatioTemporalGrid(0.0, 0.0, 0.0, 4, 4, 4, 0.25, 0.25, 0.25)
    ev = [[0, 0, 0], [1, 1, 1], [0.25, 0.5, 0.75], [1, 0, 0.5]]
    counts = bin_counts(unit_pattern(ev), g)
    assert counts[0, 0, 0] == 1
    assert counts[3, 3, 3] == 1
    assert counts[1, 2, 3] == 1  # lower edges are inclusive
    assert counts[3, 0, 2] == 1
    assert counts.sum() == 4


def test_events_outside_extent_are_not_counted():
    g = SpatioTemporalGrid(0.0, 0.0, 0.0, 3, 3, 3, 0.2, 0.2, 0.2)  # covers [0, 0.6]^3
    ev = [[0.1, 0.1, 0.1], [0.9, 0.1, 0.1], [0.3, 0.3, 0.65]]
    assert bin_counts(unit_pattern(ev), g).sum() == 1


def test_disjoint_extent_raises():
    g = SpatioTemporalGrid(5.0, 5.0, 0.0, 3, 3, 3, 1.0, 1.0, 1.0)
    with pytest.raises(DomainMismatchError):
        bin_counts(unit_pattern([[0.5, 0.5, 0.5]]), g)


def test_first_center_and_order():
    g = SpatioTemporalGrid.unit_cube(4, 4, 4)
    c = cell_centers(g)
    np.testing.assert_allclose(c[0], (0.125, 0.125, 0.125))
    # row-major: n fastest, then j, then i
    np.testing.assert_allclose(c[1], (0.125, 0.125, 0.375))
    np.testing.assert_allclose(c[4], (0.125, 0.375, 0.125))
    np.testing.assert_allclose(c[16], (0.375, 0.125, 0.125))


def test_reference_lattice_has_18000_centers():
    g = SpatioTemporalGrid.unit_cube(30, 30, 20)
    assert len(cell_centers(g)) == 18000
    assert g.dx == pytest.approx(1 / 30) and g.dt == pytest.approx(1 / 20)


@pytest.mark.parametrize("kw", [{"nx": 1}, {"ny": 2}, {"nt": 0}, {"dx": 0.0}, {"dt": -1.0}])
def test_invalid_grids_rejected(kw):
    base = dict(x0=0.0, y0=0.0, t0=0.0, nx=3, ny=3, nt=3, dx=1.0, dy=1.0, dt=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        SpatioTemporalGrid(**base)


def test_mask_size_checked():
    with pytest.raises(ValueError, match="mask"):
        SpatioTemporalGrid.unit_cube(3, 3, 3, mask=np.ones(8, bool))


def test_grid_dict_round_trip_keeps_mask():
    mask = np.ones((3, 4), bool)
    mask[1, 2] = False
    g = SpatioTemporalGrid(1.0, 2.0, 3.0, 3, 4, 5, 0.5, 0.25, 2.0, mask)
    h = SpatioTemporalGrid.from_dict(g.to_dict())
    assert h == g
    np.testing.assert_array_equal(h.mask, mask)


def test_pattern_outside_window_rejected():
    with pytest.raises(ValueError, match="outside"):
        unit_pattern([[0.5, 0.5, 1.5]])


def test_field_rejects_inf_and_wrong_size():
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    with pytest.raises(ValueError):
        ScalarField(g, np.full(26, 1.0))
    v = np.ones(g.shape)
    v[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        ScalarField(g, v)


def test_field_is_immutable():
    f = ScalarField(SpatioTemporalGrid.unit_cube(3, 3, 3), np.zeros(27))
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0


def test_masked_cells_missing_in_from_function():
    mask = np.ones((3, 3), bool)
    mask[0, 0] = False
    g = SpatioTemporalGrid.unit_cube(3, 3, 3, mask)
    f = ScalarField.from_function(g, lambda x, y, t: x + y + t)
    assert np.isnan(f.values[0, 0]).all()
    assert np.isfinite(f.values[1:]).all()


def test_vector_field_requires_unit_directions():
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    mag = np.ones(g.shape)
    with pytest.raises(ValueError, match="unit"):
        VectorField(g, mag, np.full(g.shape, 0.5), np.full(g.shape, 0.5))
    with pytest.raises(ValueError, match="non-negative"):
        VectorField(g, -mag, np.ones(g.shape), np.zeros(g.shape))
    VectorField(g, np.full(g.shape, np.nan), np.full(g.shape, np.nan), np.full(g.shape, np.nan))


coords = st.floats(0.0, 1.0, allow_nan=False)


@given(
    st.lists(st.tuples(coords, coords, coords), max_size=40),
    st.integers(3, 7), st.integers(3, 7), st.integers(3, 7),
)
def test_binning_is_a_partition(events, nx, ny, nt):
    g = SpatioTemporalGrid.unit_cube(nx, ny, nt)
    ev = np.array(events, dtype=float).reshape(-1, 3)
    i, j, n, inside = cell_index(g, ev[:, 0], ev[:, 1], ev[:, 2])
    assert inside.all()
    counts = bin_counts(unit_pattern(ev), g)
    assert counts.sum() == len(ev)
