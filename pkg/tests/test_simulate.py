import math

import numpy as np
import pytest
from scipy import stats

from lgcpvel import oracle
from lgcpvel.covariance import CovarianceSpec, full_covariance
from lgcpvel.grid import ScalarField, SpatioTemporalGrid, bin_counts
from lgcpvel.simulate import (
    DominatingBoundError,
    estimate_lambda_max,
    lgcp_intensity,
    make_rng,
    sample_gaussian_field,
    sample_lgcp,
    sample_piecewise_poisson,
    sample_poisson,
    split_seed,
)
from lgcpvel.validate import constant_counts, mc_covariance_zscores, poisson_gof_pvalue

UNIT = ((0.0, 1.0, 0.0, 1.0), (0.0, 1.0))


def const(rate):
    return lambda x, y, t: np.full(np.shape(x), float(rate))


def test_zero_intensity_gives_empty_pattern():
    p = sample_poisson(const(0.0), *UNIT, 0.0, 1)
    assert len(p) == 0
    assert p.events.shape == (0, 3)


def test_constant_rate_mean_count():
    counts = constant_counts(50.0, 200, 1000)
    assert abs(counts.mean() - 50) <= 3 * math.sqrt(50 / 200)


def test_constant_rate_goodness_of_fit_500():
    counts = constant_counts(50.0, 500, 5000)
    assert poisson_gof_pvalue(counts, 50.0) >= 0.01


def test_gof_detects_overdispersion():
    rng = make_rng(3)
    counts = rng.negative_binomial(5, 5 / 55, 500)  # mean 50, variance 550
    assert poisson_gof_pvalue(counts, 50.0) < 1e-6


def test_oracle_mean_count_matches_quadrature():
    params = oracle.calibrate_lambda0(oracle.SimIntensityParams(), 200.0)
    expected = oracle.integrate(params)
    lam_max = 1.1 * oracle.max_intensity(params)
    n_seeds = 60
    counts = [len(sample_poisson(lambda x, y, t: oracle.intensity(params, x, y, t), *UNIT, lam_max, s))
              for s in range(n_seeds)]
    assert abs(np.mean(counts) - expected) <= 3 * math.sqrt(expected / n_seeds)


def test_same_seed_same_pattern_bytes():
    f = lambda x, y, t: 30 * (1 + x * y + t)  # noqa: E731
    a = sample_poisson(f, *UNIT, 100.0, 77)
    b = sample_poisson(f, *UNIT, 100.0, 77)
    c = sample_poisson(f, *UNIT, 100.0, 78)
    assert a.events.tobytes() == b.events.tobytes()
    assert a.events.tobytes() != c.events.tobytes()


def test_events_sorted_by_time_and_inside():
    p = sample_poisson(const(200.0), (2.0, 3.0, -1.0, 0.5), (10.0, 12.0), 200.0, 5)
    assert np.all(np.diff(p.t) >= 0)
    assert p.x.min() >= 2 and p.x.max() <= 3 and p.y.min() >= -1 and p.t.max() <= 12


def test_dominating_bound_violation_detected():
    with pytest.raises(DominatingBoundError, match="exceeds"):
        sample_poisson(const(10.0), *UNIT, 5.0, 1)


def test_negative_intensity_rejected():
    with pytest.raises(ValueError, match="negative"):
        sample_poisson(const(-1.0), *UNIT, 5.0, 1)


def test_empty_window_empty_pattern():
    p = sample_poisson(const(10.0), (0.0, 0.0, 0.0, 1.0), (0.0, 1.0), 10.0, 1)
    assert len(p) == 0


def test_lambda_max_bounds_the_oracle():
    params = oracle.SimIntensityParams()
    est = estimate_lambda_max(lambda x, y, t: oracle.intensity(params, x, y, t), *UNIT)
    assert est >= oracle.max_intensity(params)


def test_tiny_variance_field_is_the_mean():
    g = SpatioTemporalGrid.unit_cube(4, 4, 3)
    f = sample_gaussian_field(CovarianceSpec(1e-30, 2.0, 1.5, 0.5), g, 1.25, 9)
    np.testing.assert_allclose(f.values, 1.25, atol=1e-10)


def test_monte_carlo_covariance_within_five_se():
    z = mc_covariance_zscores(CovarianceSpec(1.3, 2.5, 1.5, 0.6), SpatioTemporalGrid.unit_cube(4, 4, 3), 2000, 31)
    assert np.max(np.abs(z)) <= 5


def test_kronecker_sampling_equals_full_cholesky():
    spec = CovarianceSpec(0.7, 2.0, 1.5, 0.5)
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    z = make_rng(2).standard_normal(27)
    f = sample_gaussian_field(spec, g, 0.3, None, z=z)
    L = np.linalg.cholesky(full_covariance(spec, g))
    direct = 0.3 + L @ z  # time-major
    np.testing.assert_allclose(f.values.transpose(2, 0, 1).ravel(), direct, atol=1e-8)


def test_field_size_limit():
    g = SpatioTemporalGrid.unit_cube(65, 64, 3)
    with pytest.raises(ValueError, match="4096"):
        sample_gaussian_field(CovarianceSpec(1.0, 1.0), g, 0.0, 1)


def test_split_streams_are_reproducible_and_distinct():
    a, b = split_seed(11, 2)
    a2, _ = split_seed(11, 2)
    assert make_rng(a).random() == make_rng(a2).random()
    assert make_rng(a).random() != make_rng(b).random()


def test_degenerate_lgcp_is_homogeneous_poisson():
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    spec = CovarianceSpec(1e-30, 1.0)
    counts = np.array([
        len(sample_lgcp(lambda x, y: np.ones(np.shape(x)), lambda t: np.full(np.shape(t), 40.0),
                        spec, g, 0.0, s))
        for s in range(300)
    ])
    assert abs(counts.mean() - 40) <= 3 * math.sqrt(40 / 300)
    assert poisson_gof_pvalue(counts, 40.0) >= 0.01


def test_conditional_cell_counts_are_poisson():
    g = SpatioTemporalGrid.unit_cube(3, 3, 3)
    spec = CovarianceSpec(1.0, 3.0, 1.5, 0.5)
    zeta = sample_gaussian_field(spec, g, 0.0, 123)
    lam = lgcp_intensity(lambda x, y: np.full(np.shape(x), 2.0), lambda t: np.full(np.shape(t), 300.0), zeta)
    reps = np.stack([bin_counts(sample_piecewise_poisson(lam, s), g) for s in range(400)])
    expected = lam.values * g.cell_volume
    se = np.sqrt(expected / len(reps))
    assert np.max(np.abs(reps.mean(axis=0) - expected) / se) <= 4.5
    # Fisher dispersion index per cell, pooled
    disp = ((reps - expected) ** 2 / expected).sum()
    dof = reps.size
    assert stats.chi2.sf(disp, dof) > 0.001 and stats.chi2.cdf(disp, dof) > 0.001


def test_lgcp_stages_replay_independently():
    g = SpatioTemporalGrid.unit_cube(4, 4, 3)
    spec = CovarianceSpec(0.5, 3.0)
    eta = lambda x, y: np.ones(np.shape(x))  # noqa: E731
    mu = lambda t: np.full(np.shape(t), 50.0)  # noqa: E731
    p, zeta, lam = sample_lgcp(eta, mu, spec, g, 0.2, 42, return_field=True)
    field_seed, thin_seed = split_seed(42, 2)
    np.testing.assert_array_equal(zeta.values, sample_gaussian_field(spec, g, 0.2, field_seed).values)
    np.testing.assert_array_equal(p.events, sample_piecewise_poisson(lam, thin_seed).events)


def test_masked_cells_carry_no_events():
    mask = np.ones((3, 3), bool)
    mask[0, :] = False
    g = SpatioTemporalGrid.unit_cube(3, 3, 3, mask)
    zeta = ScalarField(g, np.zeros(g.shape))
    lam = lgcp_intensity(lambda x, y: np.ones(np.shape(x)), lambda t: np.full(np.shape(t), 500.0), zeta)
    counts = bin_counts(sample_piecewise_poisson(lam, 1), g)
    assert counts[0].sum() == 0 and counts[1:].sum() > 0
