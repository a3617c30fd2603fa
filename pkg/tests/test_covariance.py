import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lgcpvel.covariance import (
    ConditioningError,
    CovarianceSpec,
    ar1_rho2,
    ar1_rho2_normalized,
    cov,
    cov_matrices,
    full_covariance,
    matern_rho1,
    robust_cholesky,
)
from lgcpvel.grid import SpatioTemporalGrid
from lgcpvel.validate import kron_bruteforce_error


def matern_mp(h, kappa, nu):
    """Matérn correlation in 40-digit arithmetic."""
    mpmath.mp.dps = 40
    z = mpmath.mpf(kappa) * mpmath.mpf(h)
    return float(z**nu * mpmath.besselk(nu, z) / (2 ** (nu - 1) * mpmath.gamma(nu)))


def test_zero_lag_is_one():
    assert matern_rho1(0.0, 3.0, 1.5) == 1.0
    assert matern_rho1(np.zeros(3), 3.0, 2.5).tolist() == [1.0, 1.0, 1.0]


def test_exponential_case():
    assert matern_rho1(1.0, 2.0, 0.5) == pytest.approx(math.exp(-2.0), rel=1e-12)
    assert matern_mp(1.0, 2.0, 0.5) == pytest.approx(0.1353352832366127, rel=1e-14)


def test_three_halves_closed_form():
    assert matern_rho1(1.0, 1.0, 1.5) == pytest.approx(2 * math.exp(-1.0), rel=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, 1.0, 3.7])
def test_against_high_precision_bessel(nu):
    h = np.array([1e-6, 1e-3, 0.05, 0.3, 1.0, 4.0, 25.0])
    got = matern_rho1(h, 1.7, nu)
    want = np.array([matern_mp(v, 1.7, nu) for v in h])
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-300)


def test_closed_forms_for_half_integers():
    z = np.linspace(0.01, 10, 50)
    np.testing.assert_allclose(matern_rho1(z, 1.0, 0.5), np.exp(-z), rtol=1e-10)
    np.testing.assert_allclose(matern_rho1(z, 1.0, 1.5), (1 + z) * np.exp(-z), rtol=1e-10)
    np.testing.assert_allclose(matern_rho1(z, 1.0, 2.5), (1 + z + z * z / 3) * np.exp(-z), rtol=1e-10)


def test_far_lag_underflows_to_zero():
    assert matern_rho1(1e4, 1.0, 1.5) == 0.0


def test_negative_lag_rejected():
    with pytest.raises(ValueError):
        matern_rho1(-0.1, 1.0, 1.5)
    with pytest.raises(ValueError):
        ar1_rho2(-1, 0.5)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_rho1_non_increasing(nu):
    h = np.linspace(0, 10, 2001)
    assert np.all(np.diff(matern_rho1(h, 1.3, nu)) <= 0)


def test_ar1_values():
    assert ar1_rho2(0, 0.5) == pytest.approx(4 / 3)
    assert ar1_rho2(1, 0.5) == pytest.approx(2 / 3)
    assert ar1_rho2(0, 0.0) == 1.0
    assert ar1_rho2(3, 0.0) == 0.0
    assert ar1_rho2_normalized(2, 0.5) == 0.25


def test_ar1_non_integer_lags():
    assert ar1_rho2(0.5, 0.25) == pytest.approx(0.5 / (1 - 0.0625))
    with pytest.raises(ValueError, match="a > 0"):
        ar1_rho2(0.5, 0.0)
    with pytest.raises(ValueError, match="a > 0"):
        ar1_rho2(1.5, -0.3)
    assert ar1_rho2(2, -0.5) == pytest.approx(0.25 / 0.75)


def test_cov_examples():
    assert cov(CovarianceSpec(2.0, 1.0, 1.5, 0.0), 0.0, 0) == 2.0
    s = CovarianceSpec(1.0, 1.0, 0.5, 0.5, allow_rough=True)
    assert cov(s, 1.0, 1) == pytest.approx(math.exp(-1) * 2 / 3, rel=1e-12)


@given(st.floats(0, 5), st.integers(0, 6), st.floats(0.1, 4), st.floats(-0.9, 0.9))
def test_separability_identity(h1, h2, kappa, a):
    s = CovarianceSpec(1.7, kappa, 1.5, a)
    lhs = cov(s, h1, h2) * cov(s, 0.0, 0)
    rhs = cov(s, h1, 0) * cov(s, 0.0, h2)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_matern_tiny_lag_is_one_not_nan(nu):
    # K_nu overflows to inf here; the correlation limit is 1
    for h in (9.003613536780524e-270, 1e-300, 5e-324):
        r = matern_rho1(h, 1.0, nu)
        assert r <= 1.0 and r == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kw", [dict(sigma2=0.0, kappa=1.0), dict(sigma2=1.0, kappa=-1.0),
                                dict(sigma2=1.0, kappa=1.0, a=1.0), dict(sigma2=1.0, kappa=1.0, nu=1.0)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        CovarianceSpec(**kw)


def test_rough_override():
    assert CovarianceSpec(1.0, 1.0, 0.5, allow_rough=True).nu == 0.5


def test_temporal_matrix_independence():
    _, T = cov_matrices(CovarianceSpec(1.0, 2.0, 1.5, 0.0), SpatioTemporalGrid.unit_cube(3, 3, 3))
    np.testing.assert_array_equal(T, np.eye(3))


def test_spatial_matrix_symmetric_unit_diagonal():
    S, _ = cov_matrices(CovarianceSpec(1.0, 2.0, 1.5, 0.3), SpatioTemporalGrid.unit_cube(3, 3, 3))
    assert S.shape == (9, 9)
    np.testing.assert_array_equal(S, S.T)
    np.testing.assert_array_equal(np.diag(S), 1.0)


def test_kron_matches_pairwise_formula():
    assert kron_bruteforce_error(CovarianceSpec(1.3, 2.5, 1.5, 0.6), SpatioTemporalGrid.unit_cube(3, 3, 3)) <= 1e-12


def test_kron_of_cholesky_factors():
    spec = CovarianceSpec(0.8, 3.0, 2.5, 0.4)
    S, T = cov_matrices(spec, SpatioTemporalGrid.unit_cube(3, 4, 3))
    L = np.kron(np.linalg.cholesky(T), np.linalg.cholesky(S))
    np.testing.assert_allclose(L @ L.T, np.kron(T, S), atol=1e-8)


def test_full_covariance_is_scaled_kron():
    spec = CovarianceSpec(2.0, 3.0, 1.5, 0.4)
    g = SpatioTemporalGrid.unit_cube(3, 3, 4)
    K = full_covariance(spec, g)
    S, T = cov_matrices(spec, g)
    np.testing.assert_array_equal(K, 2.0 * np.kron(T, S))


def test_robust_cholesky_no_jitter_when_pd():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    L, jitter = robust_cholesky(A)
    assert jitter == 0.0
    np.testing.assert_allclose(L @ L.T, A)


def test_robust_cholesky_escalates():
    Q = np.linalg.qr(np.arange(9.0).reshape(3, 3) + np.eye(3))[0]
    A = Q @ np.diag([1.0, 0.5, -5e-9]) @ Q.T
    A = (A + A.T) / 2
    L, jitter = robust_cholesky(A)
    assert 5e-9 < jitter <= 1e-6
    np.testing.assert_allclose(L @ L.T, A + jitter * np.eye(3), atol=1e-12)


def test_conditioning_error_reports_eigenvalue():
    A = np.diag([1.0, -1e-3])
    with pytest.raises(ConditioningError) as info:
        robust_cholesky(A)
    assert info.value.min_eigenvalue == pytest.approx(-1e-3)


def test_near_singular_lattice_gets_jitter():
    # very long range on a fine lattice: numerically rank-deficient
    spec = CovarianceSpec(1.0, 1e-3, 2.5)
    S, _ = cov_matrices(spec, SpatioTemporalGrid.unit_cube(6, 6, 3))
    np.linalg.cholesky(S)
    assert np.max(np.diag(S)) - 1.0 <= 1e-6


@given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
def test_cov_symmetric_in_points(x1, y1, x2, y2):
    s = CovarianceSpec(1.0, 1.5)
    d12 = math.hypot(x1 - x2, y1 - y2)
    d21 = math.hypot(x2 - x1, y2 - y1)
    assert cov(s, d12, 2) == cov(s, d21, 2)
