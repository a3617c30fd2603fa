"""Separable Matérn x AR(1) covariance of the latent Gaussian field.

The spatial factor is the Matérn correlation

    rho1(h) = (kappa h)^nu K_nu(kappa h) / (2^(nu-1) Gamma(nu)),

and the temporal factor is kept in its unnormalized form
``a^h / (1 - a^2)`` (``ar1_rho2``), so ``rho2(0) != 1`` unless ``a == 0``.
``ar1_rho2_normalized`` divides by ``rho2(0)`` and is what the fitter uses,
which makes ``sigma2`` the marginal variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special
from scipy.spatial.distance import cdist

from .grid import SpatioTemporalGrid


class ConditioningError(np.linalg.LinAlgError):
    """Raised when a covariance matrix cannot be made positive definite."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


@dataclass(frozen=True)
class CovarianceSpec:
    sigma2: float
    kappa: float
    nu: float = 1.5
    a: float = 0.0
    allow_rough: bool = False

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not abs(self.a) < 1:
            raise ValueError(f"|a| must be < 1, got {self.a}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.nu < 1.5 and not self.allow_rough:
            raise ValueError(f"nu={self.nu} < 3/2 gives a non-differentiable field; pass allow_rough=True to override")

    @property
    def practical_range(self) -> float:
        """Distance at which the Matérn correlation is about 0.13."""
        return math.sqrt(8 * self.nu) / self.kappa

    def to_dict(self) -> dict:
        return {"sigma2": self.sigma2, "kappa": self.kappa, "nu": self.nu, "a": self.a}


def matern_rho1(h1, kappa: float, nu: float):
    """Matérn correlation at spatial lag ``h1`` (scalar or array)."""
    h = np.asarray(h1, dtype=float)
    if (h < 0).any():
        raise ValueError("spatial lag must be non-negative")
    z = kappa * h
    out = np.ones_like(z)
    pos = z > 0
    zp = z[pos]
    with np.errstate(over="ignore", invalid="ignore", under="ignore", divide="ignore"):
        k = special.kv(nu, zp)
        vals = np.exp(nu * np.log(zp) + np.log(k) - (nu - 1) * math.log(2) - special.gammaln(nu))
    # K_nu overflows for z near 0, where the correlation tends to 1;
    # far from the origin it underflows to 0 and exp(-inf) gives 0 already
    vals[np.isinf(k)] = 1.0
    out[pos] = np.minimum(vals, 1.0)
    return out if out.ndim else float(out)


def ar1_rho2(h2, a: float):
    """Unnormalized AR(1) factor ``a^h2 / (1 - a^2)``.

    Non-integer lags are only defined for ``a > 0``.
    """
    h = np.asarray(h2, dtype=float)
    if (h < 0).any():
        raise ValueError("temporal lag must be non-negative")
    out = _ar1_power(h, a) / (1.0 - a * a)
    return out if out.ndim else float(out)


def ar1_rho2_normalized(h2, a: float):
    """AR(1) correlation ``a^h2``."""
    h = np.asarray(h2, dtype=float)
    if (h < 0).any():
        raise ValueError("temporal lag must be non-negative")
    out = _ar1_power(h, a)
    return out if out.ndim else float(out)


def _ar1_power(h, a):
    integer = np.all(h == np.round(h))
    if not integer and a <= 0:
        raise ValueError("non-integer temporal lags require a > 0")
    if integer:
        return np.power(float(a), h)  # 0**0 == 1
    return np.exp(h * math.log(a))


def cov(spec: CovarianceSpec, h1, h2, normalized: bool = False):
    """Space-time covariance ``sigma2 * rho1(h1) * rho2(h2)``."""
    rho2 = ar1_rho2_normalized if normalized else ar1_rho2
    return spec.sigma2 * matern_rho1(h1, spec.kappa, spec.nu) * rho2(h2, spec.a)


def spatial_matrix(spec: CovarianceSpec, centers: np.ndarray) -> np.ndarray:
    """Matérn correlation matrix between the rows of ``centers``."""
    return matern_rho1(cdist(centers, centers), spec.kappa, spec.nu)


def temporal_matrix(spec: CovarianceSpec, nt: int, normalized: bool = False) -> np.ndarray:
    lags = np.abs(np.subtract.outer(np.arange(nt), np.arange(nt)))
    rho2 = ar1_rho2_normalized if normalized else ar1_rho2
    return rho2(lags, spec.a)


def robust_cholesky(A: np.ndarray, scale: float = 1.0, start: float = 1e-10, stop: float = 1e-6):
    """Lower Cholesky factor of ``A`` with escalating diagonal jitter.

    No jitter is added if ``A`` factorizes as-is.  Otherwise ``start * scale``
    is added to the diagonal and multiplied by ten until ``stop * scale``.

    Returns ``(L, jitter)``.
    """
    jitter = 0.0
    eps = start
    while True:
        try:
            L = linalg.cholesky(A + jitter * np.eye(len(A)), lower=True)
            return L, jitter
        except linalg.LinAlgError:
            if eps > stop * (1 + 1e-9):
                min_eig = float(np.linalg.eigvalsh(A)[0])
                raise ConditioningError(
                    f"matrix not positive definite after jitter {jitter:.1e}; smallest eigenvalue {min_eig:.3e}",
                    min_eig,
                ) from None
            jitter = eps * scale
            eps *= 10


def cov_matrices(spec: CovarianceSpec, grid: SpatioTemporalGrid, normalized: bool = False,
                 masked: bool = False):
    """Spatial and temporal factor matrices ``(S, T)`` on ``grid``.

    ``S`` holds ``rho1`` between spatial cell centers (row-major ``(i, j)``),
    ``T`` holds ``rho2`` between integer time steps.  The full covariance of
    the flattened field in time-major order ``q = n * nS + p`` is
    ``sigma2 * kron(T, S)``; see :func:`full_covariance`.

    Both matrices are checked for positive definiteness; jitter is only added
    when the plain factorization fails.
    """
    centers = grid.spatial_centers()
    if masked:
        centers = centers[grid.mask.ravel()]
    S = spatial_matrix(spec, centers)
    T = temporal_matrix(spec, grid.nt, normalized)
    _, js = robust_cholesky(S, 1.0)
    _, jt = robust_cholesky(T, T[0, 0])
    if js:
        S = S + js * np.eye(len(S))
    if jt:
        T = T + jt * np.eye(len(T))
    return S, T


def full_covariance(spec: CovarianceSpec, grid: SpatioTemporalGrid, normalized: bool = False) -> np.ndarray:
    S, T = cov_matrices(spec, grid, normalized)
    return spec.sigma2 * np.kron(T, S)
