"""Simulation of inhomogeneous Poisson and log-Gaussian Cox patterns.

Random numbers come from numpy's counter-based ``Philox`` bit generator.
Independent sub-streams are derived by spawning children of
``SeedSequence(seed)``: the LGCP sampler uses child 0 for the latent field
and child 1 for the thinning stage, so the two stages can be replayed
separately.
"""

from __future__ import annotations

import numpy as np

from .covariance import CovarianceSpec, cov_matrices, robust_cholesky
from .grid import PointPattern, ScalarField, SpatioTemporalGrid, cell_index

RNG_NAME = "philox4x64-10/numpy-seedsequence"
RNG_VERSION = 1

_CHUNK = 1 << 20


class DominatingBoundError(ValueError):
    """Raised when the intensity exceeds the supplied ``lambda_max``."""


def make_rng(seed) -> np.random.Generator:
    """Generator for ``seed`` (an int or a ``SeedSequence``)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(ss))


def split_seed(seed, n: int) -> list[np.random.SeedSequence]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return ss.spawn(n)


def sample_poisson(intensity, window, tspan, lambda_max: float, seed) -> PointPattern:
    """Lewis-Shedler thinning of a homogeneous process with rate ``lambda_max``.

    ``intensity(x, y, t)`` must accept arrays.  Events are returned sorted by
    time.
    """
    if lambda_max < 0:
        raise ValueError("lambda_max must be non-negative")
    xmin, xmax, ymin, ymax = window
    tmin, tmax = tspan
    volume = (xmax - xmin) * (ymax - ymin) * (tmax - tmin)
    rng = make_rng(seed)
    n = rng.poisson(lambda_max * volume) if volume > 0 else 0
    kept = []
    remaining = n
    while remaining > 0:
        m = min(remaining, _CHUNK)
        remaining -= m
        x = rng.uniform(xmin, xmax, m)
        y = rng.uniform(ymin, ymax, m)
        t = rng.uniform(tmin, tmax, m)
        u = rng.uniform(0.0, 1.0, m)
        lam = np.asarray(intensity(x, y, t), dtype=float) * np.ones(m)
        if (lam < 0).any():
            raise ValueError(f"negative intensity {lam.min():.3g} encountered")
        if (lam > lambda_max).any():
            k = int(np.argmax(lam))
            raise DominatingBoundError(
                f"intensity {lam[k]:.6g} at ({x[k]:.4g}, {y[k]:.4g}, {t[k]:.4g}) exceeds lambda_max={lambda_max:.6g}"
            )
        keep = u * lambda_max < lam
        kept.append(np.column_stack([x[keep], y[keep], t[keep]]))
    events = np.concatenate(kept) if kept else np.empty((0, 3))
    events = events[np.argsort(events[:, 2], kind="stable")]
    return PointPattern(events, window, tspan)


def estimate_lambda_max(intensity, window, tspan, shape=(30, 30, 20), refine: int = 4, inflate: float = 1.1) -> float:
    """Max of ``intensity`` on a lattice ``refine`` times finer than ``shape``, times ``inflate``."""
    xmin, xmax, ymin, ymax = window
    tmin, tmax = tspan
    axes = [
        np.linspace(lo, hi, refine * k + 1)
        for (lo, hi), k in zip([(xmin, xmax), (ymin, ymax), (tmin, tmax)], shape)
    ]
    X, Y, T = np.meshgrid(*axes, indexing="ij")
    return float(inflate * np.max(intensity(X, Y, T)))


def sample_gaussian_field(spec: CovarianceSpec, grid: SpatioTemporalGrid, mean: float, seed,
                          normalized: bool = False, z: np.ndarray | None = None) -> ScalarField:
    """Draw the latent field ``mean + sigma * L_S Z L_T^T`` on all grid cells.

    ``Z`` holds ``nS * nt`` standard normals drawn as one flat vector in
    time-major order (``q = n * nS + p``); pass ``z`` to supply them directly.
    """
    nS = grid.nx * grid.ny
    if nS > 4096:
        raise ValueError(f"{nS} spatial cells exceed the dense-Cholesky limit of 4096")
    S, T = cov_matrices(spec, grid, normalized)
    LS, _ = robust_cholesky(S)
    LT, _ = robust_cholesky(T, T[0, 0])
    if z is None:
        z = make_rng(seed).standard_normal(nS * grid.nt)
    Z = np.asarray(z, dtype=float).reshape(grid.nt, nS).T
    X = mean + np.sqrt(spec.sigma2) * (LS @ Z @ LT.T)
    return ScalarField(grid, X.reshape(grid.nx, grid.ny, grid.nt))


def piecewise_intensity(field: ScalarField):
    """Callable intensity that is constant on each grid cell; zero outside the grid."""
    values = np.nan_to_num(field.values, nan=0.0)
    grid = field.grid

    def lam(x, y, t):
        i, j, n, inside = cell_index(grid, x, y, t)
        out = np.zeros(len(i))
        out[inside] = values[i[inside], j[inside], n[inside]]
        return out

    return lam


def sample_piecewise_poisson(field: ScalarField, seed) -> PointPattern:
    """Poisson pattern for a cellwise-constant intensity given by ``field``."""
    grid = field.grid
    xmin, xmax, ymin, ymax, tmin, tmax = grid.extent
    vals = np.nan_to_num(field.values, nan=0.0)
    if (vals < 0).any():
        raise ValueError("intensity field must be non-negative")
    lam_max = float(vals.max()) if vals.size else 0.0
    return sample_poisson(piecewise_intensity(field), (xmin, xmax, ymin, ymax), (tmin, tmax), lam_max, seed)


def lgcp_intensity(eta, mu, zeta: ScalarField) -> ScalarField:
    """Cellwise ``eta(u) * mu(t) * exp(zeta)``; masked cells carry zero intensity."""
    grid = zeta.grid
    if isinstance(eta, ScalarField):
        eta_v = eta.values
    else:
        X, Y = np.meshgrid(grid.x_centers(), grid.y_centers(), indexing="ij")
        eta_v = np.broadcast_to(np.asarray(eta(X, Y), dtype=float)[:, :, None], grid.shape)
    mu_v = np.asarray(mu(grid.t_centers()), dtype=float) * np.ones(grid.nt)
    if (np.nan_to_num(eta_v) < 0).any() or (mu_v < 0).any():
        raise ValueError("eta and mu must be non-negative")
    lam = eta_v * mu_v[None, None, :] * np.exp(zeta.values)
    lam = np.where(grid.mask[:, :, None], np.nan_to_num(lam, nan=0.0), 0.0)
    return ScalarField(grid, lam)


def sample_lgcp(eta, mu, spec: CovarianceSpec, grid: SpatioTemporalGrid, beta: float, seed,
                normalized: bool = False, return_field: bool = False):
    """Sample an LGCP pattern with intensity ``eta * mu * exp(zeta)``.

    ``zeta`` is drawn with mean ``beta`` and is held constant on each cell.
    With ``return_field`` the ``(pattern, zeta, intensity)`` triple is returned.
    """
    field_seed, thin_seed = split_seed(seed, 2)
    zeta = sample_gaussian_field(spec, grid, beta, field_seed, normalized)
    lam = lgcp_intensity(eta, mu, zeta)
    pattern = sample_piecewise_poisson(lam, thin_seed)
    if return_field:
        return pattern, zeta, lam
    return pattern
