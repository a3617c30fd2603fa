"""Closed-form test intensity with exact derivatives and minimal velocity.

The intensity on the unit cube is

    lambda(u, t) = lambda0 * exp(beta0 + (1-t) beta1 f1(u) + t(1-t) beta2 f2(u) + t^2 beta3 f3(u))

with ``f_k`` bivariate normal densities.  Its mode starts at ``mu_1``,
passes ``mu_2`` and ends at ``mu_3``.  With the default parameters the
exponent peaks near 20, so the expected count for ``lambda0 = 100`` is of
order 1e7; use :func:`calibrate_lambda0` to get a target event count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_TIMES = (0.225, 0.575, 0.875)


def _default_means():
    return (np.array([0.4, 0.2]), np.array([0.8, 0.5]), np.array([0.2, 0.8]))


def _default_covs():
    return (
        np.array([[0.065, -0.030], [-0.030, 0.065]]),
        np.array([[0.065, 0.000], [0.000, 0.065]]),
        np.array([[0.065, 0.030], [0.030, 0.065]]),
    )


@dataclass(frozen=True)
class SimIntensityParams:
    lambda0: float = 100.0
    beta0: float = -1.5
    beta1: float = 8.0
    beta2: float = 2.0
    beta3: float = 2.0
    mu_k: tuple = field(default_factory=_default_means)
    Sigma_k: tuple = field(default_factory=_default_covs)

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        mus = tuple(np.asarray(m, dtype=float).reshape(2) for m in self.mu_k)
        covs = tuple(np.asarray(S, dtype=float).reshape(2, 2) for S in self.Sigma_k)
        if len(mus) != 3 or len(covs) != 3:
            raise ValueError("exactly three means and covariances are required")
        for k, S in enumerate(covs):
            if not np.allclose(S, S.T) or np.linalg.eigvalsh(S)[0] <= 0:
                raise ValueError(f"Sigma_{k + 1} must be symmetric positive definite")
        object.__setattr__(self, "mu_k", mus)
        object.__setattr__(self, "Sigma_k", covs)

    @property
    def betas(self) -> tuple[float, float, float]:
        return (self.beta1, self.beta2, self.beta3)

    def with_lambda0(self, lambda0: float) -> "SimIntensityParams":
        return replace(self, lambda0=lambda0)

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "beta0": self.beta0,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "beta3": self.beta3,
            "mu_k": [m.tolist() for m in self.mu_k],
            "Sigma_k": [S.tolist() for S in self.Sigma_k],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimIntensityParams":
        d = dict(d)
        base = cls()
        return cls(
            lambda0=d.get("lambda0", base.lambda0),
            beta0=d.get("beta0", base.beta0),
            beta1=d.get("beta1", base.beta1),
            beta2=d.get("beta2", base.beta2),
            beta3=d.get("beta3", base.beta3),
            mu_k=tuple(d["mu_k"]) if "mu_k" in d else base.mu_k,
            Sigma_k=tuple(d["Sigma_k"]) if "Sigma_k" in d else base.Sigma_k,
        )


def _densities(params, x, y):
    """Yield ``(f_k, d f_k/dx, d f_k/dy)`` for k = 1..3."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    for mu, S in zip(params.mu_k, params.Sigma_k):
        P = np.linalg.inv(S)
        ex = x - mu[0]
        ey = y - mu[1]
        q = P[0, 0] * ex * ex + 2 * P[0, 1] * ex * ey + P[1, 1] * ey * ey
        f = np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(np.linalg.det(S)))
        yield f, f * (-ex * P[0, 0] - ey * P[0, 1]), f * (-ex * P[0, 1] - ey * P[1, 1])


def _weights(params, t):
    t = np.asarray(t, dtype=float)
    b1, b2, b3 = params.betas
    return (1 - t) * b1, t * (1 - t) * b2, t * t * b3


def _dweights(params, t):
    t = np.asarray(t, dtype=float)
    b1, b2, b3 = params.betas
    return -b1 * np.ones_like(t), (1 - 2 * t) * b2, 2 * t * b3


def intensity(params: SimIntensityParams, x, y, t):
    w = _weights(params, t)
    expo = params.beta0
    for wk, (f, _, _) in zip(w, _densities(params, x, y)):
        expo = expo + wk * f
    return params.lambda0 * np.exp(expo)


# public alias; ``lambda`` itself is a keyword
lambda_ = intensity


def grad_xy(params: SimIntensityParams, x, y, t):
    """Spatial gradient ``(d lambda/dx, d lambda/dy)``."""
    lam = intensity(params, x, y, t)
    gx = 0.0
    gy = 0.0
    for wk, (_, fx, fy) in zip(_weights(params, t), _densities(params, x, y)):
        gx = gx + wk * fx
        gy = gy + wk * fy
    return lam * gx, lam * gy


def dlambda_dt(params: SimIntensityParams, x, y, t):
    lam = intensity(params, x, y, t)
    s = 0.0
    for wk, (f, _, _) in zip(_dweights(params, t), _densities(params, x, y)):
        s = s + wk * f
    return lam * s


def true_velocity(params: SimIntensityParams, x, y, t):
    """Exact minimal velocity ``(magnitude, vx, vy)``.

    The magnitude is ``|d lambda/dt| / ||grad lambda||`` and the direction is
    ``sign(d lambda/dt) * grad / ||grad||``, with a zero time derivative
    taking the gradient direction.  Points with a vanishing gradient are
    returned as NaN.
    """
    gx, gy = grad_xy(params, x, y, t)
    gt = dlambda_dt(params, x, y, t)
    gx, gy, gt = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (gx, gy, gt)))
    norm = np.hypot(gx, gy)
    ok = norm > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        mag = np.where(ok, np.abs(gt) / norm, np.nan)
        sgn = np.where(gt < 0, -1.0, 1.0)
        vx = np.where(ok, sgn * gx / norm, np.nan)
        vy = np.where(ok, sgn * gy / norm, np.nan)
    return mag, vx, vy


def integrate(params: SimIntensityParams, n_space: int = 240, n_time: int = 480) -> float:
    """Integral of the intensity over the unit cube by the midpoint rule."""
    xs = (np.arange(n_space) + 0.5) / n_space
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    total = 0.0
    for t in (np.arange(n_time) + 0.5) / n_time:
        total += float(intensity(params, X, Y, t).sum())
    return total / (n_space * n_space * n_time)


def calibrate_lambda0(params: SimIntensityParams, expected_count: float, **quad) -> SimIntensityParams:
    """Rescale ``lambda0`` so the expected number of events is ``expected_count``."""
    total = integrate(params, **quad)
    return params.with_lambda0(params.lambda0 * expected_count / total)


def max_intensity(params: SimIntensityParams, refine: int = 121) -> float:
    """Grid maximum of the intensity on the unit cube, refined near the modes."""
    g = np.linspace(0, 1, refine)
    X, Y, T = np.meshgrid(g, g, g, indexing="ij")
    lam = intensity(params, X, Y, T)
    k = np.unravel_index(np.argmax(lam), lam.shape)
    best = float(lam[k])
    # local refinement around the coarse argmax
    h = 1.0 / (refine - 1)
    centre = [g[k[0]], g[k[1]], g[k[2]]]
    axes = [np.clip(np.linspace(c - h, c + h, 41), 0, 1) for c in centre]
    X, Y, T = np.meshgrid(*axes, indexing="ij")
    return max(best, float(intensity(params, X, Y, T).max()))


def golden_table(params: SimIntensityParams, nx: int = 30, ny: int = 30, times=DEFAULT_TIMES) -> dict:
    """Long-format oracle table at ``nx * ny`` cell centers of the unit square.

    Rows are ordered by time, then ``i`` (x), then ``j`` (y).  Columns:
    x, y, t, lambda, dldx, dldy, dldt, smin, vx, vy.
    """
    xs = (np.arange(nx) + 0.5) / nx
    ys = (np.arange(ny) + 0.5) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    cols = {k: [] for k in ("x", "y", "t", "lambda", "dldx", "dldy", "dldt", "smin", "vx", "vy")}
    for t in times:
        T = np.full_like(X, float(t))
        gx, gy = grad_xy(params, X, Y, T)
        mag, vx, vy = true_velocity(params, X, Y, T)
        for key, val in (
            ("x", X), ("y", Y), ("t", T), ("lambda", intensity(params, X, Y, T)),
            ("dldx", gx), ("dldy", gy), ("dldt", dlambda_dt(params, X, Y, T)),
            ("smin", mag), ("vx", vx), ("vy", vy),
        ):
            cols[key].append(np.ravel(val))
    return {k: np.concatenate(v) for k, v in cols.items()}
