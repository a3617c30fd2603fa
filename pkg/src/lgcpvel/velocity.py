"""Finite-difference minimal velocity of a gridded intensity.

For a slice ``n`` the time derivative is the symmetric quotient
``(L[n+1] - L[n-1]) / (2 dt)`` and the gradient norm is the average of the
four forward/backward combinations ``sqrt((D^{+-x} L)^2 + (D^{+-y} L)^2)``.
The minimal velocity is their ratio; its direction is
``sign(dL/dt) * g / |g|`` with ``g`` the central-difference gradient.

Because ``g`` is the mean of the four one-sided gradient vectors, ``|g|`` never
exceeds the averaged norm, so every directional speed computed from ``g`` is
at least the minimal one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import MISSING, ScalarField, VectorField

SCHEMES = ("symmetric", "first_order_last")
BOUNDARIES = ("mask", "one_sided")


class UnsupportedIndexError(IndexError):
    """Raised for a time index the chosen difference scheme cannot handle."""


@dataclass(frozen=True)
class VelocityOptions:
    """``time_scheme="first_order_last"`` uses a backward difference at the final time step."""

    time_scheme: str = "symmetric"
    gradient_floor: float = 1e-6
    boundary: str = "mask"

    def __post_init__(self):
        if self.time_scheme not in SCHEMES:
            raise ValueError(f"time_scheme must be one of {SCHEMES}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if not self.gradient_floor >= 0:
            raise ValueError("gradient_floor must be non-negative")


DEFAULT_OPTIONS = VelocityOptions()


def time_derivative(field: ScalarField, n: int, options: VelocityOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Time derivative at slice ``n`` as an ``(nx, ny)`` array (NaN = missing)."""
    nt = field.grid.nt
    L = field.values
    dt = field.grid.dt
    if 1 <= n <= nt - 2:
        return (L[:, :, n + 1] - L[:, :, n - 1]) / (2 * dt)
    if n == nt - 1 and options.time_scheme == "first_order_last":
        return (L[:, :, n] - L[:, :, n - 1]) / dt
    hint = " (enable time_scheme='first_order_last' for the final step)" if n == nt - 1 else ""
    raise UnsupportedIndexError(f"time index {n} is outside the range of the {options.time_scheme} scheme{hint}")


def _one_sided(L, h, axis, boundary):
    """Forward and backward differences along ``axis`` of a 2-D slice."""
    fwd = np.full(L.shape, MISSING)
    bwd = np.full(L.shape, MISSING)
    d = np.diff(L, axis=axis) / h
    if axis == 0:
        fwd[:-1] = d
        bwd[1:] = d
    else:
        fwd[:, :-1] = d
        bwd[:, 1:] = d
    if boundary == "one_sided":
        fwd, bwd = np.where(np.isnan(fwd), bwd, fwd), np.where(np.isnan(bwd), fwd, bwd)
    return fwd, bwd


def _ring(shape):
    ring = np.zeros(shape, dtype=bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    return ring


def gradient_norm(field: ScalarField, n: int, options: VelocityOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Averaged forward/backward spatial gradient norm at slice ``n``."""
    g = field.grid
    L = field.values[:, :, n]
    px, mx = _one_sided(L, g.dx, 0, options.boundary)
    py, my = _one_sided(L, g.dy, 1, options.boundary)
    out = 0.25 * (np.hypot(px, py) + np.hypot(px, my) + np.hypot(mx, py) + np.hypot(mx, my))
    if options.boundary == "mask":
        out[_ring(L.shape)] = MISSING
    return out


def central_gradient(field: ScalarField, n: int, options: VelocityOptions = DEFAULT_OPTIONS):
    """``(gx, gy)`` as the mean of the forward and backward differences."""
    g = field.grid
    L = field.values[:, :, n]
    px, mx = _one_sided(L, g.dx, 0, options.boundary)
    py, my = _one_sided(L, g.dy, 1, options.boundary)
    gx = 0.5 * (px + mx)
    gy = 0.5 * (py + my)
    if options.boundary == "mask":
        ring = _ring(L.shape)
        gx[ring] = MISSING
        gy[ring] = MISSING
    return gx, gy


def _valid_index(n, nt, options):
    return 1 <= n <= nt - 2 or (n == nt - 1 and options.time_scheme == "first_order_last")


def _floor_mask(norm, eps):
    """True where ``norm`` is too small to divide by."""
    with np.errstate(invalid="ignore"):
        top = np.nanmax(norm) if np.isfinite(norm).any() else 0.0
        return ~(norm > eps * top) | ~(norm > 0)


def velocity_slice(field: ScalarField, n: int, options: VelocityOptions = DEFAULT_OPTIONS):
    """``(dt, gradnorm, smin, vx, vy)`` arrays for one time slice."""
    dL = time_derivative(field, n, options)
    G = gradient_norm(field, n, options)
    gx, gy = central_gradient(field, n, options)
    gc = np.hypot(gx, gy)
    bad = _floor_mask(G, options.gradient_floor) | np.isnan(dL) | ~(gc > 0) | ~field.grid.mask
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.abs(dL) / G
        sgn = np.where(dL < 0, -1.0, 1.0)
        vx = sgn * gx / gc
        vy = sgn * gy / gc
    s[bad] = MISSING
    vx[bad] = MISSING
    vy[bad] = MISSING
    return dL, G, s, vx, vy


def min_velocity(field: ScalarField, options: VelocityOptions = DEFAULT_OPTIONS) -> VectorField:
    """Minimal velocity magnitude and direction on every slice.

    Slices the time scheme cannot serve (the first, and the last unless
    ``first_order_last``) are missing, as are masked cells, the boundary
    ring under ``boundary="mask"``, and cells whose gradient norm is below
    ``gradient_floor`` times the slice maximum.  A zero time derivative
    gives magnitude 0 with the gradient direction.
    """
    g = field.grid
    mag = np.full(g.shape, MISSING)
    vx = np.full(g.shape, MISSING)
    vy = np.full(g.shape, MISSING)
    for n in range(g.nt):
        if not _valid_index(n, g.nt, options):
            continue
        _, _, mag[:, :, n], vx[:, :, n], vy[:, :, n] = velocity_slice(field, n, options)
    return VectorField(g, mag, vx, vy)


def directional_velocity(field: ScalarField, direction, options: VelocityOptions = DEFAULT_OPTIONS) -> ScalarField:
    """Speed ``|dL/dt| / |v . grad L|`` along the fixed unit vector ``v``.

    Uses central spatial differences; cells where ``|v . grad L|`` falls below
    ``gradient_floor`` times the slice maximum of the central gradient norm
    are missing.
    """
    v = np.asarray(direction, dtype=float).reshape(2)
    if abs(np.hypot(v[0], v[1]) - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, got norm {np.hypot(v[0], v[1])}")
    g = field.grid
    out = np.full(g.shape, MISSING)
    for n in range(g.nt):
        if not _valid_index(n, g.nt, options):
            continue
        dL = time_derivative(field, n, options)
        gx, gy = central_gradient(field, n, options)
        dd = np.abs(v[0] * gx + v[1] * gy)
        with np.errstate(invalid="ignore"):
            top = np.nanmax(np.hypot(gx, gy)) if np.isfinite(gx).any() else 0.0
            bad = ~(dd > options.gradient_floor * top) | ~(dd > 0) | np.isnan(dL) | ~g.mask
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.abs(dL) / dd
        s[bad] = MISSING
        out[:, :, n] = s
    return ScalarField(g, out)
