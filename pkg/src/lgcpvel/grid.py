"""Regular space-time lattices and the data carriers defined on them.

Storage order is row-major over ``(i, j, n)``: ``i`` indexes x (slowest),
``j`` indexes y and ``n`` indexes time (fastest).  Missing values are NaN
throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MISSING = np.nan


class DomainMismatchError(ValueError):
    """Raised when a pattern and a grid do not overlap."""


@dataclass(frozen=True)
class SpatioTemporalGrid:
    """Rectangular lattice of ``nx * ny`` spatial cells and ``nt`` time steps.

    ``mask`` flags the spatial cells that belong to the study region; it has
    shape ``(nx, ny)`` and defaults to all-True.
    """

    x0: float
    y0: float
    t0: float
    nx: int
    ny: int
    nt: int
    dx: float
    dy: float
    dt: float
    mask: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("nx", "ny", "nt"):
            if int(getattr(self, name)) < 3:
                raise ValueError(f"{name} must be >= 3 for finite differences, got {getattr(self, name)}")
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("dx", "dy", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        mask = self.mask
        if mask is None:
            mask = np.ones((self.nx, self.ny), dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.size != self.nx * self.ny:
            raise ValueError(f"mask has {mask.size} entries, expected {self.nx * self.ny}")
        mask = mask.reshape(self.nx, self.ny).copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def unit_cube(cls, nx: int, ny: int, nt: int, mask=None) -> "SpatioTemporalGrid":
        """Grid covering ``[0, 1]^3`` with the given cell counts."""
        return cls(0.0, 0.0, 0.0, nx, ny, nt, 1.0 / nx, 1.0 / ny, 1.0 / nt, mask)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nt)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nt

    @property
    def extent(self) -> tuple[float, float, float, float, float, float]:
        """``(xmin, xmax, ymin, ymax, tmin, tmax)``."""
        return (
            self.x0,
            self.x0 + self.nx * self.dx,
            self.y0,
            self.y0 + self.ny * self.dy,
            self.t0,
            self.t0 + self.nt * self.dt,
        )

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dt

    def x_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.dy

    def t_centers(self) -> np.ndarray:
        return self.t0 + (np.arange(self.nt) + 0.5) * self.dt

    def spatial_centers(self) -> np.ndarray:
        """``(nx * ny, 2)`` array of spatial cell centers, row-major in ``(i, j)``."""
        X, Y = np.meshgrid(self.x_centers(), self.y_centers(), indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def with_mask(self, mask) -> "SpatioTemporalGrid":
        return SpatioTemporalGrid(
            self.x0, self.y0, self.t0, self.nx, self.ny, self.nt, self.dx, self.dy, self.dt, mask
        )

    def to_dict(self) -> dict:
        d = {
            "x0": self.x0,
            "y0": self.y0,
            "t0": self.t0,
            "nx": self.nx,
            "ny": self.ny,
            "nt": self.nt,
            "dx": self.dx,
            "dy": self.dy,
            "dt": self.dt,
        }
        if not self.mask.all():
            d["mask"] = self.mask.astype(int).ravel().tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpatioTemporalGrid":
        return cls(
            float(d["x0"]),
            float(d["y0"]),
            float(d.get("t0", 0.0)),
            int(d["nx"]),
            int(d["ny"]),
            int(d["nt"]),
            float(d["dx"]),
            float(d["dy"]),
            float(d["dt"]),
            d.get("mask"),
        )


@dataclass(frozen=True)
class PointPattern:
    """Events ``(x, y, t)`` observed in ``window`` x ``tspan``.

    ``events`` is an ``(n, 3)`` float array; an empty pattern is valid.
    """

    events: np.ndarray
    window: tuple[float, float, float, float]
    tspan: tuple[float, float]

    def __post_init__(self):
        ev = np.asarray(self.events, dtype=float).reshape(-1, 3).copy()
        ev.setflags(write=False)
        object.__setattr__(self, "events", ev)
        object.__setattr__(self, "window", tuple(float(v) for v in self.window))
        object.__setattr__(self, "tspan", tuple(float(v) for v in self.tspan))
        xmin, xmax, ymin, ymax = self.window
        tmin, tmax = self.tspan
        if xmax < xmin or ymax < ymin or tmax < tmin:
            raise ValueError("window and tspan must be ordered (min, max)")
        if len(ev):
            x, y, t = ev.T
            inside = (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax) & (t >= tmin) & (t <= tmax)
            if not inside.all():
                raise ValueError(f"{np.count_nonzero(~inside)} events lie outside window x tspan")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def x(self) -> np.ndarray:
        return self.events[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.events[:, 1]

    @property
    def t(self) -> np.ndarray:
        return self.events[:, 2]

    @property
    def volume(self) -> float:
        xmin, xmax, ymin, ymax = self.window
        return (xmax - xmin) * (ymax - ymin) * (self.tspan[1] - self.tspan[0])


@dataclass(frozen=True)
class ScalarField:
    """Values on every cell of ``grid``; NaN marks missing cells."""

    grid: SpatioTemporalGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(f"field has {v.size} values, grid has {self.grid.size} cells")
        v = v.reshape(self.grid.shape).copy()
        if np.isinf(v).any():
            raise ValueError("non-missing field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: SpatioTemporalGrid, fn, masked: bool = True) -> "ScalarField":
        """Evaluate the vectorized ``fn(x, y, t)`` at every cell center."""
        X, Y, T = np.meshgrid(grid.x_centers(), grid.y_centers(), grid.t_centers(), indexing="ij")
        v = np.asarray(fn(X, Y, T), dtype=float) * np.ones(grid.shape)
        if masked:
            v = np.where(grid.mask[:, :, None], v, MISSING)
        return cls(grid, v)

    def scaled(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * c)

    def slice(self, n: int) -> np.ndarray:
        return self.values[:, :, n]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass(frozen=True)
class VectorField:
    """Per-cell magnitude and unit direction; NaN magnitude marks missing cells."""

    grid: SpatioTemporalGrid
    magnitude: np.ndarray
    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        for name in ("magnitude", "vx", "vy"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(self.grid.shape).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        present = ~np.isnan(self.magnitude)
        if (self.magnitude[present] < 0).any():
            raise ValueError("velocity magnitude must be non-negative")
        norm = np.hypot(self.vx[present], self.vy[present])
        if present.any() and np.max(np.abs(norm - 1.0)) > 1e-12:
            raise ValueError("direction vectors must have unit norm where present")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.magnitude)


def cell_centers(grid: SpatioTemporalGrid) -> np.ndarray:
    """``(nx * ny * nt, 3)`` array of cell centers in row-major ``(i, j, n)`` order."""
    X, Y, T = np.meshgrid(grid.x_centers(), grid.y_centers(), grid.t_centers(), indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), T.ravel()])


def _axis_index(v, origin, step, n):
    k = np.floor((v - origin) / step).astype(np.int64)
    # the upper edge of the last cell is closed
    k[(k == n) & np.isclose(v, origin + n * step, rtol=0, atol=1e-12 * max(1.0, abs(step) * n))] = n - 1
    return k


def cell_index(grid: SpatioTemporalGrid, x, y, t):
    """Cell indices ``(i, j, n)`` of the given coordinates and an inside flag.

    Cells are half-open ``[edge, edge + step)`` except the last cell along each
    axis, which also contains its upper edge.
    """
    x, y, t = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, y, t))
    i = _axis_index(x, grid.x0, grid.dx, grid.nx)
    j = _axis_index(y, grid.y0, grid.dy, grid.ny)
    n = _axis_index(t, grid.t0, grid.dt, grid.nt)
    inside = (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny) & (n >= 0) & (n < grid.nt)
    return i, j, n, inside


def bin_counts(pattern: PointPattern, grid: SpatioTemporalGrid) -> np.ndarray:
    """Integer event counts per cell, shape ``grid.shape``.

    Events outside the grid extent are not counted.
    """
    xmin, xmax, ymin, ymax, tmin, tmax = grid.extent
    pxmin, pxmax, pymin, pymax = pattern.window
    ptmin, ptmax = pattern.tspan
    if pxmax < xmin or pxmin > xmax or pymax < ymin or pymin > ymax or ptmax < tmin or ptmin > tmax:
        raise DomainMismatchError(
            f"grid extent {grid.extent} does not intersect pattern window {pattern.window} x {pattern.tspan}"
        )
    counts = np.zeros(grid.shape, dtype=np.int64)
    if len(pattern) == 0:
        return counts
    i, j, n, inside = cell_index(grid, pattern.x, pattern.y, pattern.t)
    np.add.at(counts, (i[inside], j[inside], n[inside]), 1)
    return counts
