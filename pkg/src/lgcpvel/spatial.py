"""Spatial offset ``eta(u)``: Gaussian kernel densities and population rasters.

Kernel estimates carry no edge correction, so they are biased low within a
few bandwidths of the window boundary.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import MISSING, ScalarField, SpatioTemporalGrid


class CoverageError(ValueError):
    """Raised when a raster does not overlap the grid."""


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return p.reshape(-1, 2)


def adaptive_kernel_density(points, h, query) -> np.ndarray | float:
    """Gaussian kernel density with one bandwidth per point.

    ``(1/n) sum_i h_i^-2 phi((u - u_i) / h_i)`` with the standard bivariate
    normal kernel ``phi``.
    """
    pts = _as_points(points)
    n = len(pts)
    if n == 0:
        raise ValueError("kernel density needs at least one point")
    h = np.broadcast_to(np.asarray(h, dtype=float), (n,))
    if not (h > 0).all():
        raise ValueError("bandwidths must be positive")
    q = np.asarray(query, dtype=float)
    scalar = q.ndim == 1
    q = q.reshape(-1, 2)
    out = np.empty(len(q))
    # bounded memory: ~4M pair evaluations per block
    block = max(1, (1 << 22) // n)
    for s in range(0, len(q), block):
        d = q[s:s + block, None, :] - pts[None, :, :]
        r2 = np.einsum("qnk,qnk->qn", d, d) / (h * h)
        out[s:s + block] = np.sum(np.exp(-0.5 * r2) / (h * h), axis=1) / (2 * math.pi * n)
    return float(out[0]) if scalar else out


def kernel_density(points, h: float, query) -> np.ndarray | float:
    """Fixed-bandwidth Gaussian kernel density estimate at ``query``."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    return adaptive_kernel_density(points, float(h), query)


def kernel_offset(points, h: float, grid: SpatioTemporalGrid) -> ScalarField:
    """Kernel density at spatial cell centers, constant in time, missing off-mask."""
    vals = kernel_density(points, h, grid.spatial_centers()).reshape(grid.nx, grid.ny)
    vals = np.where(grid.mask, vals, MISSING)
    return ScalarField(grid, np.repeat(vals[:, :, None], grid.nt, axis=2))


@dataclass(frozen=True)
class Raster:
    """Cell grid of population densities indexed ``values[ix, iy]``.

    ``iy = 0`` is the southernmost row; ``(x0, y0)`` is the lower-left
    corner.  NaN marks nodata.
    """

    x0: float
    y0: float
    cellsize: float
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        if not self.cellsize > 0:
            raise ValueError("cellsize must be positive")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("raster values must be two-dimensional")
        if (v[~np.isnan(v)] < 0).any():
            raise ValueError("raster values must be non-negative or nodata")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def ncols(self) -> int:
        return self.values.shape[0]

    @property
    def nrows(self) -> int:
        return self.values.shape[1]

    def centers(self):
        xs = self.x0 + (np.arange(self.ncols) + 0.5) * self.cellsize
        ys = self.y0 + (np.arange(self.nrows) + 0.5) * self.cellsize
        return xs, ys


def _lower_wins_index(v, origin, step):
    """Index of the cell ``(edge, edge + step]`` containing ``v``; the first cell also holds its lower edge."""
    k = (v - origin) / step
    idx = np.ceil(k).astype(np.int64) - 1
    idx[k == 0] = 0
    return idx


def raster_offset(raster: Raster, grid: SpatioTemporalGrid) -> ScalarField:
    """Expected-count offset per spatial cell from a population raster.

    Each raster cell is assigned to the grid cell containing its center; a
    center on a shared edge goes to the left/lower cell.  The offset is the
    grid cell area times the mean of the assigned raster values, repeated
    over time.  Nodata counts as zero (with a warning); unmasked cells that
    receive no raster centers are missing.
    """
    xs, ys = raster.centers()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = np.asarray(raster.values, dtype=float)
    nodata = np.isnan(vals)
    i = _lower_wins_index(X.ravel(), grid.x0, grid.dx)
    j = _lower_wins_index(Y.ravel(), grid.y0, grid.dy)
    inside = (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny)
    if not inside.any():
        raise CoverageError("raster does not overlap the grid extent")
    n_nodata = int(np.count_nonzero(nodata.ravel()[inside]))
    if n_nodata:
        warnings.warn(f"{n_nodata} nodata raster cells treated as 0", RuntimeWarning, stacklevel=2)
    v = np.nan_to_num(vals.ravel(), nan=0.0)[inside]
    sums = np.zeros((grid.nx, grid.ny))
    counts = np.zeros((grid.nx, grid.ny))
    np.add.at(sums, (i[inside], j[inside]), v)
    np.add.at(counts, (i[inside], j[inside]), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        offset = grid.cell_area * sums / counts
    offset = np.where(grid.mask & (counts > 0), offset, MISSING)
    return ScalarField(grid, np.repeat(offset[:, :, None], grid.nt, axis=2))


_ESRI_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


def read_esri_ascii(path) -> Raster:
    """Read an ESRI ASCII grid.

    Accepts ``xllcenter``/``yllcenter`` in place of the corner keys and an
    optional ``NODATA_value`` (default -9999).
    """
    header = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    lineno = 0
    while lineno < len(lines):
        parts = lines[lineno].split()
        if not parts:
            lineno += 1
            continue
        key = parts[0].lower()
        if key[0].isdigit() or key[0] in "-+.":
            break
        if len(parts) != 2:
            raise ValueError(f"{path}: line {lineno + 1}: malformed header entry {lines[lineno]!r}")
        header[key] = parts[1]
        lineno += 1
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cellsize = float(header["cellsize"])
        if "xllcorner" in header:
            x0 = float(header["xllcorner"])
        else:
            x0 = float(header["xllcenter"]) - cellsize / 2
        if "yllcorner" in header:
            y0 = float(header["yllcorner"])
        else:
            y0 = float(header["yllcenter"]) - cellsize / 2
    except KeyError as exc:
        raise ValueError(f"{path}: missing header key {exc.args[0]}") from None
    nodata = float(header.get("nodata_value", -9999))
    data = []
    for k in range(lineno, len(lines)):
        try:
            data.extend(float(tok) for tok in lines[k].split())
        except ValueError:
            raise ValueError(f"{path}: line {k + 1}: non-numeric raster value") from None
    if len(data) != ncols * nrows:
        raise ValueError(f"{path}: expected {ncols * nrows} values, found {len(data)}")
    arr = np.asarray(data).reshape(nrows, ncols)
    arr = np.where(arr == nodata, np.nan, arr)
    # file rows run north to south
    return Raster(x0, y0, cellsize, arr[::-1].T, nodata)


def write_esri_ascii(raster: Raster, path):
    vals = np.where(np.isnan(raster.values), raster.nodata, raster.values)
    with open(path, "w") as fh:
        fh.write(f"ncols {raster.ncols}\nnrows {raster.nrows}\n")
        fh.write(f"xllcorner {float(raster.x0)!r}\nyllcorner {float(raster.y0)!r}\n")
        fh.write(f"cellsize {float(raster.cellsize)!r}\nNODATA_value {float(raster.nodata)!r}\n")
        for row in vals.T[::-1]:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_points_csv(path) -> np.ndarray:
    """``(n, 2)`` array from a CSV with ``x`` and ``y`` columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns x,y; got {reader.fieldnames}")
        pts = []
        for k, row in enumerate(reader, start=2):
            try:
                pts.append((float(row["x"]), float(row["y"])))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {k}: cannot parse {row}") from None
    return np.asarray(pts, dtype=float).reshape(-1, 2)
