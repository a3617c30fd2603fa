"""Plain-text table formats shared by the command-line pipeline.

Every file starts with a comment line ``# schema=<name>/<version> config=<hash>``.
Grid files add a ``# grid=<json>`` line so the lattice can be rebuilt.
Floats are written with ``repr`` so they round-trip exactly; missing values
are empty fields.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from .grid import PointPattern, ScalarField, SpatioTemporalGrid, VectorField

SCHEMA_VERSION = 1


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header_line(kind: str, chash: str) -> str:
    return f"# schema=lgcpvel.{kind}/{SCHEMA_VERSION} config={chash}\n"


def _fmt(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


class ParseError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}: line {lineno}: {message}")
        self.lineno = lineno


def _read_lines(path):
    with open(path, newline="") as fh:
        return fh.read().split("\n")


def _parse_float(tok, path, lineno):
    tok = tok.strip()
    if tok == "":
        return math.nan
    try:
        return float(tok)
    except ValueError:
        raise ParseError(path, lineno, f"not a number: {tok!r}") from None


def write_grid_csv(field: ScalarField, path, chash: str = "none", kind: str = "grid"):
    g = field.grid
    xs, ys, ts = g.x_centers(), g.y_centers(), g.t_centers()
    with open(path, "w", newline="") as fh:
        fh.write(header_line(kind, chash))
        fh.write("# grid=" + json.dumps(g.to_dict(), sort_keys=True) + "\n")
        fh.write("i,j,n,x,y,t,value\n")
        v = field.values
        for i in range(g.nx):
            for j in range(g.ny):
                for n in range(g.nt):
                    fh.write(f"{i},{j},{n},{_fmt(xs[i])},{_fmt(ys[j])},{_fmt(ts[n])},{_fmt(v[i, j, n])}\n")


def read_grid_csv(path) -> ScalarField:
    lines = _read_lines(path)
    grid = None
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        if lines[k].startswith("# grid="):
            try:
                grid = SpatioTemporalGrid.from_dict(json.loads(lines[k][len("# grid="):]))
            except (ValueError, KeyError) as exc:
                raise ParseError(path, k + 1, f"bad grid definition ({exc})") from None
        k += 1
    if grid is None:
        raise ParseError(path, k + 1, "missing '# grid=' header")
    if k >= len(lines) or lines[k].strip() != "i,j,n,x,y,t,value":
        raise ParseError(path, k + 1, "expected column header 'i,j,n,x,y,t,value'")
    values = np.full(grid.shape, np.nan)
    seen = np.zeros(grid.shape, dtype=bool)
    for lineno in range(k + 2, len(lines) + 1):
        line = lines[lineno - 1]
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ParseError(path, lineno, f"expected 7 fields, got {len(parts)}")
        try:
            i, j, n = (int(p) for p in parts[:3])
        except ValueError:
            raise ParseError(path, lineno, "non-integer cell index") from None
        if not (0 <= i < grid.nx and 0 <= j < grid.ny and 0 <= n < grid.nt):
            raise ParseError(path, lineno, f"cell index ({i},{j},{n}) outside the grid")
        values[i, j, n] = _parse_float(parts[6], path, lineno)
        seen[i, j, n] = True
    if not seen.all():
        raise ParseError(path, len(lines), f"{np.count_nonzero(~seen)} grid cells have no row")
    try:
        return ScalarField(grid, values)
    except ValueError as exc:
        raise ParseError(path, len(lines), str(exc)) from None


def write_pattern_csv(pattern: PointPattern, path, chash: str = "none"):
    with open(path, "w", newline="") as fh:
        fh.write(header_line("pattern", chash))
        w = ",".join(repr(float(v)) for v in pattern.window)
        ts = ",".join(repr(float(v)) for v in pattern.tspan)
        fh.write(f"# window={w} tspan={ts}\n")
        fh.write("x,y,t\n")
        for x, y, t in pattern.events:
            fh.write(f"{float(x)!r},{float(y)!r},{float(t)!r}\n")


def read_pattern_csv(path, window=None, tspan=None) -> PointPattern:
    """Read an ``x,y,t`` case file.

    The window and time span come from the ``# window=`` header if present,
    otherwise from the arguments, otherwise from the event bounding box.
    """
    lines = _read_lines(path)
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        line = lines[k]
        if line.startswith("# window=") and window is None:
            try:
                wpart, tpart = line[2:].split(" ")
                window = tuple(float(v) for v in wpart.split("=")[1].split(","))
                tspan = tuple(float(v) for v in tpart.split("=")[1].split(","))
            except ValueError:
                raise ParseError(path, k + 1, "malformed window header") from None
        k += 1
    if k >= len(lines) or [c.strip() for c in lines[k].split(",")] != ["x", "y", "t"]:
        raise ParseError(path, k + 1, "expected column header 'x,y,t'")
    rows = []
    for lineno in range(k + 2, len(lines) + 1):
        line = lines[lineno - 1]
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(path, lineno, f"expected 3 fields, got {len(parts)}")
        vals = [_parse_float(p, path, lineno) for p in parts]
        if any(math.isnan(v) for v in vals):
            raise ParseError(path, lineno, "empty coordinate")
        rows.append(vals)
    ev = np.asarray(rows, dtype=float).reshape(-1, 3)
    if window is None:
        if not len(ev):
            raise ValueError(f"{path}: cannot infer the window of an empty pattern")
        window = (ev[:, 0].min(), ev[:, 0].max(), ev[:, 1].min(), ev[:, 1].max())
    if tspan is None:
        if not len(ev):
            raise ValueError(f"{path}: cannot infer the time span of an empty pattern")
        tspan = (ev[:, 2].min(), ev[:, 2].max())
    return PointPattern(ev, window, tspan)


def write_table_csv(columns: dict, path, kind: str, chash: str = "none"):
    """Write equal-length numeric columns; NaN becomes an empty field."""
    names = list(columns)
    arrays = [np.asarray(columns[c], dtype=float).ravel() for c in names]
    with open(path, "w", newline="") as fh:
        fh.write(header_line(kind, chash))
        fh.write(",".join(names) + "\n")
        for row in zip(*arrays):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_text_table(columns: dict, path, kind: str, chash: str = "none"):
    """Write equal-length columns of arbitrary values with CSV quoting."""
    names = list(columns)
    with open(path, "w", newline="") as fh:
        fh.write(header_line(kind, chash))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        w.writerows(zip(*(columns[c] for c in names)))


def read_table_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        names = next(reader)
        cols = {n: [] for n in names}
        for row in reader:
            for n, v in zip(names, row):
                cols[n].append(math.nan if v == "" else float(v))
    return {n: np.asarray(v) for n, v in cols.items()}


def vector_field_table(vf: VectorField, indices=None) -> dict:
    """Long-format columns ``x, y, t, smin, vx, vy`` for the given time indices."""
    g = vf.grid
    indices = range(g.nt) if indices is None else indices
    X, Y = np.meshgrid(g.x_centers(), g.y_centers(), indexing="ij")
    tc = g.t_centers()
    cols = {k: [] for k in ("x", "y", "t", "smin", "vx", "vy")}
    for n in indices:
        cols["x"].append(X.ravel())
        cols["y"].append(Y.ravel())
        cols["t"].append(np.full(X.size, tc[n]))
        cols["smin"].append(vf.magnitude[:, :, n].ravel())
        cols["vx"].append(vf.vx[:, :, n].ravel())
        cols["vy"].append(vf.vy[:, :, n].ravel())
    return {k: np.concatenate(v) if v else np.empty(0) for k, v in cols.items()}


def slice_table(grid: SpatioTemporalGrid, n: int, values: np.ndarray) -> dict:
    X, Y = np.meshgrid(grid.x_centers(), grid.y_centers(), indexing="ij")
    return {
        "x": X.ravel(),
        "y": Y.ravel(),
        "t": np.full(X.size, grid.t_centers()[n]),
        "value": np.asarray(values).ravel(),
    }
