"""``lgcpvel`` command line: simulate, fit-temporal, fit, velocity, validate.

Exit codes: 0 success, 1 internal error, 2 user or configuration error,
3 a validation check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import shutil
import sys
import tempfile
import traceback
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io, oracle, validate
from .covariance import CovarianceSpec
from .grid import ScalarField, SpatioTemporalGrid, bin_counts
from .simulate import RNG_NAME, sample_lgcp, sample_poisson
from .spatial import kernel_offset, raster_offset, read_esri_ascii, read_points_csv
from .stfit import FitConfig, default_candidates, fit, predict_intensity, write_fit_result
from .temporal import TemporalBasisSpec, eval_mu, fit_temporal, read_counts_csv, write_fit_json
from .velocity import UnsupportedIndexError, VelocityOptions, velocity_slice

EXIT_OK, EXIT_INTERNAL, EXIT_USER, EXIT_VALIDATION = 0, 1, 2, 3


class StageError(Exception):
    def __init__(self, stage, cause, code=EXIT_USER):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.code = code


_USER_ERRORS = (OSError, ValueError, UnsupportedIndexError, KeyError)


@contextmanager
def stage(name):
    """Tag any exception raised inside with the pipeline stage ``name``."""
    try:
        yield
    except StageError:
        raise
    except FileNotFoundError as exc:
        raise StageError(name, f"file not found: {exc.filename}") from exc
    except _USER_ERRORS as exc:
        raise StageError(name, exc) from exc
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}", EXIT_INTERNAL) from exc


class Outputs:
    """Stage files in a temporary directory; move them into place only on success."""

    def __init__(self, target: Path, chash: str):
        self.target = Path(target)
        self.chash = chash
        self.tmp = None
        self.written = []

    def __enter__(self):
        try:
            self.target.mkdir(parents=True, exist_ok=True)
            self.tmp = Path(tempfile.mkdtemp(prefix=".lgcpvel-", dir=self.target))
        except OSError as exc:
            raise StageError("output", f"output directory {self.target} is not writable ({exc.strerror})") from exc
        return self

    def path(self, name) -> Path:
        self.written.append(name)
        return self.tmp / name

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in self.written:
                    (self.tmp / name).replace(self.target / name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _grid(cfg) -> SpatioTemporalGrid:
    return SpatioTemporalGrid.from_dict(cfg["grid"])


def _json_header(cfg, kind):
    return {"schema": f"lgcpvel.{kind}/{io.SCHEMA_VERSION}", "config": cfgmod.digest(cfg)}


def _write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- simulate

def _oracle_params(cfg):
    o = cfg["simulate"]["oracle"]
    p = oracle.SimIntensityParams(lambda0=o["lambda0"], beta0=o["beta0"], beta1=o["beta1"],
                                  beta2=o["beta2"], beta3=o["beta3"])
    if o["expected_count"] is not None:
        p = oracle.calibrate_lambda0(p, o["expected_count"])
    return p


def cmd_simulate(cfg, out: Outputs):
    grid = _grid(cfg)
    sim = cfg["simulate"]
    xmin, xmax, ymin, ymax, tmin, tmax = grid.extent
    window, tspan = (xmin, xmax, ymin, ymax), (tmin, tmax)
    extra = {}
    if sim["source"] == "oracle":
        with stage("oracle"):
            params = _oracle_params(cfg)
            lam_max = 1.1 * oracle.max_intensity(params)
            proposals = lam_max * (xmax - xmin) * (ymax - ymin) * (tmax - tmin)
            if proposals > sim["oracle"]["max_proposals"]:
                raise ValueError(
                    f"dominating rate needs ~{proposals:.3g} proposals (limit "
                    f"simulate.oracle.max_proposals={sim['oracle']['max_proposals']:.3g}); "
                    "set simulate.oracle.expected_count to rescale lambda0"
                )
            truth = ScalarField.from_function(grid, lambda x, y, t: oracle.intensity(params, x, y, t))
            integral = oracle.integrate(params)
        with stage("simulate"):
            pattern = sample_poisson(lambda x, y, t: oracle.intensity(params, x, y, t),
                                     window, tspan, lam_max, cfg["seed"])
        extra["lambda0"] = params.lambda0
    elif sim["source"] == "lgcp":
        lg = sim["lgcp"]
        with stage("simulate"):
            spec = CovarianceSpec(**lg["covariance"])
            pattern, zeta, truth = sample_lgcp(
                lambda x, y: np.full(np.shape(x), lg["eta"]), lambda t: np.full(np.shape(t), lg["mu"]),
                spec, grid, lg["beta"], cfg["seed"], normalized=True, return_field=True,
            )
            integral = float(np.nansum(truth.values) * grid.cell_volume)
        io.write_grid_csv(zeta, out.path("zeta.csv"), out.chash, kind="zeta")
    else:
        rate = sim["constant_rate"]
        with stage("simulate"):
            pattern = sample_poisson(lambda x, y, t: np.full(np.shape(x), rate), window, tspan, rate, cfg["seed"])
            truth = ScalarField(grid, np.full(grid.shape, float(rate)))
            integral = rate * (xmax - xmin) * (ymax - ymin) * (tmax - tmin)
    io.write_pattern_csv(pattern, out.path("pattern.csv"), out.chash)
    io.write_grid_csv(truth, out.path("intensity.csv"), out.chash, kind="intensity")
    if sim["source"] == "oracle":
        io.write_table_csv(oracle.golden_table(params), out.path("golden_velocity.csv"), "golden", out.chash)
    summary = {"events": len(pattern), "intensity_integral": integral, "rng": RNG_NAME, **extra}
    _write_json(dict(_json_header(cfg, "simulate_summary"), **summary), out.path("summary.json"))
    print(f"events: {len(pattern)}")
    print(f"integral of lambda: {integral:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- fitting stages

def _cases(cfg, grid):
    path = cfg["inputs"]["cases"]
    if path is None:
        raise ValueError("inputs.cases is required")
    xmin, xmax, ymin, ymax, tmin, tmax = grid.extent
    return io.read_pattern_csv(path, (xmin, xmax, ymin, ymax), (tmin, tmax))


def _temporal_spec(cfg):
    return TemporalBasisSpec(**cfg["temporal"])


def run_temporal(cfg, grid, counts_grid):
    """Temporal fit plus ``mu`` per grid time slice (expected events per slice)."""
    spec = _temporal_spec(cfg)
    if cfg["inputs"]["counts"] is not None:
        t, y = read_counts_csv(cfg["inputs"]["counts"])
        step = float(np.median(np.diff(t))) if len(t) > 1 else grid.dt
    else:
        t, y, step = grid.t_centers(), counts_grid.sum(axis=(0, 1)).astype(float), grid.dt
    tf = fit_temporal(y, spec, t)
    mu = np.asarray(eval_mu(tf, grid.t_centers())) * (grid.dt / step)
    return tf, t, y, mu


def run_offset(cfg, grid, pattern):
    """Spatial share ``eta`` of each cell (sums to one over covered cells)."""
    kind = cfg["offset"]["kind"]
    if kind == "raster":
        path = cfg["inputs"]["raster"]
        if path is None:
            raise ValueError("offset.kind is 'raster' but inputs.raster is not set")
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            off = raster_offset(read_esri_ascii(path), grid)
        eta = off.values[:, :, 0]
    elif kind == "kernel":
        pts_path = cfg["inputs"]["population_points"]
        pts = read_points_csv(pts_path) if pts_path else np.column_stack([pattern.x, pattern.y])
        h = cfg["offset"]["bandwidth"]
        if h is None:
            raise ValueError("offset.kind is 'kernel' but offset.bandwidth is not set")
        eta = kernel_offset(pts, h, grid).values[:, :, 0] * grid.cell_area
    else:
        eta = np.where(grid.mask, 1.0, np.nan)
    total = np.nansum(eta)
    if not total > 0:
        raise ValueError("spatial offset is zero everywhere")
    return eta / total


def _candidates(cfg, grid):
    c = cfg["fit"]["candidates"]
    if c == "default":
        return default_candidates(grid, cfg["fit"]["nu"])
    return tuple(CovarianceSpec(**{"nu": cfg["fit"]["nu"], **d}) for d in c)


def _print_table(result):
    print("hyperparameter selection (log Laplace evidence):")
    print(f"  {'sigma2':>8} {'kappa':>10} {'nu':>5} {'a':>5} {'log_evidence':>16}")
    rows = result.candidates or [dict(result.spec.to_dict(), log_evidence=result.log_evidence)]
    best = result.spec.to_dict()
    for r in rows:
        mark = "*" if all(r[k] == best[k] for k in ("sigma2", "kappa", "nu", "a")) else " "
        ev = r["log_evidence"]
        ev_s = "failed" if ev is None or (isinstance(ev, float) and math.isnan(ev)) else f"{ev:.6f}"
        print(f"{mark} {r['sigma2']:8.4g} {r['kappa']:10.5g} {r['nu']:5.3g} {r['a']:5.3g} {ev_s:>16}")


def cmd_fit_temporal(cfg, out: Outputs):
    grid = _grid(cfg)
    with stage("ingest"):
        counts = None
        if cfg["inputs"]["counts"] is None:
            counts = bin_counts(_cases(cfg, grid), grid)
    with stage("temporal"):
        tf, t, y, mu = run_temporal(cfg, grid, counts)
    write_fit_json(tf, out.path("temporal_fit.json"), _json_header(cfg, "temporal_fit"))
    io.write_table_csv({"t": grid.t_centers(), "mu": mu}, out.path("mu.csv"), "mu", out.chash)
    for name, c, s in zip(tf.spec.column_names(), tf.coefficients, tf.stderr):
        print(f"{name:>10} {c: .6f} (se {s:.6f})")
    print(f"deviance {tf.deviance:.6f} after {tf.iterations} iterations")
    return EXIT_OK


def cmd_fit(cfg, out: Outputs):
    grid = _grid(cfg)
    with stage("ingest"):
        pattern = _cases(cfg, grid)
        counts = bin_counts(pattern, grid)
    with stage("temporal"):
        tf, _, _, mu = run_temporal(cfg, grid, counts)
    with stage("spatial-offset"):
        eta = run_offset(cfg, grid, pattern)
        offset = ScalarField(grid, eta[:, :, None] * mu[None, None, :] / grid.cell_volume)
    with stage("stfit"):
        fcfg = FitConfig(_candidates(cfg, grid), max_iter=cfg["fit"]["max_iter"], tol=cfg["fit"]["tol"],
                         fixed_beta=cfg["fit"]["fixed_beta"])
        result = fit(counts, offset, fcfg)
        lam_hat = predict_intensity(result, posterior_mean=True)
    write_fit_json(tf, out.path("temporal_fit.json"), _json_header(cfg, "temporal_fit"))
    io.write_grid_csv(offset, out.path("offset.csv"), out.chash, kind="offset")
    write_fit_result(result, out.path("fit_result.json"), _json_header(cfg, "fit_result"))
    io.write_grid_csv(lam_hat, out.path("intensity_hat.csv"), out.chash, kind="intensity")
    _print_table(result)
    print(f"events {len(pattern)}; mode |grad| {result.gradient_norm:.2e} after {result.iterations} iterations")
    return EXIT_OK


# ---------------------------------------------------------------- velocity

def cmd_velocity(cfg, out: Outputs):
    v = cfg["velocity"]
    with stage("ingest"):
        if v["input"] is None:
            raise ValueError("velocity.input (an intensity grid CSV) is required")
        field = io.read_grid_csv(v["input"])
    g = field.grid
    opts = VelocityOptions(v["time_scheme"], v["gradient_floor"], v["boundary"])
    if v["times"] is None:
        last = g.nt if opts.time_scheme == "first_order_last" else g.nt - 1
        times = list(range(1, last))
    else:
        times = [n if n >= 0 else g.nt + n for n in v["times"]]
    with stage("velocity"):
        slices = {}
        for n in times:
            if not 0 <= n < g.nt:
                raise UnsupportedIndexError(f"time index {n} outside 0..{g.nt - 1}")
            slices[n] = velocity_slice(field, n, opts)
    for n, (dL, G, s, vx, vy) in slices.items():
        io.write_table_csv(io.slice_table(g, n, np.abs(dL)), out.path(f"abs_dt_{n:04d}.csv"), "abs_dt", out.chash)
        io.write_table_csv(io.slice_table(g, n, G), out.path(f"gradnorm_{n:04d}.csv"), "gradnorm", out.chash)
        io.write_table_csv(io.slice_table(g, n, s), out.path(f"smin_{n:04d}.csv"), "smin", out.chash)
        tab = io.slice_table(g, n, s)
        direction = {"x": tab["x"], "y": tab["y"], "t": tab["t"], "smin": s.ravel(), "vx": vx.ravel(), "vy": vy.ravel()}
        io.write_table_csv(direction, out.path(f"direction_{n:04d}.csv"), "direction", out.chash)
        print(f"n={n} t={g.t_centers()[n]:.6g}: {np.count_nonzero(~np.isnan(s))} cells, median smin {np.nanmedian(s) if np.isfinite(s).any() else float('nan'):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- validate

def cmd_validate(cfg, out: Outputs):
    val = cfg["validate"]
    only = set(val["checks"]) if val["checks"] else None
    seed = cfg["seed"]
    artifacts = None
    if only is None or only & {"AC11", "PIPE"}:
        with stage("validate-pipeline"):
            artifacts = validate.pipeline_artifacts(seed + 11)
    with stage("validate"):
        checks = validate.run_all(seed, val["dt_override"], only, artifacts)
    io.write_text_table(validate.report_rows(checks), out.path("report.csv"), "validation_report", out.chash)
    if artifacts is not None:
        validate.write_artifacts(out.tmp, artifacts, out.chash)
        out.written += ["golden_velocity.csv", "pattern.csv", "intensity_hat.csv"]
    for c in checks:
        print(c.line() + f" [{c.seconds:.2f}s]")
    n_fail = sum(not c.passed for c in checks)
    print(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return EXIT_VALIDATION if n_fail else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-temporal": cmd_fit_temporal,
    "fit": cmd_fit,
    "velocity": cmd_velocity,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------- argument parsing

def _json_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


# (flag, config path, type, commands)
FLAGS = [
    ("--seed", "seed", int, None),
    ("--cases", "inputs.cases", str, ("fit-temporal", "fit")),
    ("--raster", "inputs.raster", str, ("fit",)),
    ("--counts", "inputs.counts", str, ("fit-temporal", "fit")),
    ("--population-points", "inputs.population_points", str, ("fit",)),
    ("--source", "simulate.source", str, ("simulate",)),
    ("--expected-count", "simulate.oracle.expected_count", float, ("simulate",)),
    ("--constant-rate", "simulate.constant_rate", float, ("simulate",)),
    ("--offset", "offset.kind", str, ("fit",)),
    ("--bandwidth", "offset.bandwidth", float, ("fit",)),
    ("--input", "velocity.input", str, ("velocity",)),
    ("--times", "velocity.times", _int_list, ("velocity",)),
    ("--time-scheme", "velocity.time_scheme", str, ("velocity",)),
    ("--boundary", "velocity.boundary", str, ("velocity",)),
    ("--gradient-floor", "velocity.gradient_floor", float, ("velocity",)),
    ("--dt-override", "validate.dt_override", float, ("validate",)),
    ("--checks", "validate.checks", lambda s: [c.strip() for c in s.split(",") if c.strip()], ("validate",)),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgcpvel", description="LGCP intensity fitting and minimal-velocity maps.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("-o", "--output-dir", help=f"output directory (default ${cfgmod.OUTPUT_ENV} or ./lgcpvel-out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config field, e.g. --set grid.nt=40 (VALUE parsed as JSON)")
        for flag, key, typ, cmds in FLAGS:
            if cmds is None or name in cmds:
                p.add_argument(flag, dest=key.replace(".", "__"), type=typ, default=None, help=f"sets {key}")
        if name == "velocity":
            p.add_argument("--first-order-last", action="store_true",
                           help="allow the final time index (backward difference)")
    return parser


def _overrides(args):
    pairs = []
    for item in args.set:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), _json_value(v)))
    for _, key, _, _ in FLAGS:
        val = getattr(args, key.replace(".", "__"), None)
        if val is not None:
            pairs.append((key, val))
    if getattr(args, "first_order_last", False):
        pairs.append(("velocity.time_scheme", "first_order_last"))
    if args.output_dir is not None:
        pairs.append(("output_dir", args.output_dir))
    return pairs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    prog = f"lgcpvel {args.command}"
    try:
        cfg = cfgmod.load(args.config, _overrides(args))
        with Outputs(cfgmod.output_dir(cfg), cfgmod.digest(cfg)) as out:
            code = COMMANDS[args.command](cfg, out)
        if code == EXIT_OK or code == EXIT_VALIDATION:
            print(f"wrote {len(out.written)} files to {out.target}")
        return code
    except cfgmod.ConfigError as exc:
        print(f"{prog}: config error: {exc}", file=sys.stderr)
        return EXIT_USER
    except StageError as exc:
        print(f"{prog}: {exc}", file=sys.stderr)
        if exc.code == EXIT_INTERNAL:
            traceback.print_exception(exc.__cause__, file=sys.stderr)
        return exc.code
    except Exception:  # pragma: no cover - defensive
        print(f"{prog}: internal error", file=sys.stderr)
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
