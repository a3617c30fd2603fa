"""Oracle-equivalence checks behind ``lgcpvel validate``.

Each check returns a :class:`Check` with the observed value, its tolerance
and a verdict.  Checks are deterministic given the seed; wall-clock times
are reported separately so that written artifacts stay byte-identical.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import io, oracle
from .covariance import CovarianceSpec, cov, cov_matrices
from .grid import ScalarField, SpatioTemporalGrid, bin_counts, cell_centers
from .simulate import make_rng, sample_gaussian_field, sample_poisson, split_seed
from .spatial import kernel_density
from .stfit import FitConfig, fit, predict_intensity
from .temporal import TemporalBasisSpec, fit_temporal
from .velocity import VelocityOptions, directional_velocity, min_velocity, velocity_slice

REFERENCE_TIMES = (0.225, 0.575, 0.875)
REFERENCE_STEPS = (0.2, 0.2, 0.1)


@dataclass
class Check:
    id: str
    name: str
    observed: str
    tolerance: str
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.id:5s} {self.name}: observed {self.observed} (tolerance {self.tolerance})"


# wall-clock budgets; the measured time goes to stdout, not into the report,
# so that reports stay byte-identical across runs
RUNTIME_LIMITS = {"AC1": 1.0, "AC2": 5.0, "AC9": 60.0}


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        chk = fn(*args, **kwargs)
        chk.seconds = time.perf_counter() - t0
        limit = RUNTIME_LIMITS.get(chk.id)
        if limit is not None:
            chk.tolerance += f"; runtime < {limit:g} s"
            chk.passed = bool(chk.passed and chk.seconds < limit)
        return chk

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def oracle_slices(params, t: float, step: float, nx: int = 30, ny: int = 30) -> ScalarField:
    """Exact intensity at ``t - step, t, t + step`` on the ``nx * ny`` cell centers of the unit square."""
    grid = SpatioTemporalGrid(0.0, 0.0, t - 1.5 * step, nx, ny, 3, 1.0 / nx, 1.0 / ny, step)
    return ScalarField.from_function(grid, lambda x, y, s: oracle.intensity(params, x, y, s))


@_timed
def check_derivatives(seed: int, n_points: int = 100, h: float = 1e-5, tol: float = 1e-5) -> Check:
    p = oracle.SimIntensityParams()
    rng = make_rng(seed)
    x, y, t = rng.uniform(0.05, 0.95, (3, n_points))

    def lam(a, b, c):
        return oracle.intensity(p, a, b, c)

    gx, gy = oracle.grad_xy(p, x, y, t)
    gt = oracle.dlambda_dt(p, x, y, t)
    fx = (lam(x + h, y, t) - lam(x - h, y, t)) / (2 * h)
    fy = (lam(x, y + h, t) - lam(x, y - h, t)) / (2 * h)
    ft = (lam(x, y, t + h) - lam(x, y, t - h)) / (2 * h)
    err = max(float(np.max(np.abs(f - g) / np.abs(g))) for f, g in ((fx, gx), (fy, gy), (ft, gt)))
    return Check("AC1", "oracle derivatives vs central differences", f"max rel err {err:.2e}", f"<= {tol:g}", err <= tol)


def velocity_errors(params, t, step, nx=30, ny=30, options=VelocityOptions()):
    """Relative errors of finite-difference ``s_min`` against the exact value at interior cells."""
    f = oracle_slices(params, t, step, nx, ny)
    _, _, s, _, _ = velocity_slice(f, 1, options)
    X, Y = np.meshgrid(f.grid.x_centers(), f.grid.y_centers(), indexing="ij")
    true, _, _ = oracle.true_velocity(params, X, Y, np.full_like(X, t))
    ok = ~np.isnan(s) & ~np.isnan(true) & (true > 0)
    return np.abs(s[ok] - true[ok]) / true[ok]


@_timed
def check_velocity_reproduction(dt_override=None) -> Check:
    p = oracle.SimIntensityParams()
    parts = []
    passed = True
    for t, step in zip(REFERENCE_TIMES, REFERENCE_STEPS):
        r = velocity_errors(p, t, step if dt_override is None else dt_override)
        med, p90 = float(np.median(r)), float(np.percentile(r, 90))
        passed &= med <= 0.05 and p90 <= 0.15
        parts.append(f"t={t}: median {med:.3f}, p90 {p90:.3f}")
    return Check("AC2", "finite-difference s_min vs exact (30x30)", "; ".join(parts), "median <= 0.05, p90 <= 0.15", bool(passed))


@_timed
def check_minimality(seed: int, n_dirs: int = 100) -> Check:
    p = oracle.SimIntensityParams()
    grid = SpatioTemporalGrid.unit_cube(30, 30, 20)
    f = ScalarField.from_function(grid, lambda x, y, t: oracle.intensity(p, x, y, t))
    smin = min_velocity(f).magnitude
    rng = make_rng(seed)
    angles = rng.uniform(0, 2 * np.pi, n_dirs)
    violations = 0
    compared = 0
    for a in angles:
        sv = directional_velocity(f, (math.cos(a), math.sin(a))).values
        both = ~np.isnan(sv) & ~np.isnan(smin)
        compared += int(both.sum())
        violations += int(np.count_nonzero(sv[both] < smin[both]))
    return Check("AC3", "s_v >= s_min over random directions", f"{violations} violations in {compared} comparisons", "0", violations == 0)


@_timed
def check_scale_invariance() -> Check:
    p = oracle.SimIntensityParams()
    grid = SpatioTemporalGrid.unit_cube(30, 30, 20)
    f = ScalarField.from_function(grid, lambda x, y, t: oracle.intensity(p, x, y, t))
    ref = min_velocity(f)
    parts = []
    passed = True
    for c in (0.1, 1.0, 1000.0):
        v = min_velocity(f.scaled(c))
        same = all(
            np.array_equal(getattr(ref, k), getattr(v, k), equal_nan=True) for k in ("magnitude", "vx", "vy")
        )
        n_diff = int(np.count_nonzero(~np.isnan(ref.magnitude) & (ref.magnitude != v.magnitude)))
        with np.errstate(invalid="ignore"):
            rel = float(np.nanmax(np.abs(v.magnitude - ref.magnitude) / ref.magnitude))
        passed &= same
        parts.append(f"c={c:g}: {'identical' if same else f'{n_diff} cells differ, max rel {rel:.1e}'}")
    return Check("AC4", "min_velocity(c*L) bitwise equal to min_velocity(L)", "; ".join(parts), "bitwise", bool(passed))


def linear_field(grid, a, b, c, d) -> ScalarField:
    return ScalarField.from_function(grid, lambda x, y, t: a + b * x + c * y + d * t)


@_timed
def check_linear_exactness(seed: int, n_sets: int = 20, tol: float = 1e-12) -> Check:
    rng = make_rng(seed)
    grid = SpatioTemporalGrid.unit_cube(12, 10, 6)
    worst = 0.0
    for _ in range(n_sets):
        a, b, c, d = rng.uniform(-2, 2, 4)
        vf = min_velocity(linear_field(grid, a, b, c, d))
        ok = ~np.isnan(vf.magnitude)
        norm = math.hypot(b, c)
        mag = abs(d) / norm
        sgn = -1.0 if d < 0 else 1.0
        err_m = float(np.max(np.abs(vf.magnitude[ok] - mag))) / max(mag, 1.0)
        err_v = max(
            float(np.max(np.abs(vf.vx[ok] - sgn * b / norm))),
            float(np.max(np.abs(vf.vy[ok] - sgn * c / norm))),
        )
        worst = max(worst, err_m, err_v)
    return Check("AC5", "affine field magnitude and direction", f"max err {worst:.1e}", f"<= {tol:g}", worst <= tol)


def poisson_gof_pvalue(counts, mean: float) -> float:
    """Chi-square goodness of fit of integer counts against Poisson(mean).

    Adjacent count values are pooled until each bin expects at least 5.
    """
    counts = np.asarray(counts)
    n = len(counts)
    edges = [0]
    lo = 0
    while True:
        hi = lo
        while stats.poisson.cdf(hi, mean) - stats.poisson.cdf(lo - 1, mean) < 5.0 / n:
            hi += 1
        if stats.poisson.sf(hi, mean) * n < 5:
            break
        edges.append(hi + 1)
        lo = hi + 1
    # bins [edges[k], edges[k+1]) and a final open bin
    probs = []
    obs = []
    for k in range(len(edges)):
        a = edges[k]
        if k + 1 < len(edges):
            b = edges[k + 1]
            probs.append(stats.poisson.cdf(b - 1, mean) - stats.poisson.cdf(a - 1, mean))
            obs.append(np.count_nonzero((counts >= a) & (counts < b)))
        else:
            probs.append(stats.poisson.sf(a - 1, mean))
            obs.append(np.count_nonzero(counts >= a))
    probs = np.asarray(probs)
    exp = probs / probs.sum() * n
    chi2 = float(np.sum((np.asarray(obs) - exp) ** 2 / exp))
    return float(stats.chi2.sf(chi2, len(exp) - 1))


def constant_counts(rate: float, n_seeds: int, seed0: int) -> np.ndarray:
    window = (0.0, 1.0, 0.0, 1.0)
    return np.array([
        len(sample_poisson(lambda x, y, t: np.full(np.shape(x), rate), window, (0.0, 1.0), rate, seed0 + k))
        for k in range(n_seeds)
    ])


@_timed
def check_thinning(seed: int, n_seeds: int = 200, rate: float = 50.0) -> Check:
    counts = constant_counts(rate, n_seeds, seed)
    mean = float(counts.mean())
    band = 3 * math.sqrt(rate / n_seeds)
    pval = poisson_gof_pvalue(counts, rate)
    passed = abs(mean - rate) <= band and pval >= 0.01
    return Check(
        "AC6", "thinning on constant intensity 50",
        f"mean {mean:.3f}, GOF p={pval:.3f}", f"|mean-50| <= {band:.3f}, p >= 0.01", passed,
    )


def kron_bruteforce_error(spec: CovarianceSpec, grid: SpatioTemporalGrid) -> float:
    S, T = cov_matrices(spec, grid)
    K = spec.sigma2 * np.kron(T, S)
    centers = grid.spatial_centers()
    nS = len(centers)
    worst = 0.0
    for q1 in range(grid.nt * nS):
        n1, p1 = divmod(q1, nS)
        for q2 in range(grid.nt * nS):
            n2, p2 = divmod(q2, nS)
            h1 = math.dist(centers[p1], centers[p2])
            worst = max(worst, abs(K[q1, q2] - cov(spec, h1, abs(n1 - n2))))
    return worst


def mc_covariance_zscores(spec: CovarianceSpec, grid: SpatioTemporalGrid, n_draws: int, seed: int) -> np.ndarray:
    """Entrywise z-scores of the sample covariance of ``n_draws`` fields against ``sigma2 kron(T, S)``."""
    S, T = cov_matrices(spec, grid)
    K = spec.sigma2 * np.kron(T, S)
    draws = np.empty((n_draws, grid.size))
    for k, ss in enumerate(split_seed(seed, n_draws)):
        v = sample_gaussian_field(spec, grid, 0.0, ss).values
        draws[k] = v.transpose(2, 0, 1).ravel()  # time-major, matching kron(T, S)
    C = draws.T @ draws / n_draws
    d = np.diag(K)
    se = np.sqrt((np.outer(d, d) + K * K) / n_draws)
    return (C - K) / se


@_timed
def check_covariance(seed: int) -> Check:
    spec = CovarianceSpec(1.3, 2.5, 1.5, 0.6)
    err = kron_bruteforce_error(spec, SpatioTemporalGrid.unit_cube(3, 3, 3))
    z = mc_covariance_zscores(spec, SpatioTemporalGrid.unit_cube(4, 4, 3), 2000, seed)
    zmax = float(np.max(np.abs(z)))
    return Check(
        "AC7", "kron(T, S) vs pairwise formula; Monte-Carlo covariance",
        f"max abs err {err:.1e}; max |z| {zmax:.2f}", "<= 1e-12; <= 5", err <= 1e-12 and zmax <= 5,
    )


def kde_integral(points, h: float, margin: float = 8.0, step_frac: float = 0.25) -> float:
    """Midpoint-rule integral of the kernel density over the point box padded by ``margin * h``."""
    pts = np.asarray(points)
    lo = pts.min(axis=0) - margin * h
    hi = pts.max(axis=0) + margin * h
    nx, ny = (np.ceil((hi - lo) / (step_frac * h)).astype(int))
    xs = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
    ys = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = kernel_density(pts, h, np.column_stack([X.ravel(), Y.ravel()]))
    return float(vals.sum() * (hi[0] - lo[0]) / nx * (hi[1] - lo[1]) / ny)


@_timed
def check_kernel(seed: int, h: float = 0.1) -> Check:
    pts = make_rng(seed).uniform(0, 1, (50, 2))
    integral = kde_integral(pts, h)
    centre = kernel_density([[0.3, 0.7]], h, [0.3, 0.7])
    c_err = abs(centre - 1 / (2 * math.pi * h * h)) / (1 / (2 * math.pi * h * h))
    passed = abs(integral - 1) <= 1e-3 and c_err <= 1e-12
    return Check(
        "AC8", "kernel density normalization",
        f"integral {integral:.6f}; single-point rel err {c_err:.1e}", "1 +/- 1e-3; 1/(2 pi h^2)", passed,
    )


def recovery_replicates(seed: int, n_reps: int = 20, spec=None):
    """Prior draws on a 6x6x5 grid fitted with the generating covariance.

    Returns per-replicate ``(gradient_norm, pearson_r, coverage)``.
    """
    spec = spec or CovarianceSpec(1.0, 6.0, 1.5, 0.5)
    grid = SpatioTemporalGrid.unit_cube(6, 6, 5)
    offset = ScalarField(grid, np.full(grid.shape, 20.0 / grid.cell_volume))
    out = []
    for ss in split_seed(seed, n_reps):
        s1, s2 = ss.spawn(2)
        zeta = sample_gaussian_field(spec, grid, 0.0, s1, normalized=True).values
        y = make_rng(s2).poisson(20.0 * np.exp(zeta))
        r = fit(y, offset, FitConfig(spec))
        rho = float(np.corrcoef(r.zeta.ravel(), zeta.ravel())[0, 1])
        covered = float(np.mean(np.abs(r.zeta - zeta) <= 2 * np.sqrt(r.variance)))
        out.append((r.gradient_norm, rho, covered))
    return out


@_timed
def check_fit_recovery(seed: int) -> Check:
    reps = recovery_replicates(seed)
    g = max(r[0] for r in reps)
    rho = float(np.mean([r[1] for r in reps]))
    covr = float(np.mean([r[2] for r in reps]))
    passed = g <= 1e-6 and rho >= 0.7 and covr >= 0.8
    return Check(
        "AC9", "Laplace fit recovery on 6x6x5 prior draws",
        f"max |grad| {g:.1e}; mean r {rho:.3f}; coverage {covr:.3f}", "<= 1e-6; >= 0.7; >= 0.8", passed,
    )


def glm_replicates(seed: int, n_reps: int = 20, days: int = 365):
    """Fraction of replicates whose coefficients all fall within 3 standard errors."""
    spec = TemporalBasisSpec(fourier_order=1, include_intercept=True)
    truth = np.array([1.0, 0.5, 0.0])
    t = np.arange(days, dtype=float)
    hits = 0
    for ss in split_seed(seed, n_reps):
        y = make_rng(ss).poisson(np.exp(1.0 + 0.5 * np.cos(spec.omega * t)))
        f = fit_temporal(y, spec, t)
        hits += bool(np.all(np.abs(f.coefficients - truth) <= 3 * f.stderr))
    return hits


@_timed
def check_temporal(seed: int) -> Check:
    hits = glm_replicates(seed)
    c = 7.0
    f = fit_temporal(np.full(60, c), TemporalBasisSpec())
    err = abs(f.coefficients[0] - math.log(c))
    passed = hits >= 18 and err <= 1e-10
    return Check(
        "AC10", "Poisson GLM recovery of the temporal trend",
        f"{hits}/20 within 3 SE; constant fit err {err:.1e}", ">= 18/20; <= 1e-10", passed,
    )


@_timed
def check_time_derivative(dt_override=None, step: float = 0.01, tol: float = 1e-3) -> Check:
    """Symmetric difference in time against the analytic derivative at t = 0.5."""
    from .velocity import time_derivative

    p = oracle.SimIntensityParams()
    f = oracle_slices(p, 0.5, step)
    if dt_override is not None:
        g = f.grid
        f = ScalarField(SpatioTemporalGrid(g.x0, g.y0, g.t0, g.nx, g.ny, g.nt, g.dx, g.dy, float(dt_override)), f.values)
    fd = time_derivative(f, 1)
    X, Y = np.meshgrid(f.grid.x_centers(), f.grid.y_centers(), indexing="ij")
    exact = oracle.dlambda_dt(p, X, Y, np.full_like(X, 0.5))
    err = float(np.median(np.abs(fd - exact) / np.abs(exact)))
    return Check("TD1", "time derivative vs analytic at t=0.5 (dt=0.01)", f"median rel err {err:.2e}", f"<= {tol:g}", err <= tol)


def simulate_oracle_pattern(seed: int, expected_count: float = 7840.0):
    params = oracle.calibrate_lambda0(oracle.SimIntensityParams(), expected_count)
    lam_max = 1.1 * oracle.max_intensity(params)
    pattern = sample_poisson(
        lambda x, y, t: oracle.intensity(params, x, y, t), (0.0, 1.0, 0.0, 1.0), (0.0, 1.0), lam_max, seed
    )
    return params, pattern


def pipeline_artifacts(seed: int):
    """Simulated pattern, fitted intensity and velocity on a 15x15x20 grid."""
    params, pattern = simulate_oracle_pattern(seed)
    grid = SpatioTemporalGrid.unit_cube(15, 15, 20)
    counts = bin_counts(pattern, grid)
    offset = ScalarField(grid, np.full(grid.shape, len(pattern) / grid.size / grid.cell_volume))
    spec = CovarianceSpec(2.0, math.sqrt(12) / 0.3, 1.5, 0.8)
    result = fit(counts, offset, FitConfig(spec))
    lam_hat = predict_intensity(result, posterior_mean=True)
    return params, pattern, lam_hat


@_timed
def check_pipeline(seed: int, artifacts=None, min_events: int = 50, tol: float = 0.8) -> Check:
    """Log-intensity correlation and mode location of the fit at each reported time.

    A time is scored only when its grid slice holds at least ``min_events``
    events; with the reference parameters nearly all events fall early in the
    unit interval, so later slices carry no information about the truth.
    """
    params, pattern, lam_hat = artifacts or pipeline_artifacts(seed)
    g = lam_hat.grid
    truth = ScalarField.from_function(g, lambda x, y, t: oracle.intensity(params, x, y, t))
    n_of_event = np.minimum(((pattern.t - g.t0) / g.dt).astype(int), g.nt - 1)
    parts = []
    passed = True
    scored = 0
    for t in REFERENCE_TIMES:
        n = int(np.floor((t - g.t0) / g.dt))
        k = int(np.count_nonzero(n_of_event == n))
        fit_slice = np.log(lam_hat.values[:, :, n]).ravel()
        true_slice = np.log(truth.values[:, :, n]).ravel()
        rho = float(np.corrcoef(fit_slice, true_slice)[0, 1])
        if k < min_events:
            parts.append(f"t={t}: r {rho:.3f} (unscored, {k} events)")
            continue
        scored += 1
        shift = np.subtract(np.unravel_index(np.argmax(fit_slice), (g.nx, g.ny)),
                            np.unravel_index(np.argmax(true_slice), (g.nx, g.ny)))
        mode_ok = bool(np.max(np.abs(shift)) <= 1)
        passed &= rho >= tol and mode_ok
        parts.append(f"t={t}: r {rho:.3f}, mode offset {tuple(int(v) for v in shift)} cells ({k} events)")
    return Check(
        "PIPE", f"fitted vs true log-intensity on a simulated pattern ({len(pattern)} events)",
        "; ".join(parts), f"r >= {tol:g} and mode within 1 cell where >= {min_events} events",
        bool(passed and scored > 0),
    )


def artifact_digest(artifacts) -> str:
    _, pattern, lam_hat = artifacts
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(pattern.events).tobytes())
    h.update(np.ascontiguousarray(lam_hat.values).tobytes())
    return h.hexdigest()


@_timed
def check_determinism(seed: int, artifacts=None) -> Check:
    first = artifact_digest(artifacts or pipeline_artifacts(seed))
    second = artifact_digest(pipeline_artifacts(seed))
    return Check("AC11", "re-running the simulate/fit stage", "identical" if first == second else "differs", "identical", first == second)


def run_all(seed: int = 20240611, dt_override=None, only=None, artifacts=None) -> list[Check]:
    """Run every check in a fixed order; ``only`` restricts to the given ids.

    ``artifacts`` from :func:`pipeline_artifacts` are reused by the pipeline
    and determinism checks when given.
    """
    cache = {}

    def shared():
        if "a" not in cache:
            cache["a"] = artifacts or pipeline_artifacts(seed + 11)
        return cache["a"]

    plan = [
        ("AC1", lambda: check_derivatives(seed)),
        ("AC2", lambda: check_velocity_reproduction(dt_override)),
        ("AC3", lambda: check_minimality(seed + 3)),
        ("AC4", check_scale_invariance),
        ("AC5", lambda: check_linear_exactness(seed + 5)),
        ("AC6", lambda: check_thinning(seed + 6)),
        ("AC7", lambda: check_covariance(seed + 7)),
        ("AC8", lambda: check_kernel(seed + 8)),
        ("AC9", lambda: check_fit_recovery(seed + 9)),
        ("AC10", lambda: check_temporal(seed + 10)),
        ("AC11", lambda: check_determinism(seed + 11, shared())),
        ("TD1", lambda: check_time_derivative(dt_override)),
        ("PIPE", lambda: check_pipeline(seed + 11, shared())),
    ]
    return [fn() for cid, fn in plan if only is None or cid in only]


def write_artifacts(outdir, artifacts, chash: str):
    """Golden oracle table, simulated pattern and fitted intensity grid."""
    from pathlib import Path

    outdir = Path(outdir)
    _, pattern, lam_hat = artifacts
    io.write_table_csv(oracle.golden_table(oracle.SimIntensityParams()), outdir / "golden_velocity.csv", "golden", chash)
    io.write_pattern_csv(pattern, outdir / "pattern.csv", chash)
    io.write_grid_csv(lam_hat, outdir / "intensity_hat.csv", chash, kind="intensity")


def report_rows(checks: list[Check]) -> dict:
    return {
        "id": [c.id for c in checks],
        "name": [c.name for c in checks],
        "observed": [c.observed for c in checks],
        "tolerance": [c.tolerance for c in checks],
        "passed": [c.passed for c in checks],
    }
