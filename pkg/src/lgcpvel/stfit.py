"""Grid-cell Laplace fit of the residual log-Gaussian field.

Cell counts ``y`` are Poisson with mean ``E * exp(zeta)``, where
``E = offset * cell_volume`` and ``zeta = beta + theta``.  ``theta`` has the
separable prior covariance ``sigma2 * kron(T, S)`` with the normalized AR(1)
factor ``T[n, m] = a^|n-m|`` and the Matérn matrix ``S`` over unmasked spatial
cells.  ``beta`` carries a flat prior.

The posterior mode of ``zeta`` is found by damped Newton iterations.  The
AR(1) precision is tridiagonal, so the negative Hessian is block tridiagonal
in time with a rank-one correction from profiling out ``beta``; both are
handled exactly without forming the dense matrix.

Latent vectors are stored time-major as ``(nt, nS)`` arrays internally and
returned on the grid in ``(i, j, n)`` order.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .covariance import ConditioningError, CovarianceSpec, robust_cholesky, spatial_matrix
from .grid import MISSING, ScalarField, SpatioTemporalGrid

FIT_SCHEMA = "lgcpvel.fit_result/1"


class OptimizationError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


class ProfileError(RuntimeError):
    def __init__(self, message, errors):
        super().__init__(message)
        self.errors = list(errors)


@dataclass(frozen=True)
class FitConfig:
    """Covariance candidates and Newton settings.

    A single candidate is fitted directly; several are profiled by Laplace
    evidence.  ``fixed_beta`` pins the field mean instead of estimating it.
    """

    candidates: tuple = ()
    max_iter: int = 100
    tol: float = 1e-8
    max_halvings: int = 30
    fixed_beta: float | None = None
    clamp: float = 30.0
    jitter_start: float = 1e-10
    jitter_stop: float = 1e-6

    def __post_init__(self):
        cands = self.candidates
        if isinstance(cands, CovarianceSpec):
            cands = (cands,)
        object.__setattr__(self, "candidates", tuple(cands))
        if not self.candidates:
            raise ValueError("FitConfig needs at least one covariance candidate")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    @property
    def spec(self) -> CovarianceSpec:
        return self.candidates[0]


def default_candidates(grid: SpatioTemporalGrid, nu: float = 1.5) -> tuple[CovarianceSpec, ...]:
    """3 x 3 x 3 grid over practical range, sigma2 and a at fixed ``nu``."""
    side = max(grid.nx * grid.dx, grid.ny * grid.dy)
    out = []
    for frac in (0.1, 0.3, 1.0):
        kappa = math.sqrt(8 * nu) / (frac * side)
        for sigma2 in (0.25, 1.0, 4.0):
            for a in (0.0, 0.5, 0.9):
                out.append(CovarianceSpec(sigma2, kappa, nu, a))
    return tuple(out)


@dataclass(frozen=True)
class FitResult:
    grid: SpatioTemporalGrid
    spec: CovarianceSpec
    active: np.ndarray
    zeta: np.ndarray
    variance: np.ndarray
    offset: np.ndarray
    beta: float
    log_evidence: float
    gradient_norm: float
    iterations: int
    trace: tuple
    clamp_hits: int = 0
    converged: bool = True
    candidates: tuple = field(default=())

    def to_dict(self) -> dict:
        def flat(a):
            return [None if np.isnan(v) else float(v) for v in a.ravel()]

        return {
            "schema": FIT_SCHEMA,
            "grid": self.grid.to_dict(),
            "hyperparameters": self.spec.to_dict(),
            "beta": self.beta,
            "log_evidence": self.log_evidence,
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "clamp_hits": self.clamp_hits,
            "trace": list(self.trace),
            "zeta": flat(self.zeta),
            "variance": flat(self.variance),
            "offset": flat(self.offset),
            "candidates": [dict(c) for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        if d.get("schema") != FIT_SCHEMA:
            raise ValueError(f"unsupported fit-result schema {d.get('schema')!r}")
        grid = SpatioTemporalGrid.from_dict(d["grid"])

        def arr(key):
            return np.array([np.nan if v is None else v for v in d[key]], dtype=float).reshape(grid.shape)

        zeta = arr("zeta")
        h = d["hyperparameters"]
        return cls(
            grid,
            CovarianceSpec(h["sigma2"], h["kappa"], h["nu"], h["a"], allow_rough=True),
            ~np.isnan(zeta[:, :, 0]),
            zeta,
            arr("variance"),
            arr("offset"),
            float(d["beta"]),
            float(d["log_evidence"]),
            float(d["gradient_norm"]),
            int(d["iterations"]),
            tuple(d["trace"]),
            int(d.get("clamp_hits", 0)),
            bool(d.get("converged", True)),
            tuple(d.get("candidates", ())),
        )


class _BlockTridiagonal:
    """Symmetric block-tridiagonal matrix with diagonal blocks ``A[n]`` and a constant off-diagonal block ``B``."""

    def __init__(self, A, B):
        self.nt = len(A)
        self.B = B
        self.chol = []
        self.logdet = 0.0
        D = A[0]
        for n in range(self.nt):
            if n:
                D = A[n] - (B @ linalg.cho_solve(self.chol[-1], B) if B is not None else 0.0)
            try:
                c = linalg.cho_factor(D, lower=True)
            except linalg.LinAlgError:
                raise ConditioningError("Hessian block is not positive definite") from None
            self.chol.append(c)
            self.logdet += 2.0 * float(np.sum(np.log(np.diag(c[0]))))

    def solve(self, R):
        """Solve ``H X = R`` for ``R`` of shape ``(nt, nS)`` or ``(nt, nS, k)``."""
        B = self.B
        Y = [R[0]]
        for n in range(1, self.nt):
            y = R[n]
            if B is not None:
                y = y - B @ linalg.cho_solve(self.chol[n - 1], Y[-1])
            Y.append(y)
        X = [None] * self.nt
        X[-1] = linalg.cho_solve(self.chol[-1], Y[-1])
        for n in range(self.nt - 2, -1, -1):
            y = Y[n] if B is None else Y[n] - B @ X[n + 1]
            X[n] = linalg.cho_solve(self.chol[n], y)
        return np.stack(X)

    def diag_inverse(self):
        """Diagonal of ``H^-1`` as an ``(nt, nS)`` array, by selected inversion."""
        nS = self.chol[0][0].shape[0]
        eye = np.eye(nS)
        out = np.empty((self.nt, nS))
        Dinv = linalg.cho_solve(self.chol[-1], eye)
        Sigma = Dinv
        out[-1] = np.diag(Sigma)
        for n in range(self.nt - 2, -1, -1):
            Dinv = linalg.cho_solve(self.chol[n], eye)
            if self.B is not None:
                G = Dinv @ self.B
                Sigma = Dinv + G @ Sigma @ G.T
            else:
                Sigma = Dinv
            out[n] = np.diag(Sigma)
        return out


class _Problem:
    """Penalized Poisson objective for one covariance candidate."""

    def __init__(self, y, E, centers, nt, spec, config):
        self.y = y
        self.E = E
        self.logE = np.log(E)
        self.const = float(np.sum(gammaln(y + 1)))
        self.spec = spec
        self.config = config
        self.nt = nt
        self.nS = y.shape[1]
        S = spatial_matrix(spec, centers)
        LS, _ = robust_cholesky(S, 1.0, config.jitter_start, config.jitter_stop)
        eye = np.eye(self.nS)
        Sinv = linalg.cho_solve((LS, True), eye)
        self.Sinv = 0.5 * (Sinv + Sinv.T) / spec.sigma2
        a = spec.a
        r = 1.0 / (1.0 - a * a)
        self.tdiag = np.full(nt, (1.0 + a * a) * r)
        self.tdiag[0] = self.tdiag[-1] = r
        self.toff = -a * r
        logdet_S = 2.0 * float(np.sum(np.log(np.diag(LS))))
        logdet_T = (nt - 1) * math.log(1.0 - a * a)
        N = self.nS * nt
        self.logdet_Q = -N * math.log(spec.sigma2) - self.nS * logdet_T - nt * logdet_S
        # q = Q 1 and c = 1' Q 1 for profiling out beta
        t1 = self.tdiag.copy()
        t1[:-1] += self.toff
        t1[1:] += self.toff
        s1 = self.Sinv.sum(axis=1)
        self.q = np.outer(t1, s1)
        self.c = float(self.q.sum())
        self.free_beta = config.fixed_beta is None

    def Qmul(self, Z):
        W = self.tdiag[:, None] * Z
        W[:-1] += self.toff * Z[1:]
        W[1:] += self.toff * Z[:-1]
        return W @ self.Sinv

    def beta_of(self, Z):
        if self.free_beta:
            return float(np.sum(self.q * Z)) / self.c
        return float(self.config.fixed_beta)

    def objective(self, Z):
        b = self.beta_of(Z)
        R = Z - b
        loglik = float(np.sum(self.y * (self.logE + Z) - self.E * np.exp(Z))) - self.const
        return loglik - 0.5 * float(np.sum(R * self.Qmul(R)))

    def gradient(self, Z):
        b = self.beta_of(Z)
        return self.y - self.E * np.exp(Z) - self.Qmul(Z - b)

    def hessian(self, Z):
        w = self.E * np.exp(Z)
        off = self.toff * self.Sinv if self.toff != 0 else None
        blocks = [self.tdiag[n] * self.Sinv + np.diag(w[n]) for n in range(self.nt)]
        H = _BlockTridiagonal(blocks, off)
        if not self.free_beta:
            return H, None, None
        Hq = H.solve(self.q)
        denom = self.c - float(np.sum(self.q * Hq))
        if not denom > 0:
            raise ConditioningError("profiled Hessian is singular (no information about the field mean)")
        return H, Hq, denom

    def newton_step(self, Z, g):
        H, Hq, denom = self.hessian(Z)
        d = H.solve(g)
        if Hq is not None:
            d = d + Hq * (float(np.sum(self.q * d)) / denom)
        return d


def _check_inputs(counts, offset: ScalarField):
    grid = offset.grid
    y = np.asarray(counts)
    if y.shape != grid.shape:
        raise ValueError(f"counts shape {y.shape} does not match grid {grid.shape}")
    off = offset.values
    active = grid.mask & np.all(np.isfinite(off), axis=2)
    if not active.any():
        raise ValueError("no unmasked cells with a finite offset")
    ya = y[active]
    if (ya < 0).any() or not np.all(ya == np.round(ya)):
        raise ValueError("counts must be non-negative integers")
    if (off[active] <= 0).any():
        raise ValueError("offset must be positive on unmasked cells")
    return grid, active


def _fit_one(y, E, centers, nt, spec, config) -> dict:
    prob = _Problem(y, E, centers, nt, spec, config)
    total = float(y.sum())
    # cellwise Poisson estimates, shrunk towards the overall rate
    if config.fixed_beta is None:
        b0 = math.log(max(total, 0.5) / float(E.sum()))
    else:
        b0 = float(config.fixed_beta)
    Z = 0.5 * (np.log((y + 0.5) / E) + b0)
    lim = config.clamp
    Z = np.clip(Z, -lim, lim)
    F = prob.objective(Z)
    trace = [F]
    g = prob.gradient(Z)
    gnorm = float(np.linalg.norm(g))
    it = 0
    clamp_hits = 0
    n_polish = 0
    converged = True
    while gnorm > config.tol:
        if it >= config.max_iter:
            if clamp_hits:
                converged = False
                break
            raise OptimizationError(
                f"Newton did not converge in {config.max_iter} iterations (|grad|={gnorm:.3e})", trace
            )
        it += 1
        d = prob.newton_step(Z, g)
        # once the predicted gain is below the rounding level of the objective,
        # the line search cannot discriminate and full steps are taken
        polish = float(np.sum(g * d)) <= 1024 * np.finfo(float).eps * max(1.0, abs(F))
        if polish:
            n_polish += 1
            if n_polish > 8:
                converged = gnorm <= config.tol and not clamp_hits
                break
        alpha = 1.0
        for _ in range(config.max_halvings + 1):
            cand = Z + alpha * d
            hit = np.abs(cand) > lim
            if hit.any():
                cand = np.clip(cand, -lim, lim)
            F_c = prob.objective(cand)
            if np.isfinite(F_c) and (F_c >= F or polish):
                break
            alpha /= 2
        else:
            raise OptimizationError(
                f"objective decreased after {config.max_halvings} step halvings at iteration {it}", trace
            )
        if hit.any():
            clamp_hits += int(hit.sum())
        if np.array_equal(cand, Z):
            converged = gnorm <= config.tol
            if clamp_hits:
                converged = False
            break
        Z, F = cand, F_c
        trace.append(F)
        g = prob.gradient(Z)
        gnorm = float(np.linalg.norm(g))
    if not converged and not clamp_hits:
        warnings.warn(f"Newton stalled at |grad|={gnorm:.3e} above tol={config.tol:.1e}", RuntimeWarning, stacklevel=3)
    if clamp_hits:
        warnings.warn(f"latent field hit the +/-{lim} clamp {clamp_hits} times", RuntimeWarning, stacklevel=3)

    H, Hq, denom = prob.hessian(Z)
    var = H.diag_inverse()
    logdet_H = H.logdet
    if Hq is not None:
        var = var + Hq * Hq / denom
        logdet_H += math.log(denom / prob.c)
    log_ev = F + 0.5 * prob.logdet_Q - 0.5 * logdet_H
    if Hq is not None:
        log_ev += 0.5 * math.log(2 * math.pi) - 0.5 * math.log(prob.c)
    return {
        "zeta": Z,
        "variance": var,
        "beta": prob.beta_of(Z),
        "log_evidence": float(log_ev),
        "gradient_norm": gnorm,
        "iterations": it,
        "trace": tuple(trace),
        "clamp_hits": clamp_hits,
        "converged": converged,
    }


def _to_grid(grid, active, A):
    out = np.full(grid.shape, MISSING)
    out[active] = A.T
    return out


def _prepare(counts, offset):
    grid, active = _check_inputs(counts, offset)
    y = np.asarray(counts, dtype=float)[active].T.copy()  # (nt, nS)
    E = offset.values[active].T * grid.cell_volume
    centers = grid.spatial_centers()[active.ravel()]
    return grid, active, y, E, centers


def _result(grid, active, offset, spec, r, candidates=()):
    off = np.where(active[:, :, None], offset.values, MISSING)
    return FitResult(
        grid, spec, active,
        _to_grid(grid, active, r["zeta"]),
        _to_grid(grid, active, r["variance"]),
        off, r["beta"], r["log_evidence"], r["gradient_norm"], r["iterations"],
        r["trace"], r["clamp_hits"], r["converged"], tuple(candidates),
    )


def fit(counts, offset: ScalarField, config: FitConfig) -> FitResult:
    """Posterior mode and Laplace variances of ``zeta`` given cell counts.

    ``offset`` is the intensity-scale offset ``eta * mu`` per cell; the
    expected count is ``offset * cell_volume * exp(zeta)``.  Cells that are
    masked or have a missing offset are left out of the likelihood and of
    the latent field.  With several candidates the one with the largest
    Laplace evidence is returned.
    """
    if len(config.candidates) > 1:
        return profile_hyperparameters(counts, offset, config.candidates, config)[2]
    grid, active, y, E, centers = _prepare(counts, offset)
    r = _fit_one(y, E, centers, grid.nt, config.spec, config)
    return _result(grid, active, offset, config.spec, r)


def profile_hyperparameters(counts, offset: ScalarField, candidates, config: FitConfig | None = None):
    """Fit every candidate and select the largest Laplace evidence.

    Returns ``(best_spec, evidence, best_result)``; ``evidence`` lists one
    float per candidate (NaN where the fit failed).  Ties go to the first
    listed candidate.
    """
    candidates = tuple(candidates)
    if not candidates:
        raise ValueError("need at least one candidate")
    config = config or FitConfig(candidates)
    grid, active, y, E, centers = _prepare(counts, offset)
    evidence = []
    errors = []
    best = None
    for spec in candidates:
        try:
            r = _fit_one(y, E, centers, grid.nt, spec, config)
        except (ConditioningError, OptimizationError) as exc:
            evidence.append(math.nan)
            errors.append((spec, exc))
            continue
        evidence.append(r["log_evidence"])
        if best is None or r["log_evidence"] > best[1]["log_evidence"]:
            best = (spec, r)
    if best is None:
        raise ProfileError(
            "all candidates failed: " + "; ".join(f"{s}: {e}" for s, e in errors), errors
        )
    table = [dict(spec.to_dict(), log_evidence=ev) for spec, ev in zip(candidates, evidence)]
    result = _result(grid, active, offset, best[0], best[1], table)
    return best[0], evidence, result


def predict_intensity(result: FitResult, grid: SpatioTemporalGrid | None = None,
                      posterior_mean: bool = False) -> ScalarField:
    """``offset * exp(zeta)``, optionally times ``exp(variance / 2)``."""
    if grid is not None and grid != result.grid:
        raise ValueError("grid does not match the fitted grid")
    expo = result.zeta + (0.5 * result.variance if posterior_mean else 0.0)
    return ScalarField(result.grid, result.offset * np.exp(expo))


def write_fit_result(result: FitResult, path, header: dict | None = None):
    doc = result.to_dict()
    if header:
        doc["header"] = header
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_fit_result(path) -> FitResult:
    with open(path) as fh:
        return FitResult.from_dict(json.load(fh))
