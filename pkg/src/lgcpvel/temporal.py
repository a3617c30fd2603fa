"""Log-linear temporal trend ``mu(t)`` fitted by Poisson regression.

Basis columns appear in this order:

1. seven day-of-week indicators, Sunday first (``dow_sun`` .. ``dow_sat``);
2. an intercept;
3. Fourier pairs ``cos(k w t), sin(k w t)`` for k = 1..K, interleaved;
4. polynomial terms ``t, t^2, ..., t^P``.

The weekday of day ``t`` is ``(floor(t) + day0) mod 7`` with Sunday = 0, so
``day0`` is the weekday of ``t = 0``.  Indicators and intercept are
collinear; use one or the other.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

WEEKDAYS = ("sun", "mon", "tue", "wed", "thu", "fri", "sat")


class CollinearityError(ValueError):
    def __init__(self, message, columns):
        super().__init__(message)
        self.columns = list(columns)


class ConvergenceError(RuntimeError):
    def __init__(self, message, gradient_norm):
        super().__init__(message)
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class TemporalBasisSpec:
    day_of_week: bool = False
    fourier_order: int = 0
    omega: float = 2 * math.pi / 365
    poly_degree: int = 0
    include_intercept: bool = True
    day0: int | str | None = None

    def __post_init__(self):
        if self.fourier_order < 0 or self.poly_degree < 0:
            raise ValueError("fourier_order and poly_degree must be non-negative")
        if self.fourier_order > 0 and not self.omega > 0:
            raise ValueError("omega must be positive when fourier_order > 0")
        if self.n_basis < 1:
            raise ValueError("basis is empty")
        if self.day0 is None:
            if self.day_of_week:
                raise ValueError("day0 (weekday of t = 0) is required when day_of_week is set")
            return
        if isinstance(self.day0, str):
            key = self.day0.lower()[:3]
            if key not in WEEKDAYS:
                raise ValueError(f"unknown weekday {self.day0!r}")
            object.__setattr__(self, "day0", WEEKDAYS.index(key))
        if not 0 <= self.day0 < 7:
            raise ValueError("day0 must be a weekday index in 0..6")

    @property
    def n_basis(self) -> int:
        return 7 * bool(self.day_of_week) + bool(self.include_intercept) + 2 * self.fourier_order + self.poly_degree

    def column_names(self) -> list[str]:
        names = []
        if self.day_of_week:
            names += [f"dow_{d}" for d in WEEKDAYS]
        if self.include_intercept:
            names.append("intercept")
        for k in range(1, self.fourier_order + 1):
            names += [f"cos{k}", f"sin{k}"]
        names += [f"poly{k}" for k in range(1, self.poly_degree + 1)]
        return names


def design_matrix(spec: TemporalBasisSpec, t, poly_scale: float = 1.0) -> np.ndarray:
    """Rows of basis values at times ``t``; polynomial terms use ``t / poly_scale``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    cols = []
    if spec.day_of_week:
        d = (np.floor(t).astype(np.int64) + spec.day0) % 7
        cols.append((d[:, None] == np.arange(7)[None, :]).astype(float))
    if spec.include_intercept:
        cols.append(np.ones((len(t), 1)))
    for k in range(1, spec.fourier_order + 1):
        cols.append(np.column_stack([np.cos(k * spec.omega * t), np.sin(k * spec.omega * t)]))
    if spec.poly_degree:
        s = t / poly_scale
        cols.append(np.column_stack([s**k for k in range(1, spec.poly_degree + 1)]))
    return np.hstack(cols)


def design_row(spec: TemporalBasisSpec, t: float) -> np.ndarray:
    return design_matrix(spec, [t])[0]


@dataclass(frozen=True)
class TemporalFit:
    spec: TemporalBasisSpec
    coefficients: np.ndarray
    stderr: np.ndarray
    deviance: float
    iterations: int
    gradient_norm: float
    deviance_trace: tuple = field(default=())

    def to_dict(self) -> dict:
        return {
            "schema": "lgcpvel.temporal_fit/1",
            "spec": asdict(self.spec),
            "columns": self.spec.column_names(),
            "coefficients": [float(c) for c in self.coefficients],
            "stderr": [float(s) for s in self.stderr],
            "diagnostics": {
                "deviance": self.deviance,
                "iterations": self.iterations,
                "gradient_norm": self.gradient_norm,
                "deviance_trace": list(self.deviance_trace),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalFit":
        diag = d["diagnostics"]
        return cls(
            TemporalBasisSpec(**d["spec"]),
            np.asarray(d["coefficients"], dtype=float),
            np.asarray(d["stderr"], dtype=float),
            float(diag["deviance"]),
            int(diag["iterations"]),
            float(diag["gradient_norm"]),
            tuple(diag.get("deviance_trace", ())),
        )


def poisson_deviance(y, mu) -> float:
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2 * np.sum(term - (y - mu)))


def _check_rank(X, names):
    rank = np.linalg.matrix_rank(X)
    if rank == X.shape[1]:
        return
    offending = []
    kept = []
    for k in range(X.shape[1]):
        trial = kept + [k]
        if np.linalg.matrix_rank(X[:, trial]) == len(trial):
            kept = trial
        else:
            offending.append(names[k])
    raise CollinearityError(
        f"design matrix has rank {rank} < {X.shape[1]} columns; dependent columns: {', '.join(offending)}",
        offending,
    )


def fit_temporal(counts, spec: TemporalBasisSpec, t=None, tol: float = 1e-8, max_iter: int = 100) -> TemporalFit:
    """Poisson GLM (log link) of ``counts`` on the temporal basis.

    ``t`` defaults to ``0, 1, ..., len(counts) - 1``.  Solved by IRLS with
    step halving; polynomial terms are internally rescaled by ``max |t|``
    and the reported coefficients refer to raw ``t``.
    """
    y = np.asarray(counts, dtype=float)
    if y.ndim != 1:
        raise ValueError("counts must be one-dimensional")
    if (y < 0).any() or not np.all(np.isfinite(y)):
        raise ValueError("counts must be finite and non-negative")
    t = np.arange(len(y), dtype=float) if t is None else np.asarray(t, dtype=float)
    if len(t) != len(y):
        raise ValueError("t and counts differ in length")
    q = spec.n_basis
    if len(y) < q:
        raise ValueError(f"need at least {q} observations, got {len(y)}")
    scale = float(np.max(np.abs(t))) or 1.0
    X = design_matrix(spec, t, poly_scale=scale)
    _check_rank(X, spec.column_names())

    # start from least squares on log(y + 0.5)
    beta = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)[0]
    eta = X @ beta
    mu = np.exp(eta)
    dev = poisson_deviance(y, mu)
    trace = [dev]
    grad = X.T @ (y - mu)
    gnorm = float(np.linalg.norm(grad))
    it = 0
    polish = 0
    while gnorm > tol:
        if it >= max_iter:
            raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations (|grad|={gnorm:.3e})", gnorm)
        it += 1
        H = X.T @ (mu[:, None] * X)
        step = linalg.solve(H, grad, assume_a="pos")
        # near the optimum the predicted deviance drop is below its rounding
        # error, so the comparison is meaningless; take plain Newton steps
        if 2 * float(grad @ step) <= 1024 * np.finfo(float).eps * max(1.0, dev) and polish < 8:
            polish += 1
            cand = beta + step
            mu_c = np.exp(X @ cand)
            dev_c = poisson_deviance(y, mu_c)
        else:
            alpha = 1.0
            for _ in range(50):
                cand = beta + alpha * step
                mu_c = np.exp(X @ cand)
                dev_c = poisson_deviance(y, mu_c)
                if np.isfinite(dev_c) and dev_c <= dev:
                    break
                alpha /= 2
            else:
                raise ConvergenceError(f"step halving failed at iteration {it} (|grad|={gnorm:.3e})", gnorm)
        if np.array_equal(cand, beta):
            # no representable progress; the gradient is at rounding level
            break
        beta, mu, dev = cand, mu_c, dev_c
        trace.append(dev)
        grad = X.T @ (y - mu)
        gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise ConvergenceError(f"IRLS stalled with |grad|={gnorm:.3e} > {tol:.1e}", gnorm)

    cov = linalg.inv(X.T @ (mu[:, None] * X))
    se = np.sqrt(np.diag(cov))
    # undo the polynomial rescaling
    unscale = np.ones(q)
    if spec.poly_degree:
        unscale[q - spec.poly_degree:] = scale ** -np.arange(1, spec.poly_degree + 1, dtype=float)
    return TemporalFit(spec, beta * unscale, se * unscale, dev, it, gnorm, tuple(trace))


def log_mu(fit: TemporalFit, t):
    return design_matrix(fit.spec, t) @ fit.coefficients


def eval_mu(fit: TemporalFit, t):
    """Fitted ``mu(t) = exp(design_row(t) . coefficients)``."""
    out = np.exp(log_mu(fit, t))
    return out if np.ndim(t) else float(out[0])


def poisson_loglik(fit: TemporalFit, counts, t=None, coefficients=None) -> float:
    y = np.asarray(counts, dtype=float)
    t = np.arange(len(y), dtype=float) if t is None else np.asarray(t, dtype=float)
    coef = fit.coefficients if coefficients is None else coefficients
    eta = design_matrix(fit.spec, t) @ coef
    return float(np.sum(y * eta - np.exp(eta)))


def read_counts_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column ``t,count`` CSV; lines starting with ``#`` are skipped."""
    ts, cs = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or [h.strip() for h in header[:2]] != ["t", "count"]:
            raise ValueError(f"{path}: expected header 't,count', got {header}")
        for lineno, row in enumerate(rows, start=2):
            try:
                ts.append(float(row[0]))
                cs.append(float(row[1]))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: cannot parse {row!r}") from exc
    return np.asarray(ts), np.asarray(cs)


def write_fit_json(fit: TemporalFit, path, header: dict | None = None):
    doc = fit.to_dict()
    if header:
        doc["header"] = header
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fit_json(path) -> TemporalFit:
    with open(path) as fh:
        return TemporalFit.from_dict(json.load(fh))
