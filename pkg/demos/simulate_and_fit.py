"""
From a simulated pattern back to the intensity
==============================================

Draw events from the analytic intensity by thinning, bin them on a coarse
grid and fit the log-Gaussian Cox model with a uniform offset.  The fitted
log-intensity is then compared with the truth slice by slice.
"""

import math

import numpy as np

from lgcpvel import oracle
from lgcpvel.covariance import CovarianceSpec
from lgcpvel.grid import ScalarField, SpatioTemporalGrid, bin_counts
from lgcpvel.simulate import sample_poisson
from lgcpvel.stfit import FitConfig, fit, predict_intensity
from lgcpvel.velocity import min_velocity

SEED = 2024

# Scale lambda0 so that about 7840 events are expected over the unit cube.
params = oracle.calibrate_lambda0(oracle.SimIntensityParams(), 7840.0)
lam_max = 1.1 * oracle.max_intensity(params)
pattern = sample_poisson(lambda x, y, t: oracle.intensity(params, x, y, t),
                         (0.0, 1.0, 0.0, 1.0), (0.0, 1.0), lam_max, SEED)
print(f"{len(pattern)} events (expected {oracle.integrate(params):.0f})")

grid = SpatioTemporalGrid.unit_cube(15, 15, 20)
counts = bin_counts(pattern, grid)
per_slice = counts.sum(axis=(0, 1))
print("events per time slice:", " ".join(str(int(c)) for c in per_slice))

# Offset: the average count per cell, turned into an intensity.
offset = ScalarField(grid, np.full(grid.shape, len(pattern) / grid.size / grid.cell_volume))
spec = CovarianceSpec(2.0, math.sqrt(12) / 0.3, 1.5, 0.8)
result = fit(counts, offset, FitConfig(spec))
print(f"Newton: {result.iterations} iterations, |grad| {result.gradient_norm:.1e}, beta {result.beta:.3f}")

lam_hat = predict_intensity(result, posterior_mean=True)
truth = ScalarField.from_function(grid, lambda x, y, t: oracle.intensity(params, x, y, t))

# Correlation of log-intensities per slice.  Late slices hold almost no
# events, so the fit there is mostly the prior.
print("\nslice  t      events  r(log fit, log truth)")
for n in range(0, grid.nt, 3):
    r = np.corrcoef(np.log(lam_hat.values[:, :, n]).ravel(), np.log(truth.values[:, :, n]).ravel())[0, 1]
    print(f"{n:5d}  {grid.t_centers()[n]:.3f}  {int(per_slice[n]):6d}  {r:.3f}")

# Velocities from the fitted surface and from the exact one.  The fit is
# smoother in space than the truth, so its gradients are smaller and its
# minimal speeds larger.
v_fit = min_velocity(lam_hat)
v_true = min_velocity(truth)
for n in (2, 4):
    both = ~np.isnan(v_fit.magnitude[:, :, n]) & ~np.isnan(v_true.magnitude[:, :, n])
    a = v_fit.magnitude[:, :, n][both]
    b = v_true.magnitude[:, :, n][both]
    print(f"slice {n}: median s_min fitted {np.median(a):.3f}, exact-grid {np.median(b):.3f}")
