"""
Minimal velocity of the analytic test intensity
===============================================

The test intensity mixes three Gaussian bumps whose weights trade places
over the unit time interval.  Its exact derivatives are available, so the
finite-difference velocity can be scored cell by cell.

Run with ``python3 demos/oracle_velocity.py``.
"""

import numpy as np

from lgcpvel import oracle
from lgcpvel.validate import oracle_slices, velocity_errors
from lgcpvel.velocity import min_velocity

params = oracle.SimIntensityParams()

# How fast does the log-intensity change between neighbouring cells of a
# 30 x 30 grid?  Values near 1 mean the intensity roughly triples from one
# cell to the next, which no two-point difference resolves well.
xs = (np.arange(30) + 0.5) / 30
X, Y = np.meshgrid(xs, xs, indexing="ij")
print("t      log-range   median |grad log lambda| * dx")
for t in (0.225, 0.575, 0.875):
    lam = oracle.intensity(params, X, Y, t)
    gx, gy = oracle.grad_xy(params, X, Y, t)
    per_cell = np.hypot(gx, gy) / lam / 30
    print(f"{t:<6} {np.log(lam.max() / lam.min()):9.1f}   {np.median(per_cell[1:-1, 1:-1]):.3f}")

# Relative error of the finite-difference minimal speed as the time step
# shrinks.  The spatial grid stays at 30 x 30.
print("\nt      dt      median   p90")
for t in (0.225, 0.575, 0.875):
    for dt in (0.2, 0.1, 0.05, 0.01):
        r = velocity_errors(params, t, dt)
        print(f"{t:<6} {dt:<7} {np.median(r):.4f}   {np.percentile(r, 90):.4f}")

# A finer spatial grid removes most of the remaining error at small dt.
print("\nt      grid     median   p90   (dt = 0.01)")
for t in (0.225, 0.575):
    for n in (30, 60, 120):
        r = velocity_errors(params, t, 0.01, n, n)
        print(f"{t:<6} {n:>3}x{n:<4} {np.median(r):.4f}   {np.percentile(r, 90):.4f}")

# The direction field at the middle time, sampled along the diagonal.
vf = min_velocity(oracle_slices(params, 0.575, 0.2))
print("\ndiagonal cell   s_min      direction")
for k in range(3, 27, 4):
    print(f"({k:2d},{k:2d})        {vf.magnitude[k, k, 1]:8.4f}   ({vf.vx[k, k, 1]:+.3f}, {vf.vy[k, k, 1]:+.3f})")
