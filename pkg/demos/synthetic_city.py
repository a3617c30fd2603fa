"""
The command-line pipeline on an 80-day synthetic city
=====================================================

The test fixture holds a population raster of 100 m cells and 80 days of
simulated cases on an 8 x 8 grid of 300 m cells.  This script runs the same
subcommands a user would type and reads the results back.
"""

import tempfile
from pathlib import Path

import numpy as np

from lgcpvel import io
from lgcpvel.cli import main
from lgcpvel.temporal import read_fit_json

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "synthetic80"
out = Path(tempfile.mkdtemp(prefix="lgcpvel-city-"))

# temporal fit, raster offset and the latent field in one go
main(["fit", "--config", str(FIXTURE / "config.json"), "-o", str(out / "fit")])

tf = read_fit_json(out / "fit" / "temporal_fit.json")
# without an intercept each weekday column carries its own log level
print("\ntemporal coefficients:")
for name, c in zip(tf.spec.column_names(), tf.coefficients):
    print(f"  {name:>8} {c: .3f}")

lam = io.read_grid_csv(out / "fit" / "intensity_hat.csv")
daily = np.nansum(lam.values, axis=(0, 1)) * lam.grid.cell_area
print(f"\nfitted cases per day: min {daily.min():.1f}, max {daily.max():.1f}")

# minimal velocity on three days; units are metres per day
main(["velocity", "--input", str(out / "fit" / "intensity_hat.csv"), "-o", str(out / "vel"),
      "--times", "20,40,60"])
for n in (20, 40, 60):
    s = io.read_table_csv(out / "vel" / f"smin_{n:04d}.csv")["value"]
    print(f"day {n}: median minimal speed {np.nanmedian(s):.1f} m/day over {np.isfinite(s).sum()} cells")
print(f"\noutputs in {out}")
