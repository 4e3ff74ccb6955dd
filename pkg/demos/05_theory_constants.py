"""
Rate constants, thresholds and interpolation constants
======================================================

Closed-form evaluation of the constants that enter the convergence
theorems, for the noise model of a concrete configuration.
"""

import math

from stochns import (
    AnalysisParams, build_noise_model, constants_table, estimate_gn_constant, euler_constants,
    new_grid, poincare_constant, splitting_constants,
)

grid = new_grid(32)
model = build_noise_model(grid, 1.0, 3.0)
c_bar = estimate_gn_constant(grid, n_samples=64, seed=0)   # a lower bound, not the constant
c_tilde = poincare_constant(grid)
print(f"interpolation constant estimate {c_bar:.4f} (single-mode value "
      f"{math.sqrt(3 / 8) / math.pi:.4f}), Poincare constant {c_tilde}")

p = AnalysisParams(viscosity=1.0, horizon=0.25, k0=model.k0, c_bar=c_bar, c_tilde=c_tilde)
for name, value, formula, regime in constants_table(p):
    print(f"{regime:26s} {name:24s} {value:12.5g}   {formula}")

# %% how the Euler exponent bound approaches 1/2 as viscosity grows
for nu in (1, 10, 100, 1000):
    q = AnalysisParams(viscosity=nu, horizon=1.0, k0=1.0)
    print(f"nu={nu:5d}  gamma_sup={euler_constants(q).gamma_sup:.6f}")

# %% the localization threshold grows like ln N, with a slow ln ln N correction
rc = splitting_constants(p, "linear_growth")
for n in (1e3, 1e6, 1e12, 1e24):
    print(f"N={n:.0e}  M(N)={float(rc.threshold_m_of_n(n)):.3f}  "
          f"M(N)/ln N={float(rc.threshold_m_of_n(n)) / math.log(n):.4f}  (limit {rc.threshold_leading:.4f})")
