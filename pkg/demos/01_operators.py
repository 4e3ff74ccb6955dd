"""
Spectral operators on the periodic box
======================================

A tour of the Fourier representation: grids, the divergence-free
projection, the Stokes operator, the dealiased nonlinearity and the norms
used everywhere else in the package.
"""

import math

import numpy as np

from stochns import (
    bilinear_b, leray_project, new_grid, norm_bundle, random_field, single_mode,
    stokes_apply, taylor_green, to_physical, trilinear_form,
)

# a 32 x 32 grid on [0, 2 pi]^2; modes with |k_i| > 10 are removed after products
grid = new_grid(32)
print("cutoff", grid.dealias_cutoff, "unit", grid.wavenumber_unit)

# %% projection: the component of a mode parallel to its wavevector is removed
raw = np.zeros((2, 32, 32), dtype=complex)
raw[:, 1, 0] = raw[:, -1, 0] = [0.5, 0.5]          # mode k = (1, 0), direction (1, 1)
u = leray_project(grid, raw)
print("projected coefficient at k=(1,0):", u.coeffs[:, 1, 0])

# %% Stokes operator is diagonal with eigenvalue |k|^2 (2 pi / L)^2
m = single_mode(grid, (1, 2))
print("A applied to mode (1,2) multiplies by", (stokes_apply(m).coeffs[:, 1, 2] / m.coeffs[:, 1, 2]).real)

# %% the nonlinearity conserves energy: b(u, v, v) = 0 for divergence-free u
rng = np.random.default_rng(0)
u, v = random_field(grid, rng), random_field(grid, rng)
print("b(u,v,v) =", trilinear_form(u, v, v))
print("b(u,u,Au) =", trilinear_form(u, u, stokes_apply(u)))

# %% Taylor-Green is a steady Euler flow, so B(u, u) vanishes
tg = taylor_green(grid)
print("|B(tg, tg)| max coefficient:", np.abs(bilinear_b(tg, tg).coeffs).max())
nb = norm_bundle(tg)
print(f"|tg|_L2 = {nb.l2:.6f} (closed form pi*sqrt(2) = {math.pi * math.sqrt(2):.6f})")

# %% physical values of a field, e.g. for plotting
values = to_physical(tg)
print("velocity array on the collocation grid:", values.shape, "max speed",
      np.sqrt((values ** 2).sum(axis=0)).max())
