import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochns.spectral import (
    Grid,
    SpectralField,
    bilinear_b,
    dealias,
    from_physical,
    inner,
    leray_project,
    load_snapshot,
    new_grid,
    norm_bundle,
    random_field,
    save_snapshot,
    single_mode,
    stokes_apply,
    taylor_green,
    to_physical,
    trilinear_form,
    zero_field,
)


def raw_mode(grid, k, vec):
    """Hermitian raw coefficient array holding a single real cosine mode along ``vec``."""
    n = grid.n_modes
    c = np.zeros((2, n, n), dtype=complex)
    c[:, k[0] % n, k[1] % n] += 0.5 * np.asarray(vec, dtype=float)
    c[:, -k[0] % n, -k[1] % n] += 0.5 * np.asarray(vec, dtype=float)
    return c


# ---------------------------------------------------------------- grid

def test_grid_cutoff_and_unit_for_standard_box():
    g = new_grid(32)
    assert g.dealias_cutoff == 10
    assert g.wavenumber_unit == pytest.approx(1.0, abs=1e-15)


def test_grid_unit_box():
    g = new_grid(4, 1.0)
    assert g.dealias_cutoff == 1
    assert g.wavenumber_unit == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("n, length", [(3, 1.0), (2, 1.0), (8, 0.0), (8, -1.0)])
def test_grid_rejects_bad_shapes(n, length):
    with pytest.raises(ValueError):
        new_grid(n, length)


def test_grids_compare_by_value():
    assert new_grid(16) == new_grid(16)
    assert new_grid(16) != new_grid(16, 1.0)


def test_fields_on_different_grids_do_not_mix():
    a = single_mode(new_grid(8), (1, 0))
    b = single_mode(new_grid(8, 1.0), (1, 0))
    with pytest.raises(ValueError):
        inner(a, b)


# ---------------------------------------------------------------- projection

def test_projection_removes_component_parallel_to_k():
    g = new_grid(8)
    u = leray_project(g, raw_mode(g, (1, 0), (1.0, 0.0)))
    assert np.all(u.coeffs == 0)


def test_projection_keeps_component_orthogonal_to_k():
    g = new_grid(8)
    raw = raw_mode(g, (1, 0), (0.0, 1.0))
    np.testing.assert_array_equal(leray_project(g, raw).coeffs, raw)


def test_projection_is_idempotent_on_random_fields():
    g = new_grid(16)
    u = random_field(g, np.random.default_rng(3))
    again = leray_project(g, u.coeffs)
    np.testing.assert_allclose(again.coeffs, u.coeffs, atol=1e-15)
    assert u.divergence_ratio() < 1e-14


def test_projection_zeroes_nyquist_and_mean():
    g = new_grid(8)
    raw = np.ones((2, 8, 8), dtype=complex)
    u = leray_project(g, raw)
    assert np.all(u.coeffs[:, 4, :] == 0) and np.all(u.coeffs[:, :, 4] == 0)
    assert np.all(u.coeffs[:, 0, 0] == 0)


def test_physical_round_trip_preserves_fields():
    g = new_grid(16)
    u = random_field(g, np.random.default_rng(0))
    back = from_physical(g, to_physical(u))
    np.testing.assert_allclose(back, u.coeffs, atol=1e-15)
    assert to_physical(u).dtype == np.float64


# ---------------------------------------------------------------- Stokes operator

def test_stokes_eigenvalue_on_mode_1_2():
    g = new_grid(8)
    u = single_mode(g, (1, 2), 0.7)
    np.testing.assert_allclose(stokes_apply(u).coeffs, 5 * u.coeffs, rtol=1e-14)


def test_stokes_eigenvalue_scales_with_box():
    g = new_grid(8, math.pi)
    u = single_mode(g, (3, 0))
    np.testing.assert_allclose(stokes_apply(u).coeffs, 36 * u.coeffs, rtol=1e-14)


def test_stokes_of_zero_is_zero():
    assert np.all(stokes_apply(zero_field(new_grid(8))).coeffs == 0)


# ---------------------------------------------------------------- nonlinearity

def test_b_vanishes_for_zero_argument():
    g = new_grid(16)
    v = random_field(g, np.random.default_rng(1))
    assert np.all(bilinear_b(zero_field(g), v).coeffs == 0)
    assert np.all(bilinear_b(v, zero_field(g)).coeffs == 0)


def test_b_vanishes_on_taylor_green():
    # the Taylor-Green vortex is a steady Euler flow: its advection is a pure gradient
    u = taylor_green(new_grid(16), 1.3)
    assert np.max(np.abs(bilinear_b(u, u).coeffs)) < 1e-14


def test_b_output_is_dealiased_and_divergence_free():
    g = new_grid(16)
    rng = np.random.default_rng(7)
    u = random_field(g, rng, decay=0.5)
    v = random_field(g, rng, decay=0.5)
    w = bilinear_b(u, v)
    assert np.all(w.coeffs[:, ~g.dealias_mask] == 0)
    assert w.divergence_ratio() < 1e-13


def test_b_matches_advective_form():
    # independent oracle: (u . grad) v evaluated by spectral derivatives in physical space
    g = new_grid(16)
    rng = np.random.default_rng(11)
    u = random_field(g, rng)
    v = random_field(g, rng)
    up = to_physical(u)
    dv = [to_physical(SpectralField(g, 1j * g.wavenumber_unit * kk * v.coeffs))
          for kk in (g.k1, g.k2)]
    adv = up[0] * dv[0] + up[1] * dv[1]
    expect = dealias(leray_project(g, from_physical(g, adv)))
    np.testing.assert_allclose(bilinear_b(u, v).coeffs, expect.coeffs, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_trilinear_antisymmetry_property(seed, decay):
    g = new_grid(16)
    rng = np.random.default_rng(seed)
    u, v, w = (random_field(g, rng, decay=decay) for _ in range(3))
    scale = norm_bundle(u).v * norm_bundle(v).v * norm_bundle(w).v
    assert abs(trilinear_form(u, v, w) + trilinear_form(u, w, v)) <= 1e-12 * scale
    au = stokes_apply(u)
    assert abs(trilinear_form(u, u, au)) <= 1e-12 * norm_bundle(u).v ** 2 * norm_bundle(au).v


def test_batched_b_matches_members():
    g = new_grid(8)
    u = random_field(g, np.random.default_rng(2), batch_shape=(3,))
    b = bilinear_b(u, u)
    for i in range(3):
        np.testing.assert_allclose(b.member(i).coeffs, bilinear_b(u.member(i), u.member(i)).coeffs,
                                   atol=1e-16)


# ---------------------------------------------------------------- norms

def test_single_mode_gradient_equals_l2_for_unit_wavevector():
    nb = norm_bundle(single_mode(new_grid(8), (1, 0)))
    assert nb.grad_l2 == pytest.approx(nb.l2, rel=1e-14)
    # amplitude 1 cosine on [0, 2 pi]^2: |u|^2 = (2 pi)^2 / 2
    assert nb.l2 ** 2 == pytest.approx(2 * math.pi ** 2, rel=1e-14)


def test_norms_of_zero_field_vanish():
    nb = norm_bundle(zero_field(new_grid(8)))
    for value in (nb.l2, nb.grad_l2, nb.v, nb.l4, nb.stokes_l2, nb.x_norm, nb.triple):
        assert value == 0


@pytest.mark.parametrize("amp, length", [(1.0, 2 * math.pi), (0.5, 2 * math.pi), (2.0, 3.0)])
def test_taylor_green_l2_closed_form(amp, length):
    # int_{[0,L]^2} sin^2(s x) cos^2(s y) = L^2 / 4 for each component
    nb = norm_bundle(taylor_green(new_grid(16, length), amp))
    assert nb.l2 ** 2 == pytest.approx(amp ** 2 * length ** 2 / 2, rel=1e-13)
    s = 2 * math.pi / length
    assert nb.grad_l2 ** 2 == pytest.approx(2 * s ** 2 * amp ** 2 * length ** 2 / 2, rel=1e-13)


def test_l4_norm_matches_quadrature_of_taylor_green():
    # |u|^2 = a^2 (sin^2 x cos^2 y + cos^2 x sin^2 y); int |u|^4 over [0, 2 pi]^2 = a^4 * 5 pi^2 / 4
    amp = 1.5
    nb = norm_bundle(taylor_green(new_grid(16), amp))
    assert nb.l4 ** 4 == pytest.approx(amp ** 4 * 5 * math.pi ** 2 / 4, rel=1e-12)


def test_inner_is_parseval():
    g = new_grid(16, 3.0)
    rng = np.random.default_rng(5)
    u, v = random_field(g, rng), random_field(g, rng)
    up, vp = to_physical(u), to_physical(v)
    quad = np.sum(up * vp) * (3.0 / 16) ** 2
    assert inner(u, v) == pytest.approx(quad, rel=1e-12)


def test_random_field_normalised_and_batched():
    g = new_grid(16)
    u = random_field(g, np.random.default_rng(0), amplitude=2.5, batch_shape=(4,))
    np.testing.assert_allclose(norm_bundle(u).l2, 2.5, rtol=1e-14)
    assert u.batch_shape == (4,)


def test_field_coefficients_are_read_only():
    u = single_mode(new_grid(8), (1, 1))
    with pytest.raises(ValueError):
        u.coeffs[0, 1, 1] = 3.0


# ---------------------------------------------------------------- snapshots

def test_snapshot_round_trip_bit_exact(tmp_path):
    g = new_grid(16, 2.5)
    u = random_field(g, np.random.default_rng(9))
    path = tmp_path / "u.sns2"
    save_snapshot(path, u)
    back = load_snapshot(path)
    assert back.grid == g
    assert back.coeffs.tobytes() == u.coeffs.tobytes()
    assert path.stat().st_size == 16 + 16 * 16 * 4 * 8


def test_snapshot_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"XXXX" + bytes(32))
    with pytest.raises(ValueError):
        load_snapshot(path)


def test_grid_is_hashable_value():
    assert len({Grid(8, 1.0), Grid(8, 1.0)}) == 1
